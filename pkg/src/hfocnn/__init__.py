"""HFO vs non-HFO classification of scalp-EEG segments from time-frequency
images with a from-scratch CNN."""

__version__ = "0.1.0"

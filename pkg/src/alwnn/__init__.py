"""ALWNN: adaptive lifting-wavelet neural network for modulation classification."""

__version__ = "0.1.0"

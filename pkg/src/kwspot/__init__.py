"""kwspot: speech keyword spotting with MFCC features, a from-scratch
reverse-mode autodiff engine, and multi-layer attention models."""

__version__ = "0.1.0"

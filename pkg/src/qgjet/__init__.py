"""Desk-scale quark/gluon jet image classification pipeline."""

__version__ = "0.1.0"

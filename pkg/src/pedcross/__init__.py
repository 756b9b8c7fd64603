"""pedcross: virtual-to-real distillation for pedestrian crossing prediction.

The package trains a multi-modal teacher on procedurally generated driving
sequences and distills it into a lightweight bounding-box-only student that
is trained and evaluated on a domain-shifted distribution.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]

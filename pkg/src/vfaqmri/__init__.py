"""Joint T1, T2* and proton-density mapping from undersampled VFA multi-echo MRI."""

from .data import AcqParams, EchoStack, KSpaceSet, QuantMaps, default_acquisition

__version__ = "0.1.0"

__all__ = ["AcqParams", "EchoStack", "KSpaceSet", "QuantMaps", "default_acquisition", "__version__"]

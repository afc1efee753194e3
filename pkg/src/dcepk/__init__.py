"""DCE-MRI pharmacokinetic parameter estimation.

Tracer-kinetic forward models and voxelwise fitting, a numerical phantom,
and a small reverse-mode autodiff engine used to train a generator that
maps signal series to parameter maps and an arterial input function.
"""
from .core import (
    AcqParams, AuxMaps, ConfigError, DcePkError, DceSeries, PkMap, PlasmaCurve, TkModel,
)
from .fitting import FitConfig, fit_curve, fit_volume
from .kernels import BACKEND as KERNEL_BACKEND
from .phantom import PhantomConfig, generate_phantom, generate_phantom_set
from .physics import concentration_to_signal, forward_operator, signal_to_concentration, tissue_concentration

__version__ = "0.1.0"

__all__ = [
    "AcqParams", "AuxMaps", "ConfigError", "DcePkError", "DceSeries", "FitConfig", "KERNEL_BACKEND", "PhantomConfig",
    "PkMap", "PlasmaCurve", "TkModel", "concentration_to_signal", "fit_curve", "fit_volume", "forward_operator",
    "generate_phantom", "generate_phantom_set", "signal_to_concentration", "tissue_concentration",
]

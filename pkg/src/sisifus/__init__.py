"""sisifus: single-sample image fusion upsampling for lifetime images.

Fuses a low-resolution lifetime image with a co-registered high-resolution
intensity image.  Statistically generated local and global priors feed a
TV-regularized inverse solver that keeps the result consistent with the
measured samples.
"""

from .core import Datacube, Plane, SamplingMap, integrate_time
from .fileio import read_datacube, read_plane, write_datacube, write_plane
from .global_prior import (
    GlobalPriorResult,
    TrainedPredictor,
    predict_global_prior,
    select_median_prior,
    train_global_prior,
    train_predictor,
)
from .lifetime import FitConfig, fit_lifetime
from .local_prior import (
    LocalPriorConfig,
    WindowFunction,
    fit_window,
    generate_local_prior,
    sweep_local_configs,
)
from .metrics import mae, psnr, ssim
from .patches import GlobalPriorConfig, PatchSet, augment, extract_patches
from .phantom import (
    Blob,
    Fluorophore,
    PhantomScene,
    Ridge,
    concentration_field,
    generate_datacube,
    generate_scene,
    make_preset,
)
from .render import clahe, composite, save_png
from .sampling import bilinear_upsample, decimate, decimate_adjoint
from .solver import (
    ReconstructionConfig,
    ReconstructionResult,
    reconstruct,
    shrink,
    tv_adjoint,
    tv_forward,
)

__version__ = "0.1.0"

__all__ = [
    "Blob",
    "Datacube",
    "FitConfig",
    "Fluorophore",
    "GlobalPriorConfig",
    "GlobalPriorResult",
    "LocalPriorConfig",
    "PatchSet",
    "PhantomScene",
    "Plane",
    "ReconstructionConfig",
    "ReconstructionResult",
    "Ridge",
    "SamplingMap",
    "TrainedPredictor",
    "WindowFunction",
    "augment",
    "bilinear_upsample",
    "clahe",
    "composite",
    "concentration_field",
    "decimate",
    "decimate_adjoint",
    "extract_patches",
    "fit_lifetime",
    "fit_window",
    "generate_datacube",
    "generate_local_prior",
    "generate_scene",
    "integrate_time",
    "mae",
    "make_preset",
    "predict_global_prior",
    "psnr",
    "read_datacube",
    "read_plane",
    "reconstruct",
    "save_png",
    "select_median_prior",
    "shrink",
    "ssim",
    "sweep_local_configs",
    "train_global_prior",
    "train_predictor",
    "tv_adjoint",
    "tv_forward",
    "write_datacube",
    "write_plane",
    "__version__",
]

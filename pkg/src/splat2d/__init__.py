"""splat2d: image representation and compression with budgeted 2D Gaussian primitives."""

from .model import (
    GaussianCloud,
    TrainConfig,
    VARIANTS,
    covariance_entries,
    covariance_param_grads,
    is_psd,
    materialize_covariance,
)
from .rasterizer import RenderGradients, accumulated_weight, render, render_backward, render_naive

__version__ = "0.1.0"

__all__ = [
    "GaussianCloud",
    "TrainConfig",
    "VARIANTS",
    "covariance_entries",
    "covariance_param_grads",
    "is_psd",
    "materialize_covariance",
    "RenderGradients",
    "accumulated_weight",
    "render",
    "render_backward",
    "render_naive",
    "__version__",
]


def __getattr__(name):
    # heavier subsystems load on demand so `import splat2d` stays light
    if name in ("bitstream", "caf", "cli", "densify", "io", "metrics", "quantizer", "trainer"):
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

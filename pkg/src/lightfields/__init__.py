"""Conditional implicit surface light fields.

Learns neural functions mapping (surface point, view direction, light
configuration, shape/image codes) to RGB, trains them against an analytic
ray-traced oracle, and renders relit views and environment-map composites.
"""

from .autodiff import AdamConfig, ParameterStore, Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "ParameterStore",
    "AdamConfig",
    "SurfaceLightFieldModel",
    "ModelConfig",
    "LightConfig",
    "SurfaceLightFieldRegressor",
    "__version__",
]


def __getattr__(name):
    # Lazy re-exports keep `import lightfields` light; sklearn and friends
    # load only when the facade or model classes are touched.
    if name in ("SurfaceLightFieldModel", "ModelConfig", "LightConfig"):
        from . import nets

        return getattr(nets, name)
    if name == "SurfaceLightFieldRegressor":
        from .estimator import SurfaceLightFieldRegressor

        return SurfaceLightFieldRegressor
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

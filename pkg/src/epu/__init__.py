"""Interpretable additive ensembles of small CNNs over perceptual feature maps.

Submodules are imported lazily so the CLI can pin BLAS thread counts from the
environment before numpy loads.
"""

_SUBMODULES = (
    "cli",
    "config",
    "data",
    "errors",
    "interpret",
    "metrics",
    "model",
    "pfm",
    "tensor",
    "train",
)

__version__ = "0.1.0"


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))

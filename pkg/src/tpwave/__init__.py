"""Time-periodic solutions of variable-coefficient wave equations.

Submodules load on first access so that the command-line entry point can
set BLAS threading variables before numpy is imported.
"""
import importlib

__version__ = "0.1.0"

_SUBMODULES = ("grid", "coefficients", "liouville", "sturm_liouville", "spaces", "bifurcation",
               "linearized", "nash_moser", "resonance", "config", "verify", "cli")

__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

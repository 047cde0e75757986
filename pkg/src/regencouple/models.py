"""Built-in cycle models, addressable by name from configs."""

from __future__ import annotations

from .cycle_sim import CycleModel, CycleSumLaws, stopped_sum_from_laws
from .errors import ConfigError
from .laws import ConstantLaw, ExponentialLaw, GaussianLaw, PoissonLaw


def stopped_sum_lattice() -> CycleModel:
    """``tau ~ Exp(1)``, ``xi = tau/2 + Poisson(1)``: kappa=1.5, beta=0.5, alpha=-1, sigma^2=2."""
    laws = CycleSumLaws(ExponentialLaw(1.0), (PoissonLaw(1.0),), (0.5,))
    return stopped_sum_from_laws(laws, name="stopped_sum_lattice")


def degenerate() -> CycleModel:
    """``xi = tau ~ Exp(1)``: zero asymptotic variance."""
    laws = CycleSumLaws(ExponentialLaw(1.0), (ConstantLaw(0.0),), (1.0,))
    return stopped_sum_from_laws(laws, name="degenerate")


def gaussian_unit() -> CycleModel:
    """``xi ~ N(0, 1)`` independent of ``tau ~ Exp(1)``: kappa=0, sigma^2=1."""
    laws = CycleSumLaws(ExponentialLaw(1.0), (GaussianLaw(0.0, 1.0),), (0.0,))
    return stopped_sum_from_laws(laws, name="gaussian_unit")


def gaussian_pair() -> CycleModel:
    """Two-dimensional: ``xi = (tau + N(0,1), N(0, 4))`` with ``tau ~ Exp(1)``."""
    laws = CycleSumLaws(ExponentialLaw(1.0), (GaussianLaw(0.0, 1.0), GaussianLaw(0.0, 2.0)), (1.0, 0.0))
    return stopped_sum_from_laws(laws, name="gaussian_pair")


BUILTIN_MODELS = {
    "stopped_sum_lattice": stopped_sum_lattice,
    "degenerate": degenerate,
    "gaussian_unit": gaussian_unit,
    "gaussian_pair": gaussian_pair,
}


def builtin_model(name: str) -> CycleModel:
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise ConfigError(f"unknown built-in model {name!r}; known: {sorted(BUILTIN_MODELS)}", "model.builtin") from None

"""Cycle and moment types, and the asymptotic parameter algebra.

Given the first two moments of one regeneration cycle ``(xi, tau)`` this
module derives the drift ``kappa``, the asymptotic covariance ``sigma2``
and the auxiliary quantities (``beta``, ``v2``, ``gamma``, ``lambda``,
``alpha``) used by the coupling construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DegenerateTau, NonPSD

SYM_TOL = 1e-9
PINV_RCOND = 1e-12
VALIDATION_TOL = 1e-10


def _vec(x, d=None) -> np.ndarray:
    a = np.array(x, dtype=float).reshape(-1)
    if d is not None and a.shape != (d,):
        raise ValueError(f"expected a vector of length {d}, got shape {a.shape}")
    a.setflags(write=False)
    return a


def _mat(x, d=None) -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or (d is not None and a.shape[0] != d):
        raise ValueError(f"expected a square matrix of size {d}, got shape {a.shape}")
    a.setflags(write=False)
    return a


def _scale(m: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0


@dataclass(frozen=True, eq=False)
class CycleSample:
    """One regeneration cycle.

    ``path`` is an optional pair ``(offsets, values)`` of within-cycle
    samples of ``S(T_{k-1} + offset) - S(T_{k-1})``.
    """

    tau: float
    xi: np.ndarray
    eta: float
    path: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "eta", float(self.eta))
        xi = _vec(self.xi)
        object.__setattr__(self, "xi", xi)
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.eta < np.max(np.abs(xi)) - 1e-12 * _scale(xi):
            raise ValueError("eta must bound |xi| in max-norm")
        if self.path is not None:
            offsets = _vec(self.path[0])
            values = np.array(self.path[1], dtype=float).reshape(len(offsets), xi.size)
            values.setflags(write=False)
            if offsets.size == 0 or np.any(offsets <= 0) or np.any(offsets > self.tau):
                raise ValueError("path offsets must lie in (0, tau]")
            if np.any(np.diff(offsets) < 0):
                raise ValueError("path offsets must be ordered")
            if not np.allclose(values[-1], xi, rtol=1e-12, atol=1e-12):
                raise ValueError("last path value must equal xi")
            object.__setattr__(self, "path", (offsets, values))

    @property
    def d(self) -> int:
        return self.xi.size


@dataclass(frozen=True, eq=False)
class CycleMoments:
    d: int
    mean_xi: np.ndarray
    mean_tau: float
    cov_xi: np.ndarray
    var_tau: float
    cov_xi_tau: np.ndarray
    n_samples: int = 0

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise ValueError("d must be a positive integer")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mean_xi", _vec(self.mean_xi, d))
        object.__setattr__(self, "cov_xi", _mat(self.cov_xi, d))
        object.__setattr__(self, "cov_xi_tau", _vec(self.cov_xi_tau, d))
        object.__setattr__(self, "mean_tau", float(self.mean_tau))
        object.__setattr__(self, "var_tau", float(self.var_tau))
        object.__setattr__(self, "n_samples", int(self.n_samples))

    def joint_cov(self) -> np.ndarray:
        """Covariance matrix of the (d+1)-vector ``(xi, tau)``."""
        d = self.d
        c = np.empty((d + 1, d + 1))
        c[:d, :d] = self.cov_xi
        c[:d, d] = c[d, :d] = self.cov_xi_tau
        c[d, d] = self.var_tau
        return c

    def to_dict(self) -> dict[str, Any]:
        return {
            "d": self.d,
            "mean_xi": self.mean_xi.tolist(),
            "mean_tau": self.mean_tau,
            "cov_xi": self.cov_xi.tolist(),
            "var_tau": self.var_tau,
            "cov_xi_tau": self.cov_xi_tau.tolist(),
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "CycleMoments":
        return cls(**{k: doc[k] for k in ("d", "mean_xi", "mean_tau", "cov_xi", "var_tau", "cov_xi_tau")},
                   n_samples=doc.get("n_samples", 0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CycleMoments":
        return cls.from_dict(json.loads(text))


_PARAM_VECTORS = ("kappa", "beta", "alpha")
_PARAM_MATRICES = ("sigma2", "sigma", "sigma_pinv", "v2", "v")


@dataclass(frozen=True, eq=False)
class AsymptoticParams:
    mu: float
    kappa: np.ndarray
    sigma2: np.ndarray
    sigma: np.ndarray
    sigma_pinv: np.ndarray
    beta: np.ndarray
    v2: np.ndarray
    v: np.ndarray
    gamma: float
    lambda_: float
    alpha: np.ndarray

    def __post_init__(self):
        for name in _PARAM_VECTORS:
            object.__setattr__(self, name, _vec(getattr(self, name)))
        for name in _PARAM_MATRICES:
            object.__setattr__(self, name, _mat(getattr(self, name)))
        for name in ("mu", "gamma", "lambda_"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def d(self) -> int:
        return self.kappa.size

    @property
    def sd_tau(self) -> float:
        """``sqrt(Var(tau_1))``, recovered as ``sqrt(gamma * mu)``."""
        return float(np.sqrt(self.gamma * self.mu))

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"mu": self.mu, "gamma": self.gamma, "lambda": self.lambda_}
        for name in _PARAM_VECTORS + _PARAM_MATRICES:
            doc[name] = getattr(self, name).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "AsymptoticParams":
        kw = {k: doc[k] for k in _PARAM_VECTORS + _PARAM_MATRICES + ("mu", "gamma")}
        return cls(lambda_=doc["lambda"], **kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AsymptoticParams":
        return cls.from_dict(json.loads(text))


def _check_symmetric(m: np.ndarray) -> None:
    if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL * _scale(m):
        raise NonPSD("matrix is not symmetric")


def psd_sqrt(m) -> np.ndarray:
    """Symmetric PSD square root of a symmetric PSD matrix.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything more
    negative raises :class:`NonPSD`.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    _check_symmetric(m)
    w, q = np.linalg.eigh((m + m.T) / 2)
    if w.size and w.min() < -SYM_TOL * max(1.0, float(np.abs(w).max())):
        raise NonPSD(f"smallest eigenvalue {w.min():.3e} is negative")
    r = (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T
    return (r + r.T) / 2


def pseudo_inverse(m) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``1e-12 * s_max`` are treated as zero, so the
    zero matrix maps to the zero matrix.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    u, s, vt = np.linalg.svd(m)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(m.T.shape)
    keep = s > PINV_RCOND * s[0]
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (vt.T[:, : s.size] * inv) @ u[:, : s.size].T


def derive_asymptotics(m: CycleMoments) -> AsymptoticParams:
    """Compute the asymptotic parameters from cycle moments.

    Raises
    ------
    DegenerateTau
        If ``Var(tau_1) == 0``; that case reduces to plain i.i.d. sums.
    NonPSD
        If the joint covariance of ``(xi, tau)`` is not PSD.
    """
    if not m.mean_tau > 0:
        raise ValueError("mean_tau must be positive")
    if m.var_tau < 0:
        raise NonPSD("var_tau is negative")
    if m.var_tau == 0:
        raise DegenerateTau("Var(tau_1) = 0: use the i.i.d. sum path")
    joint = m.joint_cov()
    _check_symmetric(joint)
    w = np.linalg.eigvalsh((joint + joint.T) / 2)
    if w.min() < -SYM_TOL * max(1.0, float(np.abs(w).max())):
        raise NonPSD(f"joint covariance of (xi, tau) has eigenvalue {w.min():.3e}")

    mu = m.mean_tau
    c = m.cov_xi_tau
    kappa = m.mean_xi / mu
    # Var(xi - kappa tau), written out symmetrically
    var_centered = m.cov_xi - np.outer(c, kappa) - np.outer(kappa, c) + np.outer(kappa, kappa) * m.var_tau
    sigma2 = (var_centered + var_centered.T) / (2 * mu)
    beta = c / m.var_tau
    v2 = m.cov_xi - np.outer(c, c) / m.var_tau
    v2 = (v2 + v2.T) / 2
    sigma = psd_sqrt(sigma2)
    return AsymptoticParams(
        mu=mu,
        kappa=kappa,
        sigma2=sigma2,
        sigma=sigma,
        sigma_pinv=pseudo_inverse(sigma),
        beta=beta,
        v2=v2,
        v=psd_sqrt(v2),
        gamma=m.var_tau / mu,
        lambda_=mu**2 / m.var_tau,
        alpha=beta - kappa,
    )


@dataclass
class ValidationEntry:
    name: str
    residual: float
    passed: bool


@dataclass
class ValidationReport:
    tolerance: float
    entries: list[ValidationEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def residual(self, name: str) -> float:
        for e in self.entries:
            if e.name == name:
                return e.residual
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "entries": [{"name": e.name, "residual": e.residual, "passed": e.passed} for e in self.entries],
        }


def validate_params(p: AsymptoticParams, m: CycleMoments, tol: float = VALIDATION_TOL) -> ValidationReport:
    """Check the identities the coupling relies on; failures are entries, not errors."""
    proj = p.sigma @ p.sigma_pinv
    residuals = {
        # cov(xi_i - beta_i tau, tau) = cov(xi_i, tau) - beta_i Var(tau)
        "beta_orthogonality": np.max(np.abs(m.cov_xi_tau - p.beta * m.var_tau)),
        "sigma_projection_v": np.max(np.abs(proj @ p.v - p.v)),
        "sigma_projection_alpha": np.max(np.abs(proj @ p.alpha - p.alpha)),
        "lambda_gamma_mu": abs(p.lambda_ * p.gamma - p.mu),
    }
    report = ValidationReport(tolerance=tol)
    for name, r in residuals.items():
        r = float(r)
        report.entries.append(ValidationEntry(name, r, bool(r < tol)))
    return report

"""Diffusion model abstraction and the built-in example models.

A model is the pair of coefficient functions of

    dX_t = b(alpha, X_t) dt + eps * sigma(beta, X_t) dB_t

together with the derivatives the estimators need. Every coefficient
function takes ``(param, x)`` with 1-D float arrays and returns a new array.

Built-in models are compiled with numba so that the flow integrator can run
as native code; user models may be plain Python callables, in which case the
integrator falls back to interpreted execution of the same kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import numba
from numba.core.dispatcher import Dispatcher

from .errors import ConfigError

# State floor for CIR x, two-factor R and SIR (s, i).
DELTA_POS = 1e-8
RHO_MAX = 0.99

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned compact parameter set ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError(f"box bounds must be 1-D of equal length, got {lo.shape} and {hi.shape}")
        if not np.all(lo < hi):
            raise ConfigError(f"box requires lower < upper in every coordinate, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def concat(self, other: "ParamBox") -> "ParamBox":
        return ParamBox(np.concatenate([self.lower, other.lower]), np.concatenate([self.upper, other.upper]))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "ParamBox":
        """Build from ``[[lo_1, hi_1], [lo_2, hi_2], ...]``."""
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigError("box must be a list of [lower, upper] pairs")
        return cls(arr[:, 0], arr[:, 1])

    def to_pairs(self) -> list:
        return [[float(lo), float(hi)] for lo, hi in zip(self.lower, self.upper)]


@dataclass(frozen=True)
class LinkSpec:
    """Prior knowledge tying the diffusion parameter to the drift parameter.

    ``kind`` is one of ``free_beta``, ``beta_equals_f_alpha`` or
    ``multiplicative``. For the multiplicative kind ``Sigma(beta, x) =
    f_scalar(beta) * sigma0(x)``; ``beta_ref`` is any admissible beta used to
    build the unscaled covariance ``S_k^{alpha,0}`` as ``S_k^{alpha,beta_ref} /
    f_scalar(beta_ref)``.
    """

    kind: str = "free_beta"
    f: Optional[Callable[[np.ndarray], np.ndarray]] = None
    f_scalar: Optional[Callable[[np.ndarray], float]] = None
    sigma0: Optional[Callable[[np.ndarray], np.ndarray]] = None
    beta_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("free_beta", "beta_equals_f_alpha", "multiplicative"):
            raise ConfigError(f"unknown link kind {self.kind!r}")
        if self.kind == "beta_equals_f_alpha" and self.f is None:
            raise ConfigError("beta_equals_f_alpha link needs f")
        if self.kind == "multiplicative" and (self.f_scalar is None or self.sigma0 is None):
            raise ConfigError("multiplicative link needs f_scalar and sigma0")

    @classmethod
    def free(cls) -> "LinkSpec":
        return cls("free_beta")

    @classmethod
    def identity(cls) -> "LinkSpec":
        return cls("beta_equals_f_alpha", f=lambda alpha: np.asarray(alpha, dtype=float).copy())

    @classmethod
    def fixed(cls, beta0) -> "LinkSpec":
        """beta known and equal to ``beta0`` whatever alpha is."""
        beta0 = np.atleast_1d(np.asarray(beta0, dtype=float)).copy()
        return cls("beta_equals_f_alpha", f=lambda alpha: beta0.copy())

    def beta_of(self, alpha) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.f(np.asarray(alpha, dtype=float)), dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """A p-dimensional small-noise diffusion with its derivatives.

    Use :func:`make_model` to build one from user functions; missing
    derivatives are filled in by central finite differences.
    """

    name: str
    p: int
    a: int
    b: int
    drift: ArrayFn
    drift_jac_x: ArrayFn
    drift_grad_alpha: ArrayFn
    sigma: ArrayFn
    big_sigma: ArrayFn
    big_sigma_grad_beta: ArrayFn
    domain_guard: Callable[[np.ndarray], np.ndarray]
    alpha_names: tuple = ()
    beta_names: tuple = ()
    link: LinkSpec = field(default_factory=LinkSpec.free)
    state_names: tuple = ()

    @property
    def jit(self) -> bool:
        fns = (self.drift, self.drift_jac_x, self.drift_grad_alpha, self.big_sigma, self.domain_guard)
        return all(isinstance(fn, Dispatcher) for fn in fns)

    def guard(self, x) -> np.ndarray:
        return self.domain_guard(np.asarray(x, dtype=float))


def fd_step(v: np.ndarray) -> np.ndarray:
    return 1e-6 * (1.0 + np.abs(v))


def _fd_jac_x(drift: ArrayFn) -> ArrayFn:
    def jac(alpha, x):
        x = np.asarray(x, dtype=float)
        h = fd_step(x)
        cols = []
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = h[j]
            cols.append((np.asarray(drift(alpha, x + e)) - np.asarray(drift(alpha, x - e))) / (2 * h[j]))
        return np.column_stack(cols)

    return jac


def _fd_grad_alpha(drift: ArrayFn) -> ArrayFn:
    def grad(alpha, x):
        alpha = np.asarray(alpha, dtype=float)
        h = fd_step(alpha)
        cols = []
        for i in range(alpha.size):
            e = np.zeros_like(alpha)
            e[i] = h[i]
            cols.append((np.asarray(drift(alpha + e, x)) - np.asarray(drift(alpha - e, x))) / (2 * h[i]))
        return np.column_stack(cols)

    return grad


def _fd_sigma_grad(big_sigma: ArrayFn) -> ArrayFn:
    def grad(beta, x):
        beta = np.asarray(beta, dtype=float)
        h = fd_step(beta)
        out = []
        for i in range(beta.size):
            e = np.zeros_like(beta)
            e[i] = h[i]
            out.append((np.asarray(big_sigma(beta + e, x)) - np.asarray(big_sigma(beta - e, x))) / (2 * h[i]))
        return np.array(out)

    return grad


def make_model(
    name: str,
    p: int,
    a: int,
    b: int,
    drift: ArrayFn,
    sigma: Optional[ArrayFn] = None,
    big_sigma: Optional[ArrayFn] = None,
    drift_jac_x: Optional[ArrayFn] = None,
    drift_grad_alpha: Optional[ArrayFn] = None,
    big_sigma_grad_beta: Optional[ArrayFn] = None,
    domain_guard: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    alpha_names: Sequence[str] = (),
    beta_names: Sequence[str] = (),
    link: Optional[LinkSpec] = None,
    state_names: Sequence[str] = (),
) -> ModelSpec:
    """Register a user model; at least one of ``sigma``/``big_sigma`` is required."""
    if sigma is None and big_sigma is None:
        raise ConfigError("model needs sigma or big_sigma")
    if big_sigma is None:
        def big_sigma(beta, x, _s=sigma):
            s = np.asarray(_s(beta, x), dtype=float)
            return s @ s.T
    if sigma is None:
        def sigma(beta, x, _S=big_sigma):
            return np.linalg.cholesky(np.asarray(_S(beta, x), dtype=float))
    if domain_guard is None:
        def domain_guard(x):
            return np.array(x, dtype=float)
    return ModelSpec(
        name=name,
        p=p,
        a=a,
        b=b,
        drift=drift,
        drift_jac_x=drift_jac_x or _fd_jac_x(drift),
        drift_grad_alpha=drift_grad_alpha or _fd_grad_alpha(drift),
        sigma=sigma,
        big_sigma=big_sigma,
        big_sigma_grad_beta=big_sigma_grad_beta or _fd_sigma_grad(big_sigma),
        domain_guard=domain_guard,
        alpha_names=tuple(alpha_names) or tuple(f"alpha{i + 1}" for i in range(a)),
        beta_names=tuple(beta_names) or tuple(f"beta{i + 1}" for i in range(b)),
        link=link or LinkSpec.free(),
        state_names=tuple(state_names) or tuple(f"x{i + 1}" for i in range(p)),
    )


# --- Ornstein-Uhlenbeck: dX = alpha X dt + eps beta dB ----------------------

@numba.njit(cache=True)
def _ou_drift(alpha, x):
    return alpha[0] * x


@numba.njit(cache=True)
def _ou_jac(alpha, x):
    out = np.empty((1, 1))
    out[0, 0] = alpha[0]
    return out


@numba.njit(cache=True)
def _ou_grad(alpha, x):
    out = np.empty((1, 1))
    out[0, 0] = x[0]
    return out


@numba.njit(cache=True)
def _ou_sigma(beta, x):
    out = np.empty((1, 1))
    out[0, 0] = beta[0]
    return out


@numba.njit(cache=True)
def _ou_big_sigma(beta, x):
    out = np.empty((1, 1))
    out[0, 0] = beta[0] * beta[0]
    return out


@numba.njit(cache=True)
def _ou_sigma_grad(beta, x):
    out = np.empty((1, 1, 1))
    out[0, 0, 0] = 2.0 * beta[0]
    return out


@numba.njit(cache=True)
def _identity_guard(x):
    return x.copy()


# --- CIR: dX = alpha X dt + eps beta sqrt(X) dB -----------------------------

@numba.njit(cache=True)
def _cir_guard(x):
    out = x.copy()
    if out[0] < DELTA_POS:
        out[0] = DELTA_POS
    return out


@numba.njit(cache=True)
def _cir_sigma(beta, x):
    out = np.empty((1, 1))
    out[0, 0] = beta[0] * np.sqrt(max(x[0], 0.0))
    return out


@numba.njit(cache=True)
def _cir_big_sigma(beta, x):
    out = np.empty((1, 1))
    out[0, 0] = beta[0] * beta[0] * x[0]
    return out


@numba.njit(cache=True)
def _cir_sigma_grad(beta, x):
    out = np.empty((1, 1, 1))
    out[0, 0, 0] = 2.0 * beta[0] * x[0]
    return out


# --- Two-factor model, state (y, R), alpha=(mu1, mu2, m), beta=(k1^2, k2^2, rho)

@numba.njit(cache=True)
def _tf_drift(alpha, x):
    out = np.empty(2)
    out[0] = x[1] + alpha[0]
    out[1] = alpha[1] * (alpha[2] - x[1])
    return out


@numba.njit(cache=True)
def _tf_jac(alpha, x):
    out = np.zeros((2, 2))
    out[0, 1] = 1.0
    out[1, 1] = -alpha[1]
    return out


@numba.njit(cache=True)
def _tf_grad(alpha, x):
    out = np.zeros((2, 3))
    out[0, 0] = 1.0
    out[1, 1] = alpha[2] - x[1]
    out[1, 2] = alpha[1]
    return out


@numba.njit(cache=True)
def _tf_params(beta):
    k1s = max(beta[0], DELTA_POS)
    k2s = max(beta[1], DELTA_POS)
    rho = min(max(beta[2], -RHO_MAX), RHO_MAX)
    return k1s, k2s, rho


@numba.njit(cache=True)
def _tf_guard(x):
    out = x.copy()
    if out[1] < DELTA_POS:
        out[1] = DELTA_POS
    return out


@numba.njit(cache=True)
def _tf_sigma(beta, x):
    k1s, k2s, rho = _tf_params(beta)
    sr = np.sqrt(max(x[1], 0.0))
    out = np.zeros((2, 2))
    out[0, 0] = np.sqrt(k1s)
    out[1, 0] = np.sqrt(k2s) * sr * rho
    out[1, 1] = np.sqrt(k2s) * sr * np.sqrt(1.0 - rho * rho)
    return out


@numba.njit(cache=True)
def _tf_big_sigma(beta, x):
    k1s, k2s, rho = _tf_params(beta)
    r = x[1]
    out = np.empty((2, 2))
    out[0, 0] = k1s
    out[0, 1] = np.sqrt(k1s * k2s) * rho * np.sqrt(max(r, 0.0))
    out[1, 0] = out[0, 1]
    out[1, 1] = k2s * r
    return out


@numba.njit(cache=True)
def _tf_sigma_grad(beta, x):
    k1s, k2s, rho = _tf_params(beta)
    sr = np.sqrt(max(x[1], 0.0))
    k1 = np.sqrt(k1s)
    k2 = np.sqrt(k2s)
    out = np.zeros((3, 2, 2))
    out[0, 0, 0] = 1.0
    out[0, 0, 1] = out[0, 1, 0] = 0.5 * k2 / k1 * rho * sr
    out[1, 0, 1] = out[1, 1, 0] = 0.5 * k1 / k2 * rho * sr
    out[1, 1, 1] = x[1]
    out[2, 0, 1] = out[2, 1, 0] = k1 * k2 * sr
    return out


# --- SIR diffusion, state (s, i), alpha = beta = (lambda, gamma) ------------

@numba.njit(cache=True)
def _sir_drift(alpha, x):
    si = alpha[0] * x[0] * x[1]
    out = np.empty(2)
    out[0] = -si
    out[1] = si - alpha[1] * x[1]
    return out


@numba.njit(cache=True)
def _sir_jac(alpha, x):
    out = np.empty((2, 2))
    out[0, 0] = -alpha[0] * x[1]
    out[0, 1] = -alpha[0] * x[0]
    out[1, 0] = alpha[0] * x[1]
    out[1, 1] = alpha[0] * x[0] - alpha[1]
    return out


@numba.njit(cache=True)
def _sir_grad(alpha, x):
    out = np.empty((2, 2))
    out[0, 0] = -x[0] * x[1]
    out[0, 1] = 0.0
    out[1, 0] = x[0] * x[1]
    out[1, 1] = -x[1]
    return out


@numba.njit(cache=True)
def _sir_guard(x):
    out = x.copy()
    for j in range(2):
        out[j] = min(max(out[j], DELTA_POS), 1.0)
    return out


@numba.njit(cache=True)
def _sir_sigma(beta, x):
    inf = np.sqrt(max(beta[0] * x[0] * x[1], 0.0))
    rec = np.sqrt(max(beta[1] * x[1], 0.0))
    out = np.zeros((2, 2))
    out[0, 0] = inf
    out[1, 0] = -inf
    out[1, 1] = rec
    return out


@numba.njit(cache=True)
def _sir_big_sigma(beta, x):
    inf = beta[0] * x[0] * x[1]
    out = np.empty((2, 2))
    out[0, 0] = inf
    out[0, 1] = -inf
    out[1, 0] = -inf
    out[1, 1] = inf + beta[1] * x[1]
    return out


@numba.njit(cache=True)
def _sir_sigma_grad(beta, x):
    si = x[0] * x[1]
    out = np.zeros((2, 2, 2))
    out[0, 0, 0] = si
    out[0, 0, 1] = -si
    out[0, 1, 0] = -si
    out[0, 1, 1] = si
    out[1, 1, 1] = x[1]
    return out


@numba.njit(cache=True)
def _unit_sigma0(x):
    return np.ones((1, 1))


@numba.njit(cache=True)
def _cir_sigma0(x):
    out = np.empty((1, 1))
    out[0, 0] = x[0]
    return out


def _beta_squared(beta) -> float:
    return float(np.asarray(beta, dtype=float)[0] ** 2)


def builtin_ou() -> ModelSpec:
    return ModelSpec(
        name="ou", p=1, a=1, b=1,
        drift=_ou_drift, drift_jac_x=_ou_jac, drift_grad_alpha=_ou_grad,
        sigma=_ou_sigma, big_sigma=_ou_big_sigma, big_sigma_grad_beta=_ou_sigma_grad,
        domain_guard=_identity_guard,
        alpha_names=("alpha",), beta_names=("beta",), state_names=("x1",),
        link=LinkSpec("multiplicative", f_scalar=_beta_squared, sigma0=_unit_sigma0, beta_ref=np.array([1.0])),
    )


def builtin_cir() -> ModelSpec:
    return ModelSpec(
        name="cir", p=1, a=1, b=1,
        drift=_ou_drift, drift_jac_x=_ou_jac, drift_grad_alpha=_ou_grad,
        sigma=_cir_sigma, big_sigma=_cir_big_sigma, big_sigma_grad_beta=_cir_sigma_grad,
        domain_guard=_cir_guard,
        alpha_names=("alpha",), beta_names=("beta",), state_names=("x1",),
        link=LinkSpec("multiplicative", f_scalar=_beta_squared, sigma0=_cir_sigma0, beta_ref=np.array([1.0])),
    )


def builtin_two_factor() -> ModelSpec:
    return ModelSpec(
        name="two_factor", p=2, a=3, b=3,
        drift=_tf_drift, drift_jac_x=_tf_jac, drift_grad_alpha=_tf_grad,
        sigma=_tf_sigma, big_sigma=_tf_big_sigma, big_sigma_grad_beta=_tf_sigma_grad,
        domain_guard=_tf_guard,
        alpha_names=("mu1", "mu2", "m"), beta_names=("kappa1_sq", "kappa2_sq", "rho"),
        state_names=("y", "R"),
        link=LinkSpec.free(),
    )


def builtin_sir() -> ModelSpec:
    return ModelSpec(
        name="sir", p=2, a=2, b=2,
        drift=_sir_drift, drift_jac_x=_sir_jac, drift_grad_alpha=_sir_grad,
        sigma=_sir_sigma, big_sigma=_sir_big_sigma, big_sigma_grad_beta=_sir_sigma_grad,
        domain_guard=_sir_guard,
        alpha_names=("lambda", "gamma"), beta_names=("lambda_sigma", "gamma_sigma"),
        state_names=("s", "i"),
        link=LinkSpec.identity(),
    )


BUILTIN_MODELS = {
    "ou": builtin_ou,
    "cir": builtin_cir,
    "two_factor": builtin_two_factor,
    "sir": builtin_sir,
}


def get_model(model_id: str) -> ModelSpec:
    try:
        return BUILTIN_MODELS[model_id]()
    except KeyError:
        raise ConfigError(f"unknown model id {model_id!r}; expected one of {sorted(BUILTIN_MODELS)}") from None

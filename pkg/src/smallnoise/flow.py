"""Deterministic skeleton of the diffusion along a sampling grid.

For one parameter value this integrates, interval by interval,

* the ODE solution ``x_alpha(t_k)``,
* the resolvent ``Phi_alpha(t_k, t_{k-1})`` of the linearized flow,
* the one-step covariance ``S_k``, obtained from the Lyapunov equation
  ``V' = J V + V J^T + Sigma(beta, x)``, ``V(t_{k-1}) = 0``, ``S_k = V(t_k)/Delta``,
* the sensitivities ``dx_alpha(t_k)/dalpha`` (forward variational equation)
  and ``dPhi/dalpha`` (central differences of the resolvent).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import STATUS_OK, kernels_for
from .errors import ConfigError, NonFiniteState, SingularCovariance
from .models import ModelSpec

DEFAULT_SUBSTEPS = 64
RIDGE_REL = 1e-10


@dataclass(frozen=True)
class SamplingGrid:
    """Observation times ``t_k = k * T / n`` for ``k = 0..n``."""

    T: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"grid horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"grid needs a positive integer number of intervals, got {self.n}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n", int(self.n))

    @property
    def delta(self) -> float:
        return self.T / self.n

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n + 1) * self.delta
        t[-1] = self.T
        return t


@dataclass(frozen=True)
class FlowSolution:
    """Per-interval deterministic quantities for one ``(alpha, beta)``.

    ``phi[k-1]`` and ``s_mats[k-1]`` refer to the interval ``[t_{k-1}, t_k]``;
    ``x`` and ``dx_dalpha`` are indexed by ``k = 0..n``. ``dphi_dalpha`` has
    shape ``(n, a, p, p)``.
    """

    grid: SamplingGrid
    alpha: np.ndarray
    beta: Optional[np.ndarray]
    x: np.ndarray
    phi: np.ndarray
    s_mats: Optional[np.ndarray] = None
    dx_dalpha: Optional[np.ndarray] = None
    dphi_dalpha: Optional[np.ndarray] = None


def _run(model, alpha, beta, x0, delta, n, substeps, want_cov, want_sens):
    kern = kernels_for(model)
    b = beta if beta is not None else np.zeros(max(model.b, 1))
    xs, phis, covs, dxs, status, k_fail = kern.flow(
        model.drift, model.drift_jac_x, model.drift_grad_alpha, model.big_sigma, model.domain_guard,
        *kern.ops, alpha, b, x0, float(delta), int(n), int(substeps), bool(want_cov), bool(want_sens),
    )
    if status != STATUS_OK:
        raise NonFiniteState(f"flow left the finite range on interval {k_fail + 1} at alpha={alpha}")
    return xs, phis, covs, dxs


def repair_spd(mats: np.ndarray) -> np.ndarray:
    """Check a stack of covariances is SPD, adding one relative ridge where needed."""
    try:
        np.linalg.cholesky(mats)
        return mats
    except np.linalg.LinAlgError:
        pass
    out = mats.copy()
    p = mats.shape[-1]
    for k in range(out.shape[0]):
        try:
            np.linalg.cholesky(out[k])
        except np.linalg.LinAlgError:
            lam = RIDGE_REL * abs(np.trace(out[k])) / p
            out[k] = out[k] + lam * np.eye(p)
            try:
                np.linalg.cholesky(out[k])
            except np.linalg.LinAlgError:
                raise SingularCovariance(f"S_{k + 1} is not positive definite after ridge repair") from None
    return out


def solve_flow(
    model: ModelSpec,
    alpha,
    beta,
    x0,
    grid: SamplingGrid,
    substeps: int = DEFAULT_SUBSTEPS,
    *,
    sensitivities: bool = True,
    check_spd: bool = True,
) -> FlowSolution:
    """Integrate the skeleton on ``grid`` with ``substeps`` RK4 steps per interval.

    Pass ``beta=None`` to skip the covariances ``S_k``.
    """
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if alpha.size != model.a:
        raise ConfigError(f"model {model.name} expects {model.a} drift parameters, got {alpha.size}")
    if x0.size != model.p:
        raise ConfigError(f"model {model.name} has state dimension {model.p}, got x0 of size {x0.size}")
    want_cov = beta is not None
    if want_cov:
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
    xs, phis, covs, dxs = _run(model, alpha, beta, x0, grid.delta, grid.n, substeps, want_cov, sensitivities)

    s_mats = None
    if want_cov:
        s_mats = covs / grid.delta
        if check_spd:
            s_mats = repair_spd(s_mats)

    dx_dalpha = dphi_dalpha = None
    if sensitivities:
        dx_dalpha = dxs
        dphi_dalpha = np.empty((grid.n, model.a, model.p, model.p))
        for i in range(model.a):
            h = 1e-5 * (1.0 + abs(alpha[i]))
            e = np.zeros_like(alpha)
            e[i] = h
            _, ph_plus, _, _ = _run(model, alpha + e, None, x0, grid.delta, grid.n, substeps, False, False)
            _, ph_minus, _, _ = _run(model, alpha - e, None, x0, grid.delta, grid.n, substeps, False, False)
            dphi_dalpha[:, i] = (ph_plus - ph_minus) / (2 * h)

    return FlowSolution(
        grid=grid, alpha=alpha, beta=beta, x=xs, phi=phis, s_mats=s_mats,
        dx_dalpha=dx_dalpha, dphi_dalpha=dphi_dalpha,
    )


def resolvent(model: ModelSpec, alpha, x_start, t0: float, t1: float, steps: int = DEFAULT_SUBSTEPS):
    """State and resolvent ``Phi_alpha(t1, t0)`` started from ``x_start`` at ``t0``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    x_start = np.atleast_1d(np.asarray(x_start, dtype=float))
    xs, phis, _, _ = _run(model, alpha, None, x_start, t1 - t0, 1, steps, False, False)
    return xs[1], phis[0]


def d_matrices(flow: FlowSolution, grid: SamplingGrid) -> np.ndarray:
    """``D_k`` of shape ``(n, p, a)``: ``(Phi_k dx(t_{k-1}) - dx(t_k)) / Delta``."""
    if flow.dx_dalpha is None:
        raise ConfigError("flow was solved without sensitivities")
    dx = flow.dx_dalpha
    return (np.einsum("kij,kja->kia", flow.phi, dx[:-1]) - dx[1:]) / grid.delta

"""One-step residuals and the contrast processes built on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import chol_quad, kernels_for
from .errors import ConfigError, SingularCovariance
from .flow import RIDGE_REL, FlowSolution, SamplingGrid
from .models import LinkSpec, ModelSpec

CONTRAST_KINDS = ("cls", "weighted_link", "weighted_multiplicative", "small_delta", "gaussian_loglik")


@dataclass(frozen=True)
class ObservedPath:
    """Observations ``obs[k] = X_{t_k}``, ``k = 0..n``, with known noise scale."""

    grid: SamplingGrid
    obs: np.ndarray
    epsilon: float

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.shape[0] != self.grid.n + 1:
            raise ConfigError(f"path has {obs.shape[0]} rows, grid needs n+1 = {self.grid.n + 1}")
        if not np.all(np.isfinite(obs)):
            raise ConfigError("path contains non-finite observations")
        if not (self.epsilon >= 0):
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def x0(self) -> np.ndarray:
        return self.obs[0]

    @property
    def p(self) -> int:
        return self.obs.shape[1]

    def subsample(self, n: int) -> "ObservedPath":
        """Keep every ``self.grid.n // n``-th observation."""
        if self.grid.n % n:
            raise ConfigError(f"cannot subsample a {self.grid.n}-interval path to {n} intervals")
        step = self.grid.n // n
        return ObservedPath(SamplingGrid(self.grid.T, n), self.obs[::step].copy(), self.epsilon)


def residuals(path: ObservedPath, flow: FlowSolution) -> np.ndarray:
    """``N_k = X_k - x(t_k) - Phi_k (X_{k-1} - x(t_{k-1}))``, shape ``(n, p)``."""
    dev = path.obs - flow.x
    return dev[1:] - np.einsum("kij,kj->ki", flow.phi, dev[:-1])


def _quad(S, N, what):
    quad, logdet, k_fail = chol_quad(np.ascontiguousarray(S), np.ascontiguousarray(N), RIDGE_REL)
    if k_fail >= 0:
        raise SingularCovariance(f"{what} {k_fail + 1} is not positive definite")
    return quad, logdet


def contrast_cls(path: ObservedPath, flow: FlowSolution) -> float:
    """Conditional least squares: ``(1/Delta) sum |N_k|^2``. Does not use beta."""
    N = residuals(path, flow)
    return float(np.sum(N * N) / path.grid.delta)


def weighting_mats(flow: FlowSolution, link: LinkSpec) -> np.ndarray:
    """Covariances used as weights, normalized for the multiplicative link."""
    if flow.s_mats is None:
        raise ConfigError("weighted contrast needs a flow solved with beta")
    if link.kind == "multiplicative":
        return flow.s_mats / float(link.f_scalar(flow.beta))
    if link.kind == "beta_equals_f_alpha":
        expected = link.beta_of(flow.alpha)
        if not np.allclose(expected, flow.beta, rtol=1e-12, atol=1e-12):
            raise ConfigError(f"flow built with beta={flow.beta}, link gives f(alpha)={expected}")
        return flow.s_mats
    raise ConfigError("weighted contrast needs a beta_equals_f_alpha or multiplicative link")


def contrast_weighted(path: ObservedPath, flow: FlowSolution, link: LinkSpec) -> float:
    """``(1/Delta) sum N_k^T S_k^{-1} N_k``.

    For ``beta_equals_f_alpha`` the flow must be built with ``beta = f(alpha)``.
    For ``multiplicative`` it may be built with any beta; the weights are
    rescaled to ``S_k^{alpha,0}``.
    """
    S = weighting_mats(flow, link)
    quad, _ = _quad(S, residuals(path, flow), "S_k")
    return quad / path.grid.delta


def sigma_at_observations(model: ModelSpec, beta, path: ObservedPath) -> np.ndarray:
    """``Sigma(beta, X_{t_{k-1}})`` at guarded observed states, ``k = 1..n``."""
    kern = kernels_for(model)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    return kern.sigma_stack(model.big_sigma, model.domain_guard, beta, np.ascontiguousarray(path.obs[:-1]))


def contrast_small_delta(path: ObservedPath, flow: FlowSolution, beta, model: ModelSpec) -> float:
    """``sum log det Sigma_k + (1/(eps^2 Delta)) sum N_k^T Sigma_k^{-1} N_k``.

    ``Sigma_k = Sigma(beta, X_{t_{k-1}})`` uses the observations, so the flow
    only needs ``x`` and ``phi``.
    """
    sig = sigma_at_observations(model, beta, path)
    quad, logdet = _quad(sig, residuals(path, flow), "Sigma at observation")
    return logdet + quad / (path.epsilon ** 2 * path.grid.delta)


def gaussian_loglik(path: ObservedPath, flow: FlowSolution) -> float:
    """Log-likelihood of the Gaussian approximation evaluated on the observed path."""
    if flow.s_mats is None:
        raise ConfigError("log-likelihood needs a flow solved with beta")
    quad, logdet = _quad(flow.s_mats, residuals(path, flow), "S_k")
    return -0.5 * logdet - quad / (2.0 * path.epsilon ** 2 * path.grid.delta)

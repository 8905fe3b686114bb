"""Minimum contrast estimators, information matrices and confidence intervals.

Estimator kinds:

``cls``
    conditional least squares in alpha, beta unknown; CI from ``J_Delta``.
``weighted_link``
    alpha only, weights ``S_k^{alpha, f(alpha)}``; CI from ``I_Delta``.
``weighted_multiplicative``
    alpha only, weights ``S_k^{alpha,0}`` for ``Sigma = f(beta) Sigma_0``;
    CI from ``I_Delta`` scaled by the fitted ``f(beta)``.
``small_delta``
    joint ``(alpha, beta)``; CIs from ``I_b`` (alpha) and ``I_sigma`` (beta).
``gaussian_loglik``
    joint maximum of the Gaussian approximation likelihood, or beta only
    when ``options.fix_alpha`` is given.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import simpson

from .contrasts import (
    CONTRAST_KINDS,
    ObservedPath,
    contrast_cls,
    contrast_small_delta,
    contrast_weighted,
    gaussian_loglik,
    residuals,
)
from .errors import ConfigError, NonFiniteState, SingularCovariance, SmallNoiseError
from .flow import DEFAULT_SUBSTEPS, FlowSolution, SamplingGrid, d_matrices, solve_flow
from .models import LinkSpec, ModelSpec, ParamBox
from .optimize import DEFAULT_MAX_STARTS, multistart_minimize

Z95 = 1.96
FINE_INTERVALS = 1000


@dataclass
class EstimatorOptions:
    substeps: int = DEFAULT_SUBSTEPS
    max_starts: int = DEFAULT_MAX_STARTS
    seed: int = 0
    max_iter: Optional[int] = None
    xtol: float = 1e-8
    ftol: float = 1e-12
    fix_alpha: Optional[np.ndarray] = None
    # beta used in J_Delta for ``cls``; profiled from the small-Delta contrast when absent
    beta_for_info: Optional[np.ndarray] = None
    compute_info: bool = True
    fine_intervals: int = FINE_INTERVALS


@dataclass
class EstimationResult:
    kind: str
    alpha_hat: np.ndarray
    beta_hat: Optional[np.ndarray]
    contrast_min: float
    info_matrix: Optional[np.ndarray] = None
    cov_matrix: Optional[np.ndarray] = None
    ci_95: list = field(default_factory=list)
    param_names: tuple = ()
    info_kind: str = ""
    optimizer: dict = field(default_factory=dict)

    @property
    def estimates(self) -> np.ndarray:
        if self.beta_hat is None:
            return np.asarray(self.alpha_hat, dtype=float)
        return np.concatenate([self.alpha_hat, self.beta_hat])

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else np.asarray(v, dtype=float).tolist()

        return {
            "kind": self.kind,
            "param_names": list(self.param_names),
            "alpha_hat": arr(self.alpha_hat),
            "beta_hat": arr(self.beta_hat),
            "contrast_min": float(self.contrast_min),
            "info_kind": self.info_kind,
            "info_matrix": arr(self.info_matrix),
            "cov_matrix": arr(self.cov_matrix),
            "ci_95": [None if ci is None else [float(ci[0]), float(ci[1])] for ci in self.ci_95],
            "optimizer": dict(self.optimizer),
        }


# --- information matrices ---------------------------------------------------

def fine_grid(T: float, n_fine: int = FINE_INTERVALS) -> SamplingGrid:
    return SamplingGrid(T, n_fine + (n_fine % 2))


def _fine_states(model, alpha, x0, grid_fine, substeps):
    flow = solve_flow(model, alpha, None, x0, grid_fine, substeps, sensitivities=False)
    return flow.x


def info_I_b(model: ModelSpec, alpha, beta, x0, grid_fine: SamplingGrid, substeps: int = 4) -> np.ndarray:
    """Continuous-observation Fisher information for alpha.

    Composite Simpson quadrature of ``db/dalpha^T Sigma^{-1} db/dalpha`` along
    ``x_alpha`` on ``grid_fine``.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    xs = _fine_states(model, alpha, x0, grid_fine, substeps)
    vals = np.empty((xs.shape[0], model.a, model.a))
    for k, x in enumerate(xs):
        G = np.asarray(model.drift_grad_alpha(alpha, x))
        S = np.asarray(model.big_sigma(beta, model.domain_guard(x)))
        try:
            vals[k] = G.T @ np.linalg.solve(S, G)
        except np.linalg.LinAlgError:
            raise SingularCovariance(f"Sigma singular at t={grid_fine.times[k]}") from None
    out = simpson(vals, x=grid_fine.times, axis=0)
    return 0.5 * (out + out.T)


def info_I_sigma(model: ModelSpec, alpha, beta, x0, grid_fine: SamplingGrid, substeps: int = 4) -> np.ndarray:
    """``(1/2T) int tr(dSigma_i Sigma^{-1} dSigma_j Sigma^{-1}) dt`` along ``x_alpha``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    xs = _fine_states(model, alpha, x0, grid_fine, substeps)
    vals = np.empty((xs.shape[0], model.b, model.b))
    for k, x in enumerate(xs):
        xg = model.domain_guard(x)
        S = np.asarray(model.big_sigma(beta, xg))
        dS = np.asarray(model.big_sigma_grad_beta(beta, xg))
        try:
            A = np.array([np.linalg.solve(S.T, dSi.T).T for dSi in dS])  # dSigma_i Sigma^{-1}
        except np.linalg.LinAlgError:
            raise SingularCovariance(f"Sigma singular at t={grid_fine.times[k]}") from None
        vals[k] = np.einsum("iab,jba->ij", A, A)
    out = simpson(vals, x=grid_fine.times, axis=0) / (2.0 * grid_fine.T)
    return 0.5 * (out + out.T)


def info_I_delta(flow: FlowSolution, s_mats: Optional[np.ndarray] = None) -> np.ndarray:
    """``Delta sum D_k^T S_k^{-1} D_k``."""
    S = flow.s_mats if s_mats is None else s_mats
    if S is None:
        raise ConfigError("I_Delta needs the covariances S_k")
    D = d_matrices(flow, flow.grid)
    try:
        SinvD = np.linalg.solve(S, D)
    except np.linalg.LinAlgError:
        raise SingularCovariance("S_k singular in I_Delta") from None
    out = flow.grid.delta * np.einsum("kpi,kpj->ij", D, SinvD)
    return 0.5 * (out + out.T)


def m_delta(flow: FlowSolution) -> np.ndarray:
    D = d_matrices(flow, flow.grid)
    return flow.grid.delta * np.einsum("kpi,kpj->ij", D, D)


def info_J_delta(flow: FlowSolution) -> np.ndarray:
    """``M_Delta (Delta sum D_k^T S_k D_k)^{-1} M_Delta^T``."""
    if flow.s_mats is None:
        raise ConfigError("J_Delta needs the covariances S_k")
    D = d_matrices(flow, flow.grid)
    M = flow.grid.delta * np.einsum("kpi,kpj->ij", D, D)
    mid = flow.grid.delta * np.einsum("kpi,kpq,kqj->ij", D, flow.s_mats, D)
    try:
        out = M @ np.linalg.solve(mid, M.T)
    except np.linalg.LinAlgError:
        raise SingularCovariance("middle matrix of J_Delta is singular") from None
    return 0.5 * (out + out.T)


# --- confidence intervals ---------------------------------------------------

def _safe_inv(mat):
    try:
        inv = np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(inv)) or np.any(np.diag(inv) < 0):
        return None
    return 0.5 * (inv + inv.T)


def confidence_intervals(result: EstimationResult, epsilon: float, grid: SamplingGrid) -> list:
    """95% normal intervals: ``eps`` rate for alpha, ``1/sqrt(n)`` rate for beta.

    Returns one ``(lo, hi)`` per estimated parameter, ``None`` where the
    information matrix is unavailable or singular.
    """
    a = len(result.alpha_hat)
    b = 0 if result.beta_hat is None else len(result.beta_hat)
    if result.info_matrix is None:
        return [None] * (a + b)
    info = np.asarray(result.info_matrix, dtype=float)
    est = result.estimates
    out = []
    # alpha block may be absent when alpha was held fixed
    alpha_free = info.shape[0] == a + b
    blocks = []
    if alpha_free:
        blocks.append((slice(0, a), epsilon))
    blocks.append((slice(info.shape[0] - b, info.shape[0]), 1.0 / np.sqrt(grid.n)))
    cis = [None] * (a + b)
    offset = 0 if alpha_free else a
    for sl, rate in blocks:
        if sl.stop - sl.start == 0:
            continue
        inv = _safe_inv(info[sl, sl])
        for j in range(sl.start, sl.stop):
            if inv is None:
                continue
            half = Z95 * rate * np.sqrt(inv[j - sl.start, j - sl.start])
            cis[j + offset] = (est[j + offset] - half, est[j + offset] + half)
    out.extend(cis)
    return out


def _cov_from_info(info, a_block, b_block, epsilon, n):
    """Block-diagonal asymptotic covariance, scaled by eps^2 and 1/n."""
    dim = info.shape[0]
    cov = np.full((dim, dim), np.nan)
    blocks = []
    if a_block:
        blocks.append((slice(0, a_block), epsilon ** 2))
    if b_block:
        blocks.append((slice(a_block, a_block + b_block), 1.0 / n))
    cov[:, :] = 0.0
    for sl, scale in blocks:
        inv = _safe_inv(info[sl, sl])
        cov[sl, sl] = np.nan if inv is None else scale * inv
    return cov


# --- estimation -------------------------------------------------------------

class _Objective:
    """Contrast as a function of the stacked search vector, with a one-entry flow cache."""

    def __init__(self, kind, model, link, path, options):
        self.kind = kind
        self.model = model
        self.link = link
        self.path = path
        self.options = options
        self._cache_key = None
        self._cache_flow = None
        self.last_error: Optional[SmallNoiseError] = None

    def split(self, theta):
        a = self.model.a
        if self.kind in ("small_delta", "gaussian_loglik"):
            if self.options.fix_alpha is not None:
                return np.atleast_1d(np.asarray(self.options.fix_alpha, dtype=float)), theta
            return theta[:a], theta[a:]
        if self.kind == "weighted_link":
            return theta, self.link.beta_of(theta)
        if self.kind == "weighted_multiplicative":
            return theta, np.atleast_1d(np.asarray(self.link.beta_ref, dtype=float))
        return theta, None

    def flow(self, alpha, beta):
        key = (alpha.tobytes(), None if beta is None else beta.tobytes())
        if key != self._cache_key:
            self._cache_flow = solve_flow(
                self.model, alpha, beta, self.path.x0, self.path.grid, self.options.substeps,
                sensitivities=False,
            )
            self._cache_key = key
        return self._cache_flow

    def value(self, theta) -> float:
        alpha, beta = self.split(np.asarray(theta, dtype=float))
        kind = self.kind
        if kind == "cls":
            return contrast_cls(self.path, self.flow(alpha, None))
        if kind in ("weighted_link", "weighted_multiplicative"):
            return contrast_weighted(self.path, self.flow(alpha, beta), self.link)
        if kind == "small_delta":
            return contrast_small_delta(self.path, self.flow(alpha, None), beta, self.model)
        return -gaussian_loglik(self.path, self.flow(alpha, beta))

    def __call__(self, theta) -> float:
        try:
            return self.value(theta)
        except (NonFiniteState, SingularCovariance) as exc:
            self.last_error = exc
            return np.inf


def _check_inputs(kind, model, link, path, box, options):
    if kind not in CONTRAST_KINDS:
        raise ConfigError(f"unknown contrast kind {kind!r}; expected one of {CONTRAST_KINDS}")
    if path.p != model.p:
        raise ConfigError(f"path has {path.p} state columns but model {model.name} has p={model.p}")
    if not path.epsilon > 0:
        raise ConfigError("estimation needs a positive epsilon")
    if path.grid.n < 2:
        raise ConfigError("estimation needs at least two sampling intervals")
    if kind == "weighted_link" and link.kind != "beta_equals_f_alpha":
        raise ConfigError("weighted_link requires a beta_equals_f_alpha link")
    if kind == "weighted_multiplicative" and link.kind != "multiplicative":
        raise ConfigError("weighted_multiplicative requires a multiplicative link")
    if kind in ("small_delta", "gaussian_loglik"):
        want = model.b if options.fix_alpha is not None else model.a + model.b
    else:
        want = model.a
    if box.dim != want:
        raise ConfigError(f"{kind} searches a {want}-dimensional box, got dimension {box.dim}")


def profile_beta(model, path, alpha, beta_box: ParamBox, options: EstimatorOptions) -> np.ndarray:
    """Minimize the small-Delta contrast in beta with alpha held fixed."""
    sub = EstimatorOptions(
        substeps=options.substeps, max_starts=options.max_starts, seed=options.seed,
        max_iter=options.max_iter, xtol=options.xtol, ftol=options.ftol, fix_alpha=np.asarray(alpha),
        compute_info=False,
    )
    obj = _Objective("small_delta", model, model.link, path, sub)
    res = multistart_minimize(obj, beta_box, sub.max_starts, sub.seed, sub.max_iter, sub.xtol, sub.ftol)
    return res.x


def minimize(
    kind: str,
    model: ModelSpec,
    link: Optional[LinkSpec],
    path: ObservedPath,
    box: ParamBox,
    options: Optional[EstimatorOptions] = None,
    beta_box: Optional[ParamBox] = None,
) -> EstimationResult:
    """Minimum contrast estimate of kind ``kind`` over ``box``.

    ``box`` covers alpha for ``cls``/``weighted_*`` and the stacked
    ``(alpha, beta)`` for ``small_delta``/``gaussian_loglik`` (beta only when
    ``options.fix_alpha`` is set). ``beta_box`` is used to profile a plug-in
    beta for the ``cls`` confidence intervals.
    """
    options = options or EstimatorOptions()
    link = link or model.link
    _check_inputs(kind, model, link, path, box, options)
    obj = _Objective(kind, model, link, path, options)
    res = multistart_minimize(obj, box, options.max_starts, options.seed, options.max_iter, options.xtol, options.ftol)
    if not np.isfinite(res.fun):
        raise obj.last_error or SingularCovariance("contrast was not finite anywhere in the box")
    alpha_hat, beta_split = obj.split(res.x)
    joint = kind in ("small_delta", "gaussian_loglik")
    alpha_free = not (joint and options.fix_alpha is not None)
    beta_hat = beta_split if joint else None

    result = EstimationResult(
        kind=kind,
        alpha_hat=np.array(alpha_hat, dtype=float),
        beta_hat=None if beta_hat is None else np.array(beta_hat, dtype=float),
        contrast_min=float(res.fun),
        param_names=tuple(model.alpha_names) + (tuple(model.beta_names) if joint else ()),
        optimizer={"iterations": res.iterations, "nfev": res.nfev, "restarts": res.restarts,
                   "converged": res.converged},
    )
    result.ci_95 = [None] * len(result.estimates)
    if options.compute_info:
        _attach_info(result, kind, model, link, path, options, alpha_free, beta_box)
    return result


def _attach_info(result, kind, model, link, path, options, alpha_free, beta_box):
    eps, grid = path.epsilon, path.grid
    alpha = result.alpha_hat
    fine = fine_grid(grid.T, max(options.fine_intervals, 2 * grid.n))
    try:
        if kind == "cls":
            beta = options.beta_for_info
            if beta is None:
                if beta_box is None:
                    return
                beta = profile_beta(model, path, alpha, beta_box, options)
            flow = solve_flow(model, alpha, beta, path.x0, grid, options.substeps)
            info, info_kind, a_block, b_block = info_J_delta(flow), "J_delta", model.a, 0
        elif kind == "weighted_link":
            flow = solve_flow(model, alpha, link.beta_of(alpha), path.x0, grid, options.substeps)
            info, info_kind, a_block, b_block = info_I_delta(flow), "I_delta", model.a, 0
        elif kind == "weighted_multiplicative":
            beta_ref = np.atleast_1d(np.asarray(link.beta_ref, dtype=float))
            flow = solve_flow(model, alpha, beta_ref, path.x0, grid, options.substeps)
            s0 = flow.s_mats / float(link.f_scalar(beta_ref))
            # Gaussian-likelihood fit of the scalar factor f(beta) given alpha
            f_hat = result.contrast_min / (grid.n * model.p * eps ** 2)
            info = info_I_delta(flow, s0 * f_hat)
            info_kind, a_block, b_block = "I_delta", model.a, 0
        else:
            beta = result.beta_hat
            blocks = []
            if alpha_free:
                if kind == "small_delta":
                    blocks.append(info_I_b(model, alpha, beta, path.x0, fine))
                else:
                    flow = solve_flow(model, alpha, beta, path.x0, grid, options.substeps)
                    blocks.append(info_I_delta(flow))
            blocks.append(info_I_sigma(model, alpha, beta, path.x0, fine))
            dim = sum(bk.shape[0] for bk in blocks)
            info = np.zeros((dim, dim))
            i = 0
            for bk in blocks:
                info[i:i + bk.shape[0], i:i + bk.shape[0]] = bk
                i += bk.shape[0]
            info_kind = ("I_b+I_sigma" if kind == "small_delta" else "I_delta+I_sigma") if alpha_free else "I_sigma"
            a_block, b_block = (model.a if alpha_free else 0), model.b
    except SmallNoiseError:
        return
    result.info_matrix = info
    result.info_kind = info_kind
    result.cov_matrix = _cov_from_info(info, a_block, b_block, eps, grid.n)
    result.ci_95 = confidence_intervals(result, eps, grid)

"""Synthetic data: Euler paths of the diffusion, exact SIR jump trajectories, jump MLE."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from numba.core.registry import CPUDispatcher

from ._kernels import STATUS_OK, kernels_for, python_kernels
from .contrasts import ObservedPath
from .errors import ConfigError, NonFiniteState, ZeroExposure
from .flow import SamplingGrid
from .models import ModelSpec

DEFAULT_SIM_SUBSTEPS = 100
INFECTION = 0
RECOVERY = 1
EVENT_NAMES = ("infection", "recovery")
_UNIFORM_BLOCK = 4096


def make_rng(base_seed: int, stream_id: int = 0) -> np.random.Generator:
    """PCG64 generator for replicate ``stream_id`` of experiment ``base_seed``.

    Streams are derived through ``SeedSequence`` spawn keys, so replicate k
    gets the same numbers whether it runs serially or in a worker pool.
    """
    if base_seed < 0 or stream_id < 0:
        raise ConfigError("seed and stream id must be non-negative")
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


# --- diffusion paths ---------------------------------------------------------

def simulate_sde(
    model: ModelSpec,
    alpha,
    beta,
    epsilon: float,
    x0,
    grid: SamplingGrid,
    sim_substeps: int = DEFAULT_SIM_SUBSTEPS,
    rng: np.random.Generator | None = None,
) -> ObservedPath:
    """Euler-Maruyama path recorded at the grid times.

    The diffusion coefficient is evaluated at the guarded state; the drift
    uses the raw state.
    """
    if sim_substeps < 1:
        raise ConfigError("sim_substeps must be >= 1")
    if epsilon < 0:
        raise ConfigError("epsilon must be non-negative")
    rng = rng if rng is not None else make_rng(0)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != model.p:
        raise ConfigError(f"model {model.name} has state dimension {model.p}, got x0 of size {x0.size}")
    h = grid.delta / sim_substeps
    d = np.asarray(model.sigma(beta, model.guard(x0))).shape[1]
    dW = rng.standard_normal((grid.n * sim_substeps, d)) * np.sqrt(h)

    kern = kernels_for(model)
    if kern.jit and not isinstance(model.sigma, CPUDispatcher):
        kern = python_kernels()
    obs, status, k = kern.euler(
        model.drift, model.sigma, model.domain_guard, *kern.euler_ops,
        alpha, beta, float(epsilon), x0, h, grid.n, int(sim_substeps), dW,
    )
    if status != STATUS_OK:
        raise NonFiniteState(f"Euler path left the finite range on interval {k + 1}")
    return ObservedPath(grid, obs, epsilon)


# --- SIR jump process ----------------------------------------------------------

@dataclass(frozen=True)
class JumpTrajectory:
    """Event-sparse SIR trajectory on ``[0, T]``.

    ``states[0]`` is the initial ``(S, I)``; ``states[j + 1]`` holds the state
    right after event ``j`` at ``times[j]``.
    """

    times: np.ndarray
    events: np.ndarray
    states: np.ndarray
    N: int
    m: int
    T: float

    @property
    def n_infections(self) -> int:
        return int(np.sum(self.events == INFECTION))

    @property
    def n_recoveries(self) -> int:
        return int(np.sum(self.events == RECOVERY))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def attack_rate(self) -> float:
        """Fraction ever infected, initial cases included."""
        return (self.N - int(self.states[-1, 0])) / self.N

    def state_at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right")
        return self.states[idx]


@numba.njit(cache=True)
def _ssa_block(S, I, t, T, N, lam, gam, u, times, events, states, count):
    """Advance the SSA using the uniforms in ``u`` (two per event).

    Returns ``(S, I, t, count, done, used)``.
    """
    j = 0
    while j + 1 < u.shape[0]:
        if I == 0:
            return S, I, t, count, True, j
        r_inf = lam * S * I / N
        r_rec = gam * I
        a0 = r_inf + r_rec
        tau = -np.log(1.0 - u[j]) / a0
        if t + tau > T:
            return S, I, T, count, True, j + 2
        t += tau
        if u[j + 1] * a0 < r_inf:
            S -= 1
            I += 1
            events[count] = 0
        else:
            I -= 1
            events[count] = 1
        times[count] = t
        states[count + 1, 0] = S
        states[count + 1, 1] = I
        count += 1
        j += 2
    return S, I, t, count, False, j


def simulate_gillespie_sir(N: int, m: int, lam: float, gam: float, T: float, rng: np.random.Generator) -> JumpTrajectory:
    """Exact stochastic simulation of SIR with rates ``lam*S*I/N`` and ``gam*I``.

    Stops at ``T`` or when ``I`` hits 0.
    """
    N, m = int(N), int(m)
    if not 0 < m < N:
        raise ConfigError(f"need 0 < m < N, got m={m}, N={N}")
    if lam < 0 or gam <= 0 or T <= 0:
        raise ConfigError("rates must be non-negative (gamma positive) and T positive")
    cap = 2 * N + 1
    times = np.empty(cap)
    events = np.empty(cap, dtype=np.int8)
    states = np.empty((cap + 1, 2), dtype=np.int64)
    states[0] = (N - m, m)
    S, I, t, count, done = N - m, m, 0.0, 0, False
    while not done:
        u = rng.random(_UNIFORM_BLOCK)
        S, I, t, count, done, _ = _ssa_block(S, I, t, float(T), float(N), float(lam), float(gam),
                                             u, times, events, states, count)
    return JumpTrajectory(
        times=times[:count].copy(), events=events[:count].copy(), states=states[:count + 1].copy(),
        N=N, m=m, T=float(T),
    )


def discretize(traj: JumpTrajectory, grid: SamplingGrid, normalize: bool = True) -> ObservedPath:
    """Sample ``(S, I)`` at the grid times (state after the last event at or before ``t_k``).

    ``normalize`` divides by ``N`` and sets ``epsilon = 1/sqrt(N)``; otherwise
    the counts are kept and ``epsilon = sqrt(N)``.
    """
    if grid.T > traj.T * (1 + 1e-12):
        raise ConfigError(f"grid horizon {grid.T} exceeds trajectory horizon {traj.T}")
    obs = traj.state_at(grid.times).astype(float)
    if normalize:
        return ObservedPath(grid, obs / traj.N, 1.0 / np.sqrt(traj.N))
    return ObservedPath(grid, obs, np.sqrt(traj.N))


def exposures(traj: JumpTrajectory):
    """Exact ``int S I dt`` and ``int I dt`` over ``[0, T]``."""
    edges = np.concatenate([[0.0], traj.times, [traj.T]])
    dt = np.diff(edges)
    S = traj.states[:, 0].astype(float)
    I = traj.states[:, 1].astype(float)
    return float(np.sum(S * I * dt)), float(np.sum(I * dt))


def jump_mle(traj: JumpTrajectory):
    """Complete-data MLE ``(lam_hat, gam_hat)`` from all jumps.

    Raises ``ZeroExposure`` when either rate is undefined (zero exposure or no
    events of that type); the computable rate is kept on ``exc.estimates``.
    """
    si, i_int = exposures(traj)
    n_inf, n_rec = traj.n_infections, traj.n_recoveries
    lam = traj.N * n_inf / si if si > 0 and n_inf > 0 else np.nan
    gam = n_rec / i_int if i_int > 0 and n_rec > 0 else np.nan
    if np.isnan(lam) or np.isnan(gam):
        which = [name for name, v in (("lambda", lam), ("gamma", gam)) if np.isnan(v)]
        raise ZeroExposure(f"no information for {', '.join(which)}", estimates=(lam, gam))
    return lam, gam


def emergence_filter(traj: JumpTrajectory, threshold_frac: float = 0.10) -> bool:
    """Keep epidemics whose total infections reach ``threshold_frac * N``."""
    return traj.attack_rate >= threshold_frac


# --- export -----------------------------------------------------------------------

def write_path_csv(path: ObservedPath, dest, state_names=None) -> None:
    names = list(state_names) if state_names else [f"x{i + 1}" for i in range(path.p)]
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names])
        for t, row in zip(path.grid.times, path.obs):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


def read_path_csv(src, epsilon: float, expect_p: int | None = None) -> ObservedPath:
    """Read a path CSV with header ``t,x1,...,xp`` on an equally spaced grid from 0."""
    src = Path(src)
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ConfigError(f"{src}: need a header and at least two rows")
    header, body = rows[0], rows[1:]
    p = len(header) - 1
    if expect_p is not None and p != expect_p:
        raise ConfigError(f"{src}: found {p} state column(s), model expects {expect_p}")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ConfigError(f"{src}: non-numeric entry ({exc})") from None
    if data.shape[1] != p + 1:
        raise ConfigError(f"{src}: ragged rows")
    t = data[:, 0]
    n = len(t) - 1
    grid = SamplingGrid(float(t[-1]), n)
    if abs(t[0]) > 1e-12 or not np.allclose(t, grid.times, rtol=1e-9, atol=1e-12):
        raise ConfigError(f"{src}: times must be equally spaced starting at 0")
    return ObservedPath(grid, data[:, 1:], epsilon)


def write_jumps_csv(traj: JumpTrajectory, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "event", "S", "I"])
        w.writerow([0.0, "initial", int(traj.states[0, 0]), int(traj.states[0, 1])])
        for j in range(len(traj.times)):
            w.writerow([repr(float(traj.times[j])), EVENT_NAMES[traj.events[j]],
                        int(traj.states[j + 1, 0]), int(traj.states[j + 1, 1])])

import csv

import numpy as np
import pytest
from scipy import stats

from smallnoise._kernels import kernels_for
from smallnoise.errors import ConfigError, ZeroExposure
from smallnoise.flow import SamplingGrid, solve_flow
from smallnoise.simulate import (
    INFECTION,
    RECOVERY,
    JumpTrajectory,
    discretize,
    emergence_filter,
    exposures,
    jump_mle,
    make_rng,
    read_path_csv,
    simulate_gillespie_sir,
    simulate_sde,
    write_jumps_csv,
    write_path_csv,
)


def _manual_traj(N, s0, i0, events, times, T):
    states = [(s0, i0)]
    s, i = s0, i0
    for ev in events:
        s, i = (s - 1, i + 1) if ev == INFECTION else (s, i - 1)
        states.append((s, i))
    return JumpTrajectory(np.array(times, dtype=float), np.array(events, dtype=np.int8),
                          np.array(states, dtype=np.int64), N, i0, float(T))


# --- diffusions --------------------------------------------------------------------

@pytest.mark.parametrize("name, alpha, beta, x0", [
    ("ou", [0.7], [1.0], [1.0]),
    ("cir", [1.0], [1.0], [1.0]),
    ("two_factor", [1.0, 1.0, 1.0], [1.0, 1.0, 0.3], [0.0, 1.5]),
    ("sir", [0.4, 1 / 3], [0.4, 1 / 3], [0.99, 0.01]),
])
def test_zero_noise_follows_flow(name, alpha, beta, x0):
    from smallnoise.models import get_model

    model = get_model(name)
    # Euler global error is about x(T) alpha^2 h T / 2; h = 1/(20*1000) keeps it under 1e-4 for CIR
    g = SamplingGrid(1.0, 20)
    path = simulate_sde(model, alpha, beta, 0.0, x0, g, sim_substeps=1000, rng=make_rng(0))
    flow = solve_flow(model, alpha, None, x0, g, sensitivities=False)
    np.testing.assert_allclose(path.obs, flow.x, atol=1e-4, rtol=0)


def test_ou_terminal_variance(ou):
    alpha, beta, eps, T = 0.7, 1.0, 0.1, 1.0
    g = SamplingGrid(T, 1)
    xT = np.array([simulate_sde(ou, [alpha], [beta], eps, [1.0], g, 100, make_rng(1, s)).obs[-1, 0]
                   for s in range(10_000)])
    expected = eps ** 2 * beta ** 2 * np.expm1(2 * alpha * T) / (2 * alpha)
    assert np.var(xT, ddof=1) == pytest.approx(expected, rel=0.05)


def test_seed_reproducibility(two_factor, sir):
    g = SamplingGrid(1.0, 20)
    args = (two_factor, [1, 1, 1], [1, 1, 0.3], 0.1, [0, 1.5], g, 50)
    a = simulate_sde(*args, rng=make_rng(42, 3))
    b = simulate_sde(*args, rng=make_rng(42, 3))
    c = simulate_sde(*args, rng=make_rng(42, 4))
    assert a.obs.tobytes() == b.obs.tobytes()
    assert a.obs.tobytes() != c.obs.tobytes()
    t1 = simulate_gillespie_sir(500, 5, 0.4, 1 / 3, 50.0, make_rng(7, 1))
    t2 = simulate_gillespie_sir(500, 5, 0.4, 1 / 3, 50.0, make_rng(7, 1))
    assert t1.times.tobytes() == t2.times.tobytes()
    gs = SamplingGrid(50.0, 10)
    assert discretize(t1, gs).obs.tobytes() == discretize(t2, gs).obs.tobytes()


def test_euler_weak_error(ou):
    # halving the Euler step, common random numbers, 10^4 replicates
    alpha, beta, eps = np.array([0.7]), np.array([1.0]), 0.1
    g = SamplingGrid(1.0, 10)
    kern = kernels_for(ou)
    sub = 20
    h = g.delta / (2 * sub)
    means_fine, means_coarse = [], []
    for s in range(10_000):
        dW = make_rng(5, s).standard_normal((g.n * 2 * sub, 1)) * np.sqrt(h)
        coarse_dW = dW[0::2] + dW[1::2]
        fine, *_ = kern.euler(ou.drift, ou.sigma, ou.domain_guard, *kern.euler_ops,
                              alpha, beta, eps, np.array([1.0]), h, g.n, 2 * sub, dW)
        coarse, *_ = kern.euler(ou.drift, ou.sigma, ou.domain_guard, *kern.euler_ops,
                                alpha, beta, eps, np.array([1.0]), 2 * h, g.n, sub, coarse_dW)
        means_fine.append(fine[-1, 0] ** 2)
        means_coarse.append(coarse[-1, 0] ** 2)
    fine, coarse = np.array(means_fine), np.array(means_coarse)
    se = np.std(fine, ddof=1) / np.sqrt(fine.size)
    assert abs(fine.mean() - coarse.mean()) < se


def test_simulate_rejects_bad_input(ou):
    g = SamplingGrid(1.0, 4)
    with pytest.raises(ConfigError):
        simulate_sde(ou, [0.7], [1.0], 0.1, [1.0], g, sim_substeps=0)
    with pytest.raises(ConfigError):
        simulate_sde(ou, [0.7], [1.0], -0.1, [1.0], g)
    with pytest.raises(ConfigError):
        simulate_sde(ou, [0.7], [1.0], 0.1, [1.0, 2.0], g)


# --- Gillespie ---------------------------------------------------------------------

def test_pure_death():
    traj = simulate_gillespie_sir(200, 20, 0.0, 1.0, 100.0, make_rng(3))
    assert traj.n_infections == 0
    assert traj.n_recoveries <= 20
    assert np.all(traj.states[:, 0] == 180)
    assert traj.final_state[1] == 0


def test_conservation_and_order():
    for s in range(20):
        traj = simulate_gillespie_sir(300, 3, 0.6, 0.3, 60.0, make_rng(11, s))
        S, I = traj.states[:, 0], traj.states[:, 1]
        R = traj.N - S - I
        assert np.all((S >= 0) & (I >= 0) & (R >= 0))
        assert np.all(np.diff(S) <= 0) and np.all(np.diff(R) >= 0)
        assert np.all(np.diff(traj.times) > 0)
        assert traj.times.size == 0 or traj.times[-1] <= traj.T
        step = np.diff(traj.states, axis=0)
        inf = traj.events == INFECTION
        np.testing.assert_array_equal(step[inf], np.tile([-1, 1], (inf.sum(), 1)))
        np.testing.assert_array_equal(step[~inf], np.tile([0, -1], ((~inf).sum(), 1)))
        assert np.all(np.isin(traj.events, [INFECTION, RECOVERY]))


def test_gillespie_rejects_bad_input():
    for bad in ((100, 0, 0.4, 0.3, 10.0), (100, 100, 0.4, 0.3, 10.0), (100, 5, -0.1, 0.3, 10.0),
                (100, 5, 0.4, 0.0, 10.0), (100, 5, 0.4, 0.3, 0.0)):
        with pytest.raises(ConfigError):
            simulate_gillespie_sir(*bad, make_rng(0))


def test_mean_final_size_matches_ode(sir):
    N, m, lam, gam, T = 10_000, 100, 0.4, 1 / 3, 50.0
    attack = [simulate_gillespie_sir(N, m, lam, gam, T, make_rng(13, s)).attack_rate for s in range(500)]
    flow = solve_flow(sir, [lam, gam], None, [1 - m / N, m / N], SamplingGrid(T, 500), sensitivities=False)
    ode_attack = 1.0 - flow.x[-1, 0]
    assert abs(np.mean(attack) - ode_attack) < 0.05


def test_pure_death_extinction_time_law():
    # extinction time of m independent Exp(gam) lifetimes: P(tau <= t) = (1 - e^{-gam t})^m
    m, gam = 5, 1.0
    taus = []
    for s in range(5000):
        traj = simulate_gillespie_sir(50, m, 0.0, gam, 1e6, make_rng(17, s))
        assert traj.final_state[1] == 0
        taus.append(traj.times[-1])
    res = stats.kstest(taus, lambda t: (1 - np.exp(-gam * np.asarray(t))) ** m)
    assert res.pvalue > 0.01


# --- discretization and MLE ---------------------------------------------------------

def test_discretize_at_event_times():
    traj = _manual_traj(10, 8, 2, [INFECTION, RECOVERY, INFECTION, RECOVERY], [1, 2, 3, 4], T=4)
    path = discretize(traj, SamplingGrid(4.0, 4), normalize=False)
    np.testing.assert_array_equal(path.obs, traj.states.astype(float))
    assert path.epsilon == pytest.approx(np.sqrt(10))


def test_discretize_normalize_and_endpoints():
    traj = simulate_gillespie_sir(1000, 10, 0.5, 0.25, 40.0, make_rng(19))
    path = discretize(traj, SamplingGrid(40.0, 40))
    assert path.epsilon == pytest.approx(1 / np.sqrt(1000))
    assert np.all((path.obs >= 0) & (path.obs <= 1))
    ends = discretize(traj, SamplingGrid(40.0, 1), normalize=False)
    assert ends.obs.shape == (2, 2)
    np.testing.assert_array_equal(ends.obs, traj.states[[0, -1]].astype(float))
    with pytest.raises(ConfigError):
        discretize(traj, SamplingGrid(41.0, 1))


def test_jump_mle_hand_calculation():
    # one infection at t=2 on [0, 5]: int S I dt = 9*1*2 + 8*2*3 = 66
    traj = _manual_traj(10, 9, 1, [INFECTION], [2.0], T=5.0)
    si, i_int = exposures(traj)
    assert (si, i_int) == (66.0, 1 * 2 + 2 * 3)
    with pytest.raises(ZeroExposure) as info:
        jump_mle(traj)
    lam, gam = info.value.estimates
    assert lam == pytest.approx(10 / 66, rel=1e-15)
    assert np.isnan(gam)
    full = _manual_traj(10, 9, 1, [INFECTION, RECOVERY], [2.0, 4.0], T=5.0)
    lam, gam = jump_mle(full)
    assert lam == pytest.approx(10 / (9 * 2 + 8 * 2 * 2 + 8 * 1 * 1))
    assert gam == pytest.approx(1 / (2 + 2 * 2 + 1))


def test_jump_mle_consistency():
    lams, gams = [], []
    for s in range(1000):
        lam, gam = jump_mle(simulate_gillespie_sir(10_000, 100, 0.4, 1 / 3, 50.0, make_rng(23, s)))
        lams.append(lam)
        gams.append(gam)
    assert np.mean(lams) == pytest.approx(0.4, rel=0.01)
    assert np.mean(gams) == pytest.approx(1 / 3, rel=0.01)


def test_emergence_filter():
    big = _manual_traj(100, 99, 1, [INFECTION] * 10, np.arange(1, 11), T=20)
    assert big.attack_rate == pytest.approx(0.11)
    assert emergence_filter(big)
    dud = _manual_traj(100, 99, 1, [RECOVERY], [0.5], T=20)
    assert not emergence_filter(dud)
    assert emergence_filter(dud, threshold_frac=0.0)


# --- files -------------------------------------------------------------------------

def test_path_csv_round_trip(tmp_path, two_factor):
    g = SamplingGrid(1.0, 20)
    path = simulate_sde(two_factor, [1, 1, 1], [1, 1, 0.3], 0.1, [0, 1.5], g, rng=make_rng(29))
    dest = tmp_path / "path.csv"
    write_path_csv(path, dest, two_factor.state_names)
    assert dest.read_text().splitlines()[0] == "t,y,R"
    back = read_path_csv(dest, 0.1, expect_p=2)
    np.testing.assert_array_equal(back.obs, path.obs)
    assert back.grid.n == 20 and back.grid.T == 1.0
    with pytest.raises(ConfigError, match="found 2 state column"):
        read_path_csv(dest, 0.1, expect_p=1)


def test_path_csv_rejects_uneven_times(tmp_path):
    dest = tmp_path / "bad.csv"
    dest.write_text("t,x1\n0,1\n0.3,1.1\n1.0,1.2\n")
    with pytest.raises(ConfigError, match="equally spaced"):
        read_path_csv(dest, 0.1)


def test_jumps_csv(tmp_path):
    traj = _manual_traj(10, 9, 1, [INFECTION, RECOVERY], [2.0, 4.0], T=5.0)
    dest = tmp_path / "jumps.csv"
    write_jumps_csv(traj, dest)
    with open(dest) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "event", "S", "I"]
    assert rows[1][1:] == ["initial", "9", "1"]
    assert rows[2][1:] == ["infection", "8", "2"]
    assert rows[3][1:] == ["recovery", "8", "1"]

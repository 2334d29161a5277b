"""Walk machinery and the direct branching simulator against exact laws."""

import math

import numpy as np
import pytest

from brwre_lab.brw_sim import (
    WalkPath,
    direct_moment_table,
    estimate_mn_direct,
    evolve_walks,
    integrate_potential,
    simulate_brwre,
    simulate_srw,
)
from brwre_lab.environment import (
    BoundedUniform,
    Constant,
    DoubleExp,
    EnvironmentField,
    sample_environment,
)
from brwre_lab.errors import ParameterError
from brwre_lab.rng import substream


def constant_env(d, R, c2, c0=0.0, boundary="periodic"):
    n = (2 * R + 1) ** d
    return EnvironmentField(
        d=d, R=R, boundary=boundary,
        xi0=np.full(n, c0), xi2=np.full(n, c2),
        dist0=Constant(c=c0), dist2=Constant(c=c2),
    )


def test_walkpath_validation_and_lookup():
    p = WalkPath(start=(0,), jump_times=(0.25, 0.5), sites=((1,), (0,)), duration=1.0)
    assert p.position_at(0.0) == (0,)
    assert p.position_at(0.3) == (1,)
    assert p.position_at(0.5) == (0,)
    assert p.position_at(1.0) == (0,)
    assert p.end == (0,)
    occ = p.occupation()
    assert [s for s, _ in occ] == [(0,), (1,), (0,)]
    assert sum(dt for _, dt in occ) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        WalkPath(start=(0,), jump_times=(0.5, 0.25), sites=((1,), (0,)), duration=1.0)
    with pytest.raises(ParameterError):
        WalkPath(start=(0,), jump_times=(0.5,), sites=((2,),), duration=1.0)
    with pytest.raises(ParameterError):
        p.position_at(1.5)


def test_srw_jump_count_and_axis_variance():
    # jumps are Poisson(2 d kappa t); each axis displacement has variance 2 kappa t
    rng = substream(11)
    kappa, t, d = 1.0, 1.0, 2
    njumps = []
    for _ in range(3000):
        path = simulate_srw((0, 0), t, kappa, rng)
        njumps.append(len(path.jump_times))
    lam = 2 * d * kappa * t
    se = math.sqrt(lam / len(njumps))
    assert abs(np.mean(njumps) - lam) <= 3 * se

    ends, _, _ = evolve_walks(
        substream(12), np.zeros((100_000, d), dtype=np.int64),
        np.full(100_000, t), kappa,
    )
    for axis in range(d):
        v = ends[:, axis].astype(float)
        assert abs(v.mean()) <= 3 * v.std(ddof=1) / math.sqrt(len(v))
        # variance of the compound Poisson displacement; se of the sample
        # variance for a Poisson-jump walk is close to normal at this size
        var = v.var(ddof=1)
        se_var = math.sqrt(2.0 / (len(v) - 1)) * var + 0.01
        assert abs(var - 2 * kappa * t) <= 4 * se_var


def test_srw_matches_batch_evolver_in_law():
    # endpoint mean and second moment agree between the two kernels
    rng = substream(13)
    ends_path = np.array(
        [simulate_srw((0,), 1.5, 0.8, rng).end[0] for _ in range(20_000)], dtype=float
    )
    ends_vec, _, _ = evolve_walks(
        substream(14), np.zeros((20_000, 1), dtype=np.int64), np.full(20_000, 1.5), 0.8
    )
    a, b = ends_path, ends_vec[:, 0].astype(float)
    for f in (lambda z: z, lambda z: z * z):
        fa, fb = f(a), f(b)
        se = math.sqrt(fa.var(ddof=1) / len(fa) + fb.var(ddof=1) / len(fb))
        assert abs(fa.mean() - fb.mean()) <= 3 * se


def test_integrate_potential_exact():
    p = WalkPath(start=(0,), jump_times=(0.25, 0.75), sites=((1,), (2,)), duration=2.0)
    values = {(0,): 2.0, (1,): -1.0, (2,): 4.0}
    expected = 2.0 * 0.25 - 1.0 * 0.5 + 4.0 * 1.25
    assert integrate_potential(p, values) == pytest.approx(expected, rel=1e-14)

    def value_at(pos):
        return pos[:, 0].astype(float)

    assert integrate_potential(p, value_at) == pytest.approx(
        0.0 * 0.25 + 1.0 * 0.5 + 2.0 * 1.25, rel=1e-14
    )


def test_evolve_walks_constant_potential_and_zero_rate():
    env = constant_env(1, 2, c2=3.0)
    ends, integ, alive = evolve_walks(
        substream(15), np.zeros((500, 1), dtype=np.int64), np.full(500, 2.0), 1.0,
        potential=env.xi2_at,
    )
    assert np.allclose(integ, 6.0)
    assert alive.all()
    ends0, integ0, _ = evolve_walks(
        substream(16), np.full((10, 1), 2, dtype=np.int64), np.full(10, 3.0), 0.0,
        potential=env.xi2_at,
    )
    assert np.all(ends0 == 2)
    assert np.allclose(integ0, 9.0)


def test_evolve_walks_absorption_mask():
    env = constant_env(1, 0, c2=0.0, boundary="zero")
    ends, _, alive = evolve_walks(
        substream(17), np.zeros((2000, 1), dtype=np.int64), np.full(2000, 1.0), 1.0,
        inside=env.in_box,
    )
    # single-site box: any jump leaves; survival prob is e^{-2 kappa t}
    p = math.exp(-2.0)
    phat = alive.mean()
    se = math.sqrt(p * (1 - p) / len(alive))
    assert abs(phat - p) <= 3 * se
    assert np.all(np.abs(ends[alive]) <= 0)


def test_yule_moments_direct():
    # constant branching at rate 1, no killing: eta is geometric with
    # mean e^t; closed moments m1 = e, m2 = 2e^2 - e, m3 = 6e^3 - 6e^2 + e
    env = constant_env(1, 1, c2=1.0)
    table = direct_moment_table(
        env, (0,), [1.0], [1, 2, 3], samples=100_000, seed=21, kappa=1.0
    )
    exact = {
        1: math.e,
        2: 2 * math.e**2 - math.e,
        3: 6 * math.e**3 - 6 * math.e**2 + math.e,
    }
    for est in table:
        assert est.capped == 0
        z = (est.estimate - exact[est.order]) / est.stderr
        assert abs(z) <= 3.0, (est.order, est.estimate, exact[est.order], z)


def test_pure_death_all_orders():
    # killing at rate c with no branching: eta is Bernoulli(e^{-ct}),
    # so every moment equals e^{-ct}
    env = constant_env(1, 1, c2=0.0, c0=0.7)
    table = direct_moment_table(
        env, (0,), [0.5, 1.5], [1, 2, 3], samples=40_000, seed=22
    )
    for est in table:
        p = math.exp(-0.7 * est.t)
        se = math.sqrt(p * (1 - p) / est.samples)
        assert abs(est.estimate - p) <= 3 * se + 1e-12


def test_single_absorbing_site():
    # zero boundary, single site: each particle leaves at rate 2 d kappa,
    # so the mean count is e^{(c2 - c0 - 2 d kappa) t}
    env = constant_env(1, 0, c2=1.5, c0=0.2, boundary="zero")
    est = estimate_mn_direct(env, (0,), 1.0, 1, samples=60_000, seed=23, kappa=0.8)
    exact = math.exp((1.5 - 0.2 - 2 * 0.8) * 1.0)
    assert abs(est.estimate - exact) <= 3 * est.stderr


def test_start_site_invariance_constant_env():
    env = constant_env(1, 3, c2=0.9, c0=0.3)
    a = direct_moment_table(env, (-2,), [1.0], [1, 2], samples=30_000, seed=24)
    b = direct_moment_table(env, (3,), [1.0], [1, 2], samples=30_000, seed=25)
    for ea, eb in zip(a, b):
        se = math.hypot(ea.stderr, eb.stderr)
        assert abs(ea.estimate - eb.estimate) <= 3 * se


def test_markov_restart_composition():
    # running to t equals running to t/2 and restarting each survivor
    env = sample_environment(
        BoundedUniform(b=0.5), DoubleExp(rho=1.0), d=1, R=2, seed=100
    )
    t = 1.0
    one_shot = direct_moment_table(env, (0,), [t], [1, 2], samples=25_000, seed=26)

    rng = substream(27)
    totals = []
    for _ in range(12_000):
        first = simulate_brwre(env, (0,), t / 2, rng=rng)
        total = 0
        for site, cnt in first.counts.items():
            for _ in range(cnt):
                total += simulate_brwre(env, site, t / 2, rng=rng).total
        totals.append(total)
    arr = np.array(totals, dtype=float)
    for est in one_shot:
        pw = arr**est.order
        se = math.sqrt(est.stderr**2 + pw.var(ddof=1) / len(pw))
        assert abs(est.estimate - pw.mean()) <= 3 * se, est


def test_local_counts_sum_to_total():
    env = sample_environment(
        BoundedUniform(b=0.5), DoubleExp(rho=1.0), d=1, R=2, seed=101
    )
    rng = substream(28)
    for _ in range(200):
        r = simulate_brwre(env, (0,), 0.8, rng=rng)
        assert sum(r.counts.values()) == r.total
        assert all(env.in_box(np.array([s])) for s in r.counts)


def test_local_moment_at_start_site():
    # t = 0: the single particle sits at x, so local moments are indicators
    env = constant_env(1, 2, c2=1.0)
    at_x = estimate_mn_direct(env, (0,), 0.0, 2, samples=100, seed=29, y=(0,))
    away = estimate_mn_direct(env, (0,), 0.0, 2, samples=100, seed=29, y=(1,))
    assert at_x.estimate == 1.0 and at_x.stderr == 0.0
    assert away.estimate == 0.0


def test_cap_flags_and_exclusion():
    env = constant_env(1, 1, c2=2.0)
    est = estimate_mn_direct(env, (0,), 1.0, 1, samples=4000, seed=30, cap=1)
    # with cap 1 any split trips the cap, so kept realizations have eta = 1
    assert est.capped > 0
    assert est.estimate == 1.0
    assert est.samples + est.capped == 4000


def test_direct_estimator_deterministic_and_thread_invariant():
    env = sample_environment(
        BoundedUniform(b=1.0), DoubleExp(rho=1.0), d=1, R=2, seed=102
    )
    a = direct_moment_table(env, (0,), [0.5, 1.0], [1, 2], samples=5000, seed=31)
    b = direct_moment_table(env, (0,), [0.5, 1.0], [1, 2], samples=5000, seed=31)
    c = direct_moment_table(
        env, (0,), [0.5, 1.0], [1, 2], samples=5000, seed=31, threads=3
    )
    assert a == b == c
    d2 = direct_moment_table(env, (0,), [0.5, 1.0], [1, 2], samples=5000, seed=32)
    assert a != d2


def test_record_mode_consistency():
    env = sample_environment(
        BoundedUniform(b=0.5), DoubleExp(rho=1.5), d=1, R=2, seed=103
    )
    rng = substream(33)
    for _ in range(50):
        r = simulate_brwre(env, (0,), 1.0, rng=rng, record=True)
        assert r.particles is not None
        alive = [p for p in r.particles if p.end_reason == "alive"]
        assert len(alive) == r.total
        pids = {p.pid for p in r.particles}
        for p in r.particles:
            if p.parent is not None:
                assert p.parent in pids
            last = p.birth_time
            for tj, _ in p.jumps:
                assert tj >= last
                last = tj
            if p.end_time is not None:
                assert p.end_time >= last


def test_direct_estimator_validation():
    env = constant_env(1, 1, c2=1.0)
    with pytest.raises(ParameterError):
        estimate_mn_direct(env, (0,), -1.0, 1, samples=10)
    with pytest.raises(ParameterError):
        estimate_mn_direct(env, (0,), 1.0, 0, samples=10)
    with pytest.raises(ParameterError):
        estimate_mn_direct(env, (0,), 1.0, 1, samples=1)
    with pytest.raises(ParameterError):
        simulate_brwre(env, (0,), 1.0, cap=0)

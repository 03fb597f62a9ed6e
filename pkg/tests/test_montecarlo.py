import numpy as np
import pytest

from rwrelab import (
    Direction,
    ModelSpec,
    PerturbationAtom,
    PerturbationLaw,
    TransitionKernel,
    UsageError,
    annealed_speed,
    directions,
    order_scaling,
    simulate_endpoints,
    solomon_speed,
    transition_difference_decay,
)
from rwrelab.montecarlo import _quadrant_mass


def degenerate_1d():
    p0 = TransitionKernel(1, (0.7, 0.3))
    law = PerturbationLaw(1, (PerturbationAtom(1, (0.0, 0.0), 1.0),))
    return ModelSpec(1, p0, law, 0.25, 0.2)


# --- annealed simulation -----------------------------------------------------------


def test_annealed_degenerate_matches_drift():
    model = degenerate_1d()
    est = annealed_speed(model, 0.1, 20_000, 200, 99)
    assert est.stderr[0] > 0.0
    assert abs(est.v_hat[0] - 0.4) <= 4.0 * est.stderr[0]


def test_annealed_degenerate_3d():
    p0 = TransitionKernel(3, (0.3, 0.1, 0.15, 0.15, 0.15, 0.15))
    law = PerturbationLaw(3, (PerturbationAtom(3, (0.0,) * 6, 1.0),))
    model = ModelSpec(3, p0, law, 0.05, 0.1)
    est = annealed_speed(model, 0.05, 5_000, 100, 5)
    gap = np.abs(est.v_hat - np.array([0.2, 0.0, 0.0]))
    assert (gap <= 4.0 * est.stderr + 1e-12).all()


def test_annealed_matches_solomon(d1_twopoint):
    est = annealed_speed(d1_twopoint, 0.1, 50_000, 300, 20240801)
    sol = solomon_speed(d1_twopoint, 0.1)
    assert abs(est.v_hat[0] - sol) <= 3.0 * est.stderr[0]


def test_annealed_reproducible(d1_twopoint):
    a = annealed_speed(d1_twopoint, 0.1, 2_000, 64, 7)
    b = annealed_speed(d1_twopoint, 0.1, 2_000, 64, 7)
    assert np.array_equal(a.v_hat, b.v_hat)
    assert np.array_equal(a.stderr, b.stderr)
    c = annealed_speed(d1_twopoint, 0.1, 2_000, 64, 8)
    assert not np.array_equal(a.v_hat, c.v_hat)


def test_first_step_distribution_matches_mean_kernel(drifted_2d):
    # one-step marginal is the gamma-perturbed mean kernel, within 4 sigma
    n = 120_000
    ends = simulate_endpoints(drifted_2d, 0.1, 1, n, 12345)
    pg = drifted_2d.p_gamma(0.1)
    for e in directions(2):
        emp = float((ends == e.vector(2)).all(axis=1).mean())
        p = pg.p(e)
        sigma = np.sqrt(p * (1.0 - p) / n)
        assert abs(emp - p) <= 4.0 * sigma


def test_simulation_guards(d1_twopoint):
    with pytest.raises(UsageError):
        simulate_endpoints(d1_twopoint, 0.5, 100, 10, 0)  # gamma out of range
    with pytest.raises(UsageError):
        simulate_endpoints(d1_twopoint, 0.1, 1 << 20, 10, 0)  # escapes the box
    with pytest.raises(UsageError):
        simulate_endpoints(d1_twopoint, 0.1, 0, 10, 0)


def test_hypothesis_warning():
    p0 = TransitionKernel(1, (0.5, 0.5))
    law = PerturbationLaw(
        1,
        (PerturbationAtom(1, (0.4, -0.4), 0.5), PerturbationAtom(1, (-0.4, 0.4), 0.5)),
    )
    model = ModelSpec(1, p0, law, 0.05, 0.2)
    with pytest.warns(UserWarning):
        annealed_speed(model, 0.1, 100, 10, 0)


# --- order scaling -----------------------------------------------------------------


def test_order_scaling_order1_slope(d1_twopoint):
    rep = order_scaling(d1_twopoint, [0.08, 0.04, 0.02], 1)
    assert rep.source == "exact"
    assert not rep.noise_floor
    assert rep.slope == pytest.approx(2.0, abs=0.4)


def test_order_scaling_mc_source(d1_twopoint):
    rep = order_scaling(
        d1_twopoint,
        [0.1, 0.05],
        0,
        n_steps=5_000,
        n_replicates=100,
        master_seed=17,
        source="mc",
    )
    # order-0 errors are huge relative to MC noise: fit must engage
    assert not rep.noise_floor
    assert rep.slope == pytest.approx(1.0, abs=0.4)


def test_order_scaling_noise_floor_flag(d1_twopoint):
    # order-3 errors sit far below MC resolution: the flag reports that
    rep = order_scaling(
        d1_twopoint,
        [0.02, 0.01],
        3,
        n_steps=2_000,
        n_replicates=50,
        master_seed=23,
        source="mc",
    )
    assert rep.noise_floor
    assert np.isnan(rep.slope)


def test_order_scaling_requires_sim_params_for_mc(drifted_2d):
    with pytest.raises(UsageError):
        order_scaling(drifted_2d, [0.05], 1, source="mc")
    with pytest.raises(UsageError):
        order_scaling(drifted_2d, [0.05], 1, source="exact")


# --- kernel-difference decay ---------------------------------------------------------


def brute_l1(s_axis, n, d, axis):
    # independent full-lattice DP oracle
    def dp(n):
        R = n + 1
        cur = np.zeros((2 * R + 1,) * d)
        cur[(R,) * d] = 1.0
        for _ in range(n):
            nxt = np.zeros_like(cur)
            for ax in range(d):
                s = s_axis[ax]
                sl_d = [slice(None)] * d
                sl_s = [slice(None)] * d
                sl_d[ax] = slice(1, None)
                sl_s[ax] = slice(0, -1)
                nxt[tuple(sl_d)] += s * cur[tuple(sl_s)]
                sl_d[ax] = slice(0, -1)
                sl_s[ax] = slice(1, None)
                nxt[tuple(sl_d)] += s * cur[tuple(sl_s)]
            cur = nxt
        return cur, R

    pn1, R1 = dp(n + 1)
    pn, R = dp(n)
    total = 0.0
    for idx in np.ndindex(*pn1.shape):
        z = [i - R1 for i in idx]
        z[axis] -= 1
        g = 0.0
        if all(abs(c) <= R for c in z):
            g = pn[tuple(c + R for c in z)]
        total += abs(pn1[idx] - g)
    return total


def test_decay_matches_brute_force_2d():
    s = TransitionKernel(2, (0.25,) * 4)
    table = transition_difference_decay(s, [2, 5, 8], dirs=[Direction(1, 1)])
    for i, n in enumerate(table.n_values):
        brute = brute_l1([0.25, 0.25], n, 2, 0)
        assert table.values[Direction(1, 1)][i] == pytest.approx(brute, abs=1e-14)


def test_decay_matches_brute_force_anisotropic():
    s = TransitionKernel(2, (0.35, 0.35, 0.15, 0.15))
    table = transition_difference_decay(s, [4, 7], dirs=[Direction(2, 1)])
    for i, n in enumerate(table.n_values):
        brute = brute_l1([0.35, 0.15], n, 2, 1)
        assert table.values[Direction(2, 1)][i] == pytest.approx(brute, abs=1e-14)


def test_decay_direction_sign_irrelevant():
    s = TransitionKernel(2, (0.25,) * 4)
    a = transition_difference_decay(s, [8, 16], dirs=[Direction(1, 1)])
    b = transition_difference_decay(s, [8, 16], dirs=[Direction(1, -1)])
    assert a.values[Direction(1, 1)] == b.values[Direction(1, -1)]


def test_decay_values_in_range_and_decreasing():
    s = TransitionKernel(2, (0.25,) * 4)
    table = transition_difference_decay(s, [16, 64, 256])
    for e, vals in table.values.items():
        assert all(0.0 <= v <= 2.0 for v in vals)
        assert vals[0] > vals[1] > vals[2]


def test_decay_parity_classes():
    # p_{n+1}(0, .) and p_n(e, .) live on the same parity class; the DP
    # keeps off-parity entries exactly zero, so a parity-masked total
    # reproduces the full mass exactly
    s = TransitionKernel(2, (0.25,) * 4)
    from rwrelab.montecarlo import _quadrant_step

    size = 12
    cur = np.zeros((size, size))
    nxt = np.zeros((size, size))
    cur[0, 0] = 1.0
    n = 7
    for m in range(n):
        _quadrant_step(cur, nxt, m + 1, m + 2, np.array([0.25, 0.25]))
        cur, nxt = nxt, cur
    mask = np.add.outer(np.arange(size), np.arange(size)) % 2 == n % 2
    assert cur[~mask].max() == 0.0
    assert _quadrant_mass(cur, n + 1) == pytest.approx(1.0, abs=1e-12)


def test_decay_requires_symmetric_kernel():
    with pytest.raises(UsageError):
        transition_difference_decay(TransitionKernel(2, (0.3, 0.2, 0.25, 0.25)), [4])


def test_decay_memory_guard():
    s2 = TransitionKernel(2, (0.25,) * 4)
    with pytest.raises(UsageError):
        transition_difference_decay(s2, [2_000_000])
    s3 = TransitionKernel(3, (1.0 / 6.0,) * 6)
    with pytest.raises(UsageError):
        transition_difference_decay(s3, [1024])  # d=3 cap is n=512


def test_decay_1d_exponent():
    s = TransitionKernel(1, (0.5, 0.5))
    table = transition_difference_decay(s, [64, 128, 256, 512, 1024])
    assert table.fitted_exponent <= -0.45


def test_decay_matches_brute_force_3d():
    s = TransitionKernel(3, (1.0 / 6.0,) * 6)
    table = transition_difference_decay(s, [3, 6], dirs=[Direction(2, 1)])
    for i, n in enumerate(table.n_values):
        brute = brute_l1([1.0 / 6.0] * 3, n, 3, 1)
        assert table.values[Direction(2, 1)][i] == pytest.approx(brute, abs=1e-14)

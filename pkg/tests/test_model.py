import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwrelab import (
    Direction,
    ModelSpec,
    PerturbationAtom,
    PerturbationLaw,
    TransitionKernel,
    UsageError,
    covariance,
    directions,
    drift,
    one_point_modification,
    sample_site,
    third_moments,
)
from rwrelab.model import (
    COORD_BOUND,
    mix64,
    pack_coords,
    site_atom_index,
    site_atom_indices_array,
    step_vectors,
)


def two_point_law_1d(u_plus, u_minus, w):
    return PerturbationLaw(
        1,
        (
            PerturbationAtom(1, (u_plus, -u_plus), w),
            PerturbationAtom(1, (u_minus, -u_minus), 1.0 - w),
        ),
    )


# --- directions ---------------------------------------------------------------


def test_directions_count_and_involution():
    for d in (1, 2, 3):
        dirs = directions(d)
        assert len(dirs) == 2 * d
        assert len(set(dirs)) == 2 * d
        for e in dirs:
            assert e.opposite().opposite() == e
            assert Direction.from_key(e.key) == e
            assert np.abs(e.vector(d)).sum() == 1


def test_direction_bad_key():
    with pytest.raises(UsageError):
        Direction.from_key("e1")


# --- kernels -------------------------------------------------------------------


def test_kernel_validation():
    with pytest.raises(UsageError):
        TransitionKernel(1, (0.7, 0.2))
    with pytest.raises(UsageError):
        TransitionKernel(1, (1.0, 0.0))
    with pytest.raises(UsageError):
        TransitionKernel(2, (0.5, 0.5))


def test_kernel_from_map_roundtrip():
    k = TransitionKernel(2, {"+1": 0.375, "-1": 0.375, "+2": 0.1375, "-2": 0.1125})
    assert k.as_map() == {"+1": 0.375, "-1": 0.375, "+2": 0.1375, "-2": 0.1125}


def test_drift_anisotropic_kernel():
    # vertical drift eps (1-a)/2 with a=1/2, eps=1/10
    k = TransitionKernel(2, (0.375, 0.375, 0.1375, 0.1125))
    assert np.allclose(drift(k), [0.0, 0.025], atol=1e-15)


def test_drift_symmetric_is_zero():
    for d in (1, 2, 3):
        k = TransitionKernel(d, (1.0 / (2 * d),) * (2 * d))
        assert np.allclose(drift(k), 0.0, atol=1e-15)


def test_drift_1d():
    assert drift(TransitionKernel(1, (0.7, 0.3)))[0] == pytest.approx(0.4, abs=1e-15)


@given(
    p=st.floats(0.2, 0.8),
    u=st.floats(-0.15, 0.15),
    gamma=st.floats(-0.5, 0.5),
)
def test_drift_bilinearity(p, u, gamma):
    # drift(p0 + g p1) = d0 + g d1 up to roundoff
    p0 = TransitionKernel(1, (p, 1.0 - p))
    law = two_point_law_1d(u, u / 2.0, 0.5)
    model = ModelSpec(1, p0, law, 0.01, 0.5)
    lhs = drift(model.p_gamma(gamma))
    rhs = model.d0 + gamma * model.d1
    assert np.allclose(lhs, rhs, atol=1e-12)


# --- perturbation laws ----------------------------------------------------------


def test_atom_validation():
    with pytest.raises(UsageError):
        PerturbationAtom(1, (0.5, 0.0), 1.0)  # does not sum to zero
    with pytest.raises(UsageError):
        PerturbationAtom(1, (2.5, -2.5), 1.0)  # outside the increment range
    with pytest.raises(UsageError):
        PerturbationLaw(1, (PerturbationAtom(1, (0.1, -0.1), 0.4),))


def test_covariance_pm_u_law():
    # +/-U with U = (1, 1, 0, -2)
    law = PerturbationLaw(
        2,
        (
            PerturbationAtom(2, (1.0, 1.0, 0.0, -2.0), 0.5),
            PerturbationAtom(2, (-1.0, -1.0, 0.0, 2.0), 0.5),
        ),
    )
    C = covariance(law)
    i = {e.key: e.index for e in directions(2)}
    assert C[i["+1"], i["+1"]] == pytest.approx(1.0, abs=1e-14)
    assert C[i["-1"], i["-1"]] == pytest.approx(1.0, abs=1e-14)
    assert C[i["-2"], i["-2"]] == pytest.approx(4.0, abs=1e-14)
    assert C[i["+1"], i["-2"]] == pytest.approx(-2.0, abs=1e-14)
    assert C[i["+1"], i["+2"]] == pytest.approx(0.0, abs=1e-14)


def test_covariance_degenerate_law_is_zero():
    law = PerturbationLaw(2, (PerturbationAtom(2, (0.0,) * 4, 1.0),))
    assert np.allclose(covariance(law), 0.0)
    assert law.is_degenerate()


def test_covariance_two_point_1d():
    # xi(e1) = +/-1 equiprobable, xi(-e1) forced to -xi(e1)
    law = two_point_law_1d(1.0, -1.0, 0.5)
    C = covariance(law)
    assert C[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert C[0, 1] == pytest.approx(-1.0, abs=1e-14)


@given(
    u1=st.floats(-1.0, 1.0),
    u2=st.floats(-1.0, 1.0),
    w=st.floats(0.05, 0.95),
)
def test_covariance_matches_enumeration(u1, u2, w):
    law = two_point_law_1d(u1, u2, w)
    C = covariance(law)
    # independent oracle: explicit loop over atoms and direction pairs
    dirs = directions(1)
    mean = [sum(a.weight * a.values[e.index] for a in law.atoms) for e in dirs]
    for e in dirs:
        for f in dirs:
            brute = sum(
                a.weight
                * (a.values[e.index] - mean[e.index])
                * (a.values[f.index] - mean[f.index])
                for a in law.atoms
            )
            assert C[e.index, f.index] == pytest.approx(brute, abs=1e-12)


def test_covariance_positive_semidefinite(rng):
    for _ in range(20):
        vals = rng.uniform(-1, 1, size=3)
        vals -= vals.mean()
        weights = rng.uniform(0.1, 1.0, size=3)
        weights /= weights.sum()
        atoms = tuple(
            PerturbationAtom(1, (v, -v), w) for v, w in zip(vals, weights)
        )
        C = covariance(PerturbationLaw(1, atoms))
        assert np.linalg.eigvalsh(C).min() >= -1e-12


def test_third_moments_symmetric_law_vanishes():
    law = PerturbationLaw(
        2,
        (
            PerturbationAtom(2, (1.0, 1.0, 0.0, -2.0), 0.5),
            PerturbationAtom(2, (-1.0, -1.0, 0.0, 2.0), 0.5),
        ),
    )
    assert np.abs(third_moments(law)).max() < 1e-14


def test_third_moments_skewed_two_atom():
    # centered values +1 (w=2/3) and -2 (w=1/3): E[x^3] = 2/3 - 8/3 = -2
    law = two_point_law_1d(1.0, -2.0, 2.0 / 3.0)
    T = third_moments(law)
    assert T[0, 0, 0] == pytest.approx(-2.0, abs=1e-12)


def test_third_moments_single_atom_zero():
    law = PerturbationLaw(1, (PerturbationAtom(1, (0.3, -0.3), 1.0),))
    assert np.abs(third_moments(law)).max() == 0.0


def test_third_moments_matches_enumeration(rng):
    vals = rng.uniform(-1, 1, size=4)
    vals -= vals.mean()
    weights = rng.uniform(0.1, 1.0, size=4)
    weights /= weights.sum()
    atoms = tuple(PerturbationAtom(1, (v, -v), w) for v, w in zip(vals, weights))
    law = PerturbationLaw(1, atoms)
    T = third_moments(law)
    mean = law.mean
    for e in directions(1):
        for f in directions(1):
            for g in directions(1):
                brute = sum(
                    a.weight
                    * (a.values[e.index] - mean[e.index])
                    * (a.values[f.index] - mean[f.index])
                    * (a.values[g.index] - mean[g.index])
                    for a in atoms
                )
                assert T[e.index, f.index, g.index] == pytest.approx(brute, abs=1e-12)


# --- model validation --------------------------------------------------------------


def test_model_ellipticity_validation():
    p0 = TransitionKernel(1, (0.6, 0.4))
    law = two_point_law_1d(1.0, -1.0, 0.5)
    with pytest.raises(UsageError):
        ModelSpec(1, p0, law, 0.3, 0.2)  # 0.4 - 0.2 = 0.2 < kappa0
    ModelSpec(1, p0, law, 0.2, 0.2)  # boundary case passes


def test_hypothesis_flag(d1_twopoint, sym_2d):
    assert d1_twopoint.hypothesis_h
    assert sym_2d.hypothesis_h  # d0 = 0 but d1 != 0
    p0 = TransitionKernel(1, (0.5, 0.5))
    law = two_point_law_1d(0.5, -0.5, 0.5)  # p1 = 0
    model = ModelSpec(1, p0, law, 0.3, 0.1)
    assert not model.hypothesis_h


def test_model_json_roundtrip(drifted_2d):
    text = drifted_2d.to_json()
    back = ModelSpec.from_json(text)
    assert back.to_json() == text
    assert back.d == drifted_2d.d
    assert back.p0.probs == drifted_2d.p0.probs


def test_model_json_unknown_keys_rejected(d1_twopoint):
    data = d1_twopoint.to_json_dict()
    data["extra"] = 1
    with pytest.raises(UsageError):
        ModelSpec.from_json_dict(data)


# --- deterministic sampling -------------------------------------------------------


def test_sample_site_single_atom(d1_twopoint):
    law = PerturbationLaw(1, (PerturbationAtom(1, (0.3, -0.3), 1.0),))
    model = ModelSpec(1, TransitionKernel(1, (0.6, 0.4)), law, 0.2, 0.2)
    env = sample_site(model, 0.1, 123, (5,))
    assert env.atom_index == 0
    assert env.kernel.probs == model.p_gamma(0.1).probs


def test_sample_site_deterministic(d1_twopoint):
    a = sample_site(d1_twopoint, 0.1, 98765, (3,))
    b = sample_site(d1_twopoint, 0.1, 98765, (3,))
    assert a == b


def test_sample_site_gamma_range(d1_twopoint):
    with pytest.raises(UsageError):
        sample_site(d1_twopoint, 0.5, 1, (0,))


def test_sample_site_frequencies(d1_twopoint):
    # binomial 4-sigma interval around the first atom weight 2/3
    n = 100_000
    seeds = np.full(n, np.uint64(mix64(42)), dtype=np.uint64)
    coords = np.arange(n, dtype=np.int64).reshape(-1, 1)
    idx = site_atom_indices_array(d1_twopoint.nu, seeds, coords)
    freq = (idx == 0).mean()
    w = d1_twopoint.nu.atoms[0].weight
    sigma = np.sqrt(w * (1 - w) / n)
    assert abs(freq - w) <= 4 * sigma


def test_sample_site_purity(rng, drifted_2d):
    n = 10_000
    seeds = rng.integers(0, 2**63, size=n)
    coords = rng.integers(-1000, 1000, size=(n, 2))
    first = [
        sample_site(drifted_2d, 0.1, int(s), tuple(c)) for s, c in zip(seeds, coords)
    ]
    second = [
        sample_site(drifted_2d, 0.1, int(s), tuple(c)) for s, c in zip(seeds, coords)
    ]
    assert first == second


def test_scalar_and_vector_sampling_agree(rng, drifted_2d):
    n = 2_000
    seed = 777
    coords = rng.integers(-500, 500, size=(n, 2))
    vec = site_atom_indices_array(
        drifted_2d.nu, np.full(n, np.uint64(seed), dtype=np.uint64), coords
    )
    for i in range(0, n, 97):
        assert vec[i] == site_atom_index(drifted_2d.nu, seed, tuple(coords[i]))


def test_pack_coords_bounds():
    with pytest.raises(UsageError):
        pack_coords((COORD_BOUND,))
    assert pack_coords((0, 0)) != pack_coords((0, 1))
    assert pack_coords((1, 0)) != pack_coords((0, 1))


# --- one-point modification --------------------------------------------------------


def test_one_point_modification_noop_cases(d1_twopoint):
    pg = d1_twopoint.p_gamma(0.1)
    env = {(0,): pg, (1,): d1_twopoint.atom_kernel(0.1, 0)}
    out = one_point_modification(d1_twopoint, 0.1, env, (0,))
    assert out == env  # already the mean kernel at y

    law = PerturbationLaw(1, (PerturbationAtom(1, (0.3, -0.3), 1.0),))
    model = ModelSpec(1, TransitionKernel(1, (0.6, 0.4)), law, 0.2, 0.2)
    envd = {(0,): model.atom_kernel(0.1, 0), (1,): model.atom_kernel(0.1, 0)}
    outd = one_point_modification(model, 0.1, envd, (1,))
    assert outd == envd  # degenerate law: modification is invisible


def test_one_point_modification_replaces_only_y(d1_twopoint):
    k0 = d1_twopoint.atom_kernel(0.1, 0)
    env = {(z,): k0 for z in range(-2, 3)}
    out = one_point_modification(d1_twopoint, 0.1, env, (0,))
    assert out[(0,)].probs == d1_twopoint.p_gamma(0.1).probs
    for z in (-2, -1, 1, 2):
        assert out[(z,)].probs == k0.probs
    # installing a specific kernel instead of the mean one
    k1 = d1_twopoint.atom_kernel(0.1, 1)
    out2 = one_point_modification(d1_twopoint, 0.1, env, (0,), kernel=k1)
    assert out2[(0,)].probs == k1.probs


def test_step_vectors_canonical_order():
    sv = step_vectors(2)
    assert sv.tolist() == [[1, 0], [-1, 0], [0, 1], [0, -1]]

"""Low-disorder expansion of the asymptotic speed.

Assembles the order-0 through order-3 speed approximations from the moment
tensors of the perturbation law and the Green increments of the mean kernel,
provides the exact d=1 speed as an oracle, and evaluates the torus integral
behind the d=2 acceleration construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import NumericalError, UsageError
from .model import (
    Direction,
    ModelSpec,
    PROB_TOL,
    covariance,
    directions,
    step_vectors,
    third_moments,
)
from .green import (
    JTable,
    j_closed_form_1d,
    j_exact,
    j_limit,
    series_oracle,
    torus_quadrature,
)
from . import tableio


def second_order_weights(C: np.ndarray, j: JTable, d: int) -> dict[Direction, float]:
    """Per-direction weights sum_e' C[e, e'] J[e']."""
    jv = j.as_array(d)
    if C.shape != (2 * d, 2 * d):
        raise UsageError("covariance shape does not match dimension")
    out = C @ jv
    return {e: float(out[e.index]) for e in directions(d)}


def third_order_weights(T: np.ndarray, j: JTable, d: int) -> dict[Direction, float]:
    """Per-direction weights sum_{e', e''} T[e, e', e''] J[e'] J[e'']."""
    jv = j.as_array(d)
    if T.shape != (2 * d,) * 3:
        raise UsageError("third-moment shape does not match dimension")
    out = np.einsum("efg,f,g->e", T, jv, jv)
    return {e: float(out[e.index]) for e in directions(d)}


def weights_to_drift(weights: Mapping[Direction, float], d: int) -> np.ndarray:
    sv = step_vectors(d).astype(np.float64)
    vec = np.zeros(2 * d)
    for e, w in weights.items():
        vec[e.index] = w
    return vec @ sv


@dataclass(frozen=True)
class ExpansionReport:
    """Speed expansion terms and the assembled per-order approximations."""

    gamma: float
    order: int
    d0: np.ndarray
    d1: np.ndarray
    d2_gamma: np.ndarray | None
    d2: np.ndarray | None
    d3: np.ndarray | None
    v_order: dict[int, np.ndarray]
    j_source: str

    def to_json_dict(self) -> dict:
        def vec(v):
            return None if v is None else [float(x) for x in v]

        return {
            "gamma": self.gamma,
            "order": self.order,
            "d0": vec(self.d0),
            "d1": vec(self.d1),
            "d2_gamma": vec(self.d2_gamma),
            "d2": vec(self.d2),
            "d3": vec(self.d3),
            "v_order": {str(k): vec(v) for k, v in sorted(self.v_order.items())},
            "j_source": self.j_source,
        }

    def csv_rows(self):
        for k in sorted(self.v_order):
            yield [self.gamma, k] + [float(x) for x in self.v_order[k]] + [self.j_source]

    @staticmethod
    def csv_fieldnames(d: int):
        return ["gamma", "order"] + [f"v{i + 1}" for i in range(d)] + ["j_source"]

    def to_csv(self, path, config=None):
        tableio.write_csv(path, self.csv_fieldnames(len(self.d0)), self.csv_rows(), config)


def speed_expansion(
    model: ModelSpec,
    gamma: float,
    order: int,
    n_per_axis: int | None = None,
) -> ExpansionReport:
    """Per-order speed approximations d0 + g d1 + g^2 d2 + g^3 d3.

    The order-2 term uses the Green increments of the mean kernel at the
    requested gamma (closed form in d=1, symmetrized quadrature in d>=2);
    the gamma-independent limit increments are reported alongside for d>=2.
    Order 3 requires a drifted base kernel and uses the limit increments.
    """
    if order not in (0, 1, 2, 3):
        raise UsageError("order must be in {0, 1, 2, 3}")
    gamma = model.check_gamma(gamma)
    if not model.hypothesis_h:
        raise UsageError("drift hypothesis violated: d0 = d1 = 0")
    d = model.d
    d0 = model.d0
    d1 = model.d1
    if order == 3 and np.linalg.norm(d0) <= PROB_TOL:
        raise UsageError("order 3 requires a nonzero base drift")

    v_order: dict[int, np.ndarray] = {0: d0.copy()}
    if order >= 1:
        v_order[1] = d0 + gamma * d1

    degenerate = model.nu.is_degenerate()
    d2_gamma = d2_vec = d3_vec = None
    j_source = "degenerate" if degenerate else ("closed-form-1d" if d == 1 else "quadrature")

    if order >= 2:
        if degenerate:
            d2_gamma = np.zeros(d)
            d2_vec = np.zeros(d) if d >= 2 else None
        else:
            if gamma == 0.0:
                raise UsageError("order >= 2 expansion terms need a nonzero gamma")
            C = covariance(model.nu)
            if d == 1:
                j_gamma = j_closed_form_1d(model.p_gamma(gamma), gamma=gamma)
            else:
                j_gamma = j_exact(model.p_gamma(gamma), n_per_axis, gamma=gamma)
            d2_gamma = weights_to_drift(second_order_weights(C, j_gamma, d), d)
            if d >= 2:
                d2_vec = weights_to_drift(second_order_weights(C, j_limit(model, n_per_axis), d), d)
        v_order[2] = v_order[1] + gamma**2 * d2_gamma

    if order >= 3:
        if degenerate:
            d3_vec = np.zeros(d)
        else:
            T = third_moments(model.nu)
            if d == 1:
                j_lim = j_closed_form_1d(model.p0, gamma=0.0)
            else:
                j_lim = j_limit(model, n_per_axis)
            d3_vec = weights_to_drift(third_order_weights(T, j_lim, d), d)
        v_order[3] = v_order[2] + gamma**3 * d3_vec

    return ExpansionReport(gamma, order, d0, d1, d2_gamma, d2_vec, d3_vec, v_order, j_source)


def solomon_speed(model: ModelSpec, gamma: float) -> float:
    """Exact annealed speed of the d=1 walk (Solomon's formula).

    Ballistic to the right iff E[w(-e1)/w(e1)] < 1, in which case the speed
    is (1 - E[rho]) / (1 + E[rho]); mirrored for leftward motion.  Raises in
    the non-ballistic regime.
    """
    if model.d != 1:
        raise UsageError("Solomon's formula applies to d = 1 only")
    gamma = model.check_gamma(gamma)
    weights = model.nu.weights
    plus = np.array([model.atom_kernel(gamma, i).probs[0] for i in range(model.nu.n_atoms)])
    minus = 1.0 - plus
    rho_right = float(weights @ (minus / plus))
    if rho_right < 1.0:
        return (1.0 - rho_right) / (1.0 + rho_right)
    rho_left = float(weights @ (plus / minus))
    if rho_left < 1.0:
        return -(1.0 - rho_left) / (1.0 + rho_left)
    raise UsageError("non-ballistic regime: both direction conditions fail")


def speedup_integral(a: float, n_per_axis: int = 2048, doubling_tol: float = 1e-6) -> float:
    """Torus integral driving the d=2 acceleration construction.

    Evaluates (2pi)^-2 times the integral of
    2 (cos u1 - cos u2) / (2 - (1+a) cos u1 - (1-a) cos u2)
    over [0, 2pi]^2 with the origin-excluded midpoint rule.  The value is
    positive for a in (0, 1).  Grid doubling must agree within doubling_tol.
    """
    if not (0.0 < a < 1.0):
        raise UsageError("a must lie in (0, 1)")

    def integrand(u):
        c1 = np.cos(u[..., 0])
        c2 = np.cos(u[..., 1])
        return 2.0 * (c1 - c2) / (2.0 - (1.0 + a) * c1 - (1.0 - a) * c2)

    norm = (2.0 * math.pi) ** 2
    coarse = torus_quadrature(integrand, 2, n_per_axis) / norm
    fine = torus_quadrature(integrand, 2, 2 * n_per_axis) / norm
    if abs(fine - coarse) > doubling_tol:
        raise NumericalError(
            f"speedup integral unstable under grid doubling: {abs(fine - coarse):.3e}"
        )
    return fine


def d2_one_point_route(
    model: ModelSpec,
    gamma: float,
    k: float = 0.999,
    box_radius: int | None = None,
    horizon: int = 100_000,
    tol: float = 1e-10,
) -> np.ndarray:
    """Second-order drift reassembled from single-site Green-ratio weights.

    For each atom the weight 1 - G(0,0)/G'(0,0) of the one-point modification
    is paired with the atom's centered drift; averaging over the law and
    dividing by gamma^2 recovers the second-order drift term by an
    independent route (killed at survival k to regularize).
    """
    gamma = model.check_gamma(gamma)
    if gamma == 0.0:
        raise UsageError("gamma must be nonzero")
    d = model.d
    p = model.p_gamma(gamma)
    origin = (0,) * d
    dirs = directions(d)
    pairs = [(tuple(e.vector(d)), origin) for e in dirs]
    res = series_oracle(p, pairs, horizon=horizon, survival=k, tol=tol, box_radius=box_radius)
    g_e = np.array([res.values[(tuple(e.vector(d)), origin)] for e in dirs])
    centered = model.nu.centered_matrix
    sv = step_vectors(d).astype(np.float64)
    total = np.zeros(d)
    for idx, atom in enumerate(model.nu.atoms):
        B = gamma * float(centered[idx] @ g_e)
        weight = k * B
        if 1.0 - weight <= 0.0:
            raise NumericalError("rank-one update denominator is not positive")
        atom_drift = gamma * (centered[idx] @ sv)
        total += atom.weight * weight * atom_drift
    return total / gamma**2

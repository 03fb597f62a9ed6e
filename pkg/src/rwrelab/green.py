"""Green-function machinery.

Killed Green functions on finite domains by direct linear solve, the
diagonal symmetrization that turns a drifted stationary kernel into a
symmetric kernel with killing, torus quadrature for the Green increments
J_e = G(e,0) - G(0,0) of a transient stationary walk, a truncated-series
convolution oracle, and single-site perturbation bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NumericalError, UsageError
from .model import (
    Direction,
    ModelSpec,
    PROB_TOL,
    TransitionKernel,
    directions,
    drift,
)
from . import tableio

Site = tuple[int, ...]

MAX_DENSE_SITES = 4000
RESIDUAL_TOL = 1e-10


def _neighbors(z: Site) -> list[Site]:
    out = []
    for axis in range(len(z)):
        for sign in (1, -1):
            w = list(z)
            w[axis] += sign
            out.append(tuple(w))
    return out


@dataclass(frozen=True)
class Domain:
    """Finite connected set of lattice sites plus its outer boundary."""

    sites: tuple[Site, ...]

    def __post_init__(self):
        if not self.sites:
            raise UsageError("domain must be nonempty")
        sites = tuple(tuple(int(c) for c in z) for z in self.sites)
        dims = {len(z) for z in sites}
        if len(dims) != 1:
            raise UsageError("inconsistent site dimensions")
        if len(set(sites)) != len(sites):
            raise UsageError("duplicate sites in domain")
        object.__setattr__(self, "sites", sites)
        self._check_connected()

    def _check_connected(self):
        site_set = set(self.sites)
        seen = {self.sites[0]}
        stack = [self.sites[0]]
        while stack:
            z = stack.pop()
            for w in _neighbors(z):
                if w in site_set and w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != len(site_set):
            raise UsageError("domain is not connected")

    @property
    def d(self) -> int:
        return len(self.sites[0])

    @property
    def boundary(self) -> tuple[Site, ...]:
        site_set = set(self.sites)
        out: list[Site] = []
        seen: set[Site] = set()
        for z in self.sites:
            for w in _neighbors(z):
                if w not in site_set and w not in seen:
                    seen.add(w)
                    out.append(w)
        return tuple(sorted(out))

    @classmethod
    def interval(cls, lo: int, hi: int) -> "Domain":
        """One-dimensional domain {lo, ..., hi}."""
        if hi < lo:
            raise UsageError("empty interval")
        return cls(tuple((i,) for i in range(lo, hi + 1)))

    @classmethod
    def box(cls, d: int, radius: int, center: Sequence[int] | None = None) -> "Domain":
        """Cube of side 2*radius+1 around ``center`` (default origin)."""
        if radius < 0:
            raise UsageError("radius must be >= 0")
        center = tuple(center) if center is not None else (0,) * d
        ranges = [range(c - radius, c + radius + 1) for c in center]
        sites = []

        def rec(prefix):
            if len(prefix) == d:
                sites.append(tuple(prefix))
                return
            for v in ranges[len(prefix)]:
                rec(prefix + [v])

        rec([])
        return cls(tuple(sites))


def stationary_env(domain: Domain, kernel: TransitionKernel) -> dict[Site, TransitionKernel]:
    return {z: kernel for z in domain.sites}


@dataclass(frozen=True)
class GreenTable:
    """Killed, stopped Green function row G(z0, .) on U and its boundary.

    Interior values are expected discounted visit counts; boundary values are
    exit probabilities weighted by the killing factor, hence at most 1.
    """

    domain: Domain
    z0: Site
    delta: float
    values: dict[Site, float]
    residual: float
    method: str = "dense-solve"

    def value(self, z: Site) -> float:
        return self.values[tuple(z)]

    def to_csv(self, path, config: Mapping | None = None) -> None:
        rows = [
            (" ".join(str(c) for c in z), v, self.method, len(self.domain.sites), self.residual)
            for z, v in sorted(self.values.items())
        ]
        tableio.write_csv(path, ("site", "value", "method", "resolution", "est_error"), rows, config)


def _assemble_transition(domain: Domain, env: Mapping[Site, TransitionKernel]):
    sites = domain.sites
    index = {z: i for i, z in enumerate(sites)}
    n = len(sites)
    d = domain.d
    dirs = directions(d)
    P = np.zeros((n, n))
    for z in sites:
        kern = env[z]
        i = index[z]
        for e in dirs:
            w = list(z)
            w[e.axis - 1] += e.sign
            j = index.get(tuple(w))
            if j is not None:
                P[i, j] = kern.p(e)
    return sites, index, P


def green_finite(
    domain: Domain,
    delta: float,
    env: Mapping[Site, TransitionKernel],
    z0: Site,
) -> GreenTable:
    """Green row of the walk killed at rate delta and stopped outside U.

    Solves (I - delta P_U)^T g = indicator(z0) on U and extends to the
    boundary by one step.  The one-step balance identity must close to
    RESIDUAL_TOL, otherwise a NumericalError is raised.
    """
    z0 = tuple(int(c) for c in z0)
    if not (0.0 <= delta <= 1.0):
        raise UsageError("delta must lie in [0, 1]")
    if len(domain.sites) > MAX_DENSE_SITES:
        raise UsageError(f"domain has {len(domain.sites)} sites, dense limit is {MAX_DENSE_SITES}")
    sites, index, P = _assemble_transition(domain, env)
    if z0 not in index:
        raise UsageError("source z0 must lie inside the domain")
    n = len(sites)
    rhs = np.zeros(n)
    rhs[index[z0]] = 1.0
    try:
        g = np.linalg.solve(np.eye(n) - delta * P.T, rhs)
    except np.linalg.LinAlgError as exc:  # not reachable for elliptic env, delta <= 1
        raise NumericalError(f"singular Green system: {exc}") from exc

    values: dict[Site, float] = {z: float(g[index[z]]) for z in sites}
    d = domain.d
    dirs = directions(d)
    for b in domain.boundary:
        total = 0.0
        for e in dirs:
            w = list(b)
            w[e.axis - 1] -= e.sign
            w = tuple(w)
            if w in index:
                total += values[w] * delta * env[w].p(e)
        values[b] = total

    if min(values.values()) < -1e-12:
        raise NumericalError("Green value came out negative")
    if any(values[b] > 1.0 + 1e-12 for b in domain.boundary):
        raise NumericalError("boundary exit weight exceeded 1")
    residual = _identity_residual(domain, delta, env, z0, values)
    table = GreenTable(domain, z0, float(delta), values, residual)
    if residual > RESIDUAL_TOL:
        raise NumericalError(f"Green balance identity residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return table


def _identity_residual(domain, delta, env, z0, values) -> float:
    site_set = set(domain.sites)
    dirs = directions(domain.d)
    worst = 0.0
    for z in list(domain.sites) + list(domain.boundary):
        acc = 1.0 if z == z0 else 0.0
        for e in dirs:
            w = list(z)
            w[e.axis - 1] -= e.sign
            w = tuple(w)
            if w in site_set:
                acc += values[w] * delta * env[w].p(e)
        worst = max(worst, abs(values[z] - acc))
    return worst


class GreenMatrix:
    """All-pairs Green values on U plus one-step boundary extension.

    Sources on the boundary follow the stopped convention: the row is the
    indicator of the source itself.
    """

    def __init__(self, domain: Domain, delta: float, env: Mapping[Site, TransitionKernel]):
        if len(domain.sites) > MAX_DENSE_SITES:
            raise UsageError(f"domain has {len(domain.sites)} sites, dense limit is {MAX_DENSE_SITES}")
        self.domain = domain
        self.delta = float(delta)
        sites, index, P = _assemble_transition(domain, env)
        n = len(sites)
        self.sites = sites
        self.index = index
        self.G_UU = np.linalg.inv(np.eye(n) - self.delta * P)
        self.bsites = domain.boundary
        self.bindex = {b: j for j, b in enumerate(self.bsites)}
        # boundary columns: G(x, b) = delta * sum_{w in U adjacent to b} G(x, w) w(w, b-w)
        dirs = directions(domain.d)
        P_Ub = np.zeros((n, len(self.bsites)))
        for b in self.bsites:
            for e in dirs:
                w = list(b)
                w[e.axis - 1] -= e.sign
                w = tuple(w)
                if w in index:
                    P_Ub[index[w], self.bindex[b]] = env[w].p(e)
        self.G_Ub = self.delta * (self.G_UU @ P_Ub)

    def value(self, src: Site, tgt: Site) -> float:
        src = tuple(src)
        tgt = tuple(tgt)
        if src in self.index:
            i = self.index[src]
            if tgt in self.index:
                return float(self.G_UU[i, self.index[tgt]])
            if tgt in self.bindex:
                return float(self.G_Ub[i, self.bindex[tgt]])
            return 0.0
        # stopped at the boundary (or outside): occupation is the start only
        return 1.0 if src == tgt else 0.0

    def row(self, src: Site) -> dict[Site, float]:
        out = {z: self.value(src, z) for z in self.sites}
        out.update({b: self.value(src, b) for b in self.bsites})
        return out


# --- symmetrization ---------------------------------------------------------


@dataclass(frozen=True)
class Symmetrization:
    """Diagonal conjugation data for a stationary kernel.

    ratios[i] = sqrt(p(e_i)/p(-e_i)) defines the multiplier phi(z) =
    prod ratios[i]**z[i]; conjugating the transition operator by phi yields
    k times the symmetric kernel s, where k = 2 sum_i sqrt(p(e_i) p(-e_i)).
    """

    d: int
    ratios: tuple[float, ...]
    k: float
    s: TransitionKernel

    def phi(self, z: Sequence[int]) -> float:
        out = 1.0
        for r, zi in zip(self.ratios, z):
            out *= r ** int(zi)
        return out

    def phi_dir(self, e: Direction) -> float:
        r = self.ratios[e.axis - 1]
        return r if e.sign > 0 else 1.0 / r


def symmetrize(p: TransitionKernel) -> Symmetrization:
    """Split p into (phi, k, s) with M_phi P M_phi^{-1} = k P^s."""
    d = p.d
    ratios = []
    geo = []
    for i in range(d):
        plus = p.probs[2 * i]
        minus = p.probs[2 * i + 1]
        ratios.append(math.sqrt(plus / minus))
        geo.append(math.sqrt(plus * minus))
    k = 2.0 * sum(geo)
    s_probs = []
    for g in geo:
        s_probs.extend([g / k, g / k])
    s = TransitionKernel(d, tuple(s_probs))

    # closed-form cross-checks of the construction
    alt = sum((math.sqrt(p.probs[2 * i]) - math.sqrt(p.probs[2 * i + 1])) ** 2 for i in range(d))
    if abs((1.0 - k) - alt) > PROB_TOL:
        raise NumericalError("symmetrization identity 1 - k = sum (sqrt p+ - sqrt p-)^2 failed")
    sym = Symmetrization(d, tuple(ratios), k, s)
    for e in directions(d):
        lhs = p.p(e) / sym.phi_dir(e)
        if abs(lhs - k * s.p(e)) > PROB_TOL:
            raise NumericalError("symmetrization conjugation identity failed")
    return sym


@dataclass(frozen=True)
class KillingQuadraticReport:
    gamma: float
    k_gamma: float
    K_measured: float
    K_formula: float


def killing_rate_quadratic_check(model: ModelSpec, gamma: float) -> KillingQuadraticReport:
    """Measured vs predicted quadratic vanishing rate of 1 - k at small gamma.

    Requires a base kernel with zero drift and a nonzero order-1 drift; then
    1 - k(gamma) = K gamma^2 + O(gamma^3) with
    K = (1/4) sum_i (p1(e_i) - p1(-e_i))^2 / p0(e_i).
    """
    if np.linalg.norm(model.d0) > PROB_TOL:
        raise UsageError("quadratic killing check requires a driftless base kernel")
    if np.linalg.norm(model.d1) <= PROB_TOL:
        raise UsageError("quadratic killing check requires a nonzero order-1 drift")
    gamma = model.check_gamma(gamma)
    if gamma == 0.0:
        raise UsageError("gamma must be nonzero")
    sym = symmetrize(model.p_gamma(gamma))
    p1 = model.p1
    p0 = model.p0.as_array()
    K = 0.25 * sum(
        (p1[2 * i] - p1[2 * i + 1]) ** 2 / p0[2 * i] for i in range(model.d)
    )
    return KillingQuadraticReport(gamma, sym.k, (1.0 - sym.k) / gamma**2, float(K))


# --- torus quadrature -------------------------------------------------------

_CHUNK_CELLS = 1 << 22


def torus_quadrature(
    integrand: Callable[[np.ndarray], np.ndarray],
    d: int,
    n_per_axis: int,
    exclude_origin: bool = True,
) -> float:
    """Tensor-product rectangle rule for integrals over [0, 2pi]^d.

    With ``exclude_origin`` the grid is offset by half a cell (midpoint rule),
    so u = 0 and u = (pi, ..., pi) are never sampled for even n.  The
    integrand receives an (..., d) array of angles and must return finite
    values at every node.
    """
    if n_per_axis < 1:
        raise UsageError("n_per_axis must be >= 1")
    h = 2.0 * math.pi / n_per_axis
    nodes = (np.arange(n_per_axis) + (0.5 if exclude_origin else 0.0)) * h
    chunk = max(1, min(n_per_axis, _CHUNK_CELLS // max(1, n_per_axis ** (d - 1))))
    partials = []
    for start in range(0, n_per_axis, chunk):
        first = nodes[start : start + chunk]
        grids = np.meshgrid(first, *([nodes] * (d - 1)), indexing="ij")
        mesh = np.stack(grids, axis=-1)
        vals = np.asarray(integrand(mesh), dtype=np.float64)
        if vals.shape != mesh.shape[:-1]:
            raise UsageError("integrand returned wrong shape")
        if not np.all(np.isfinite(vals)):
            raise NumericalError("integrand is not finite at a quadrature node")
        partials.append(vals.sum())
    return float(np.sum(partials) * h**d)


def _green_quad_batch(
    cos_weights: np.ndarray,
    numerators: Sequence[tuple[str, int | None]],
    n_per_axis: int,
) -> list[float]:
    """Normalized torus integrals numerator / (1 - sum_j w_j cos u_j).

    Numerators: ("one", None), ("cos", axis), or ("cos_minus_one", axis).
    Returns (2pi)^-d * integral for each numerator, evaluated on the
    origin-excluded midpoint grid.
    """
    d = len(cos_weights)
    h = 2.0 * math.pi / n_per_axis
    nodes = (np.arange(n_per_axis) + 0.5) * h
    cosv = np.cos(nodes)
    chunk = max(1, min(n_per_axis, _CHUNK_CELLS // max(1, n_per_axis ** (d - 1))))
    sums = [0.0 for _ in numerators]

    for start in range(0, n_per_axis, chunk):
        c0 = cosv[start : start + chunk]
        m = len(c0)
        denom = np.ones((m,) + (n_per_axis,) * (d - 1))
        denom -= cos_weights[0] * c0.reshape((m,) + (1,) * (d - 1))
        for j in range(1, d):
            shape = [1] * d
            shape[j] = n_per_axis
            shape[0] = 1
            denom -= cos_weights[j] * cosv.reshape(shape)
        if denom.min() <= 0.0:
            raise NumericalError("Green quadrature denominator is not positive")
        inv = 1.0 / denom
        for idx, (kind, axis) in enumerate(numerators):
            if kind == "one":
                term = inv.sum()
            else:
                if axis == 0:
                    c = c0.reshape((m,) + (1,) * (d - 1))
                else:
                    shape = [1] * d
                    shape[axis] = n_per_axis
                    c = cosv.reshape(shape)
                if kind == "cos":
                    term = (inv * c).sum()
                elif kind == "cos_minus_one":
                    term = (inv * (c - 1.0)).sum()
                else:
                    raise UsageError(f"unknown numerator kind {kind!r}")
            sums[idx] += term
    return [s / n_per_axis**d for s in sums]


def origin_green(p: TransitionKernel, n_per_axis: int) -> tuple[float, float]:
    """Value and grid-doubling error of the symmetrized Green function at 0."""
    sym = symmetrize(p)
    if sym.k >= 1.0:
        raise UsageError("kernel is symmetric, origin Green value diverges")
    w = 2.0 * sym.k * np.array([sym.s.probs[2 * i] for i in range(p.d)])
    coarse = _green_quad_batch(w, [("one", None)], n_per_axis)[0]
    fine = _green_quad_batch(w, [("one", None)], 2 * n_per_axis)[0]
    return fine, abs(fine - coarse)


# --- J tables ---------------------------------------------------------------

DEFAULT_GRID = {2: 256, 3: 64}


@dataclass(frozen=True)
class JTable:
    """Green increments G(e, 0) - G(0, 0) per direction for one kernel."""

    gamma: float | None
    values: dict[Direction, float]
    method: str
    resolution: int
    est_error: dict[Direction, float] = field(default_factory=dict)

    def value(self, e: Direction) -> float:
        return self.values[e]

    def as_array(self, d: int) -> np.ndarray:
        return np.array([self.values[e] for e in directions(d)], dtype=np.float64)

    def max_abs(self) -> float:
        return max(abs(v) for v in self.values.values())

    def check_kappa_bound(self, kappa0: float) -> bool:
        """Every increment is bounded by 1/kappa0 in absolute value."""
        return self.max_abs() <= 1.0 / kappa0 + PROB_TOL

    def to_csv(self, path, config: Mapping | None = None) -> None:
        rows = [
            (e.key, self.values[e], self.method, self.resolution, self.est_error.get(e, 0.0))
            for e in sorted(self.values, key=lambda e: e.index)
        ]
        tableio.write_csv(path, ("direction", "value", "method", "resolution", "est_error"), rows, config)


def _j_from_weights(
    d: int,
    cos_weights: np.ndarray,
    phi_dir: Callable[[Direction], float],
    include_ratio_term: bool,
    n_per_axis: int,
) -> dict[Direction, float]:
    numerators: list[tuple[str, int | None]] = []
    for i in range(d):
        numerators.append(("cos", i))
        numerators.append(("cos_minus_one", i))
    vals = _green_quad_batch(cos_weights, numerators, n_per_axis)
    out: dict[Direction, float] = {}
    for i in range(d):
        a_i = vals[2 * i]
        b_i = vals[2 * i + 1]
        for sign in (1, -1):
            e = Direction(i + 1, sign)
            ratio = (phi_dir(e.opposite()) - 1.0) * a_i if include_ratio_term else 0.0
            out[e] = ratio + b_i
    return out


def j_exact(
    p_gamma: TransitionKernel,
    n_per_axis: int | None = None,
    gamma: float | None = None,
    check_tol: float | None = None,
) -> JTable:
    """Green increments of the stationary kernel via symmetrized quadrature.

    Valid for d >= 2 whenever the symmetrization killing factor is below 1
    (the kernel must carry a drift in some axis).  Evaluates the quadrature
    at n and 2n per axis; the difference is reported as est_error, and
    optionally enforced below ``check_tol``.
    """
    d = p_gamma.d
    if d < 2:
        raise UsageError("j_exact requires d >= 2; use the d=1 closed form")
    n = n_per_axis or DEFAULT_GRID.get(d)
    if n is None:
        raise UsageError(f"no default grid for d={d}, pass n_per_axis")
    sym = symmetrize(p_gamma)
    if sym.k >= 1.0 - 1e-13:
        raise UsageError("killing factor is 1: kernel has no drift in any axis")
    w = 2.0 * sym.k * np.array([sym.s.probs[2 * i] for i in range(d)])

    coarse = _j_from_weights(d, w, sym.phi_dir, True, n)
    fine = _j_from_weights(d, w, sym.phi_dir, True, 2 * n)
    err = {e: abs(fine[e] - coarse[e]) for e in fine}
    if check_tol is not None and max(err.values()) > check_tol:
        raise NumericalError(
            f"grid doubling moved a J value by {max(err.values()):.3e} > {check_tol}"
        )
    return JTable(gamma, fine, "quadrature", 2 * n, err)


def j_limit(model: ModelSpec, n_per_axis: int | None = None, check_tol: float | None = None) -> JTable:
    """Leading gamma-independent term of the Green increments, d >= 2.

    With a drifted base kernel both quadrature terms are evaluated at the
    base kernel.  With a driftless base kernel (but nonzero order-1 drift)
    the multiplier term drops and only the bounded (cos u_i - 1) integrand
    survives, with the base kernel probabilities as cosine weights.
    """
    d = model.d
    if d < 2:
        raise UsageError("j_limit requires d >= 2")
    if not model.hypothesis_h:
        raise UsageError("drift hypothesis violated: d0 = d1 = 0")
    n = n_per_axis or DEFAULT_GRID.get(d)
    if n is None:
        raise UsageError(f"no default grid for d={d}, pass n_per_axis")
    if np.linalg.norm(model.d0) > PROB_TOL:
        sym = symmetrize(model.p0)
        w = 2.0 * sym.k * np.array([sym.s.probs[2 * i] for i in range(d)])
        coarse = _j_from_weights(d, w, sym.phi_dir, True, n)
        fine = _j_from_weights(d, w, sym.phi_dir, True, 2 * n)
    else:
        p0 = model.p0.as_array()
        w = 2.0 * np.array([p0[2 * i] for i in range(d)])
        coarse = _j_from_weights(d, w, lambda e: 1.0, False, n)
        fine = _j_from_weights(d, w, lambda e: 1.0, False, 2 * n)
    err = {e: abs(fine[e] - coarse[e]) for e in fine}
    if check_tol is not None and max(err.values()) > check_tol:
        raise NumericalError(
            f"grid doubling moved a J value by {max(err.values()):.3e} > {check_tol}"
        )
    return JTable(None, fine, "quadrature", 2 * n, err)


def j_closed_form_1d(p_gamma: TransitionKernel, gamma: float | None = None) -> JTable:
    """Exact Green increments for a drifted walk on Z.

    The walk transient to the right returns to 0 from -e1 almost surely, so
    that increment vanishes; the increment from +e1 is -1/p(e1).  Mirrored
    for a leftward drift.
    """
    if p_gamma.d != 1:
        raise UsageError("closed form applies to d = 1 only")
    plus, minus = p_gamma.probs
    dr = plus - minus
    if abs(dr) <= PROB_TOL:
        raise UsageError("closed form needs a nonzero drift")
    if dr > 0:
        values = {Direction(1, 1): -1.0 / plus, Direction(1, -1): 0.0}
    else:
        values = {Direction(1, 1): 0.0, Direction(1, -1): -1.0 / minus}
    return JTable(gamma, values, "closed-form-1d", 0, {e: 0.0 for e in values})


# --- truncated series oracle -------------------------------------------------

DEFAULT_BOX = {1: 4096, 2: 300, 3: 48}


@dataclass(frozen=True)
class SeriesResult:
    """Partial sums of sum_n k^n p_n evaluated at requested displacements."""

    values: dict[tuple[Site, Site], float]
    n_used: int
    tail_bound: float
    box_radius: int


def series_oracle(
    p: TransitionKernel,
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    horizon: int = 100_000,
    survival: float = 1.0,
    tol: float = 1e-10,
    box_radius: int | None = None,
    block: int = 64,
) -> SeriesResult:
    """Green values by repeated convolution on a truncated box.

    For survival < 1 the analytic tail bound k^(n+1)/(1-k) drives early
    stopping.  For survival = 1 the kernel must be drifted and stopping is
    empirical: once the contribution over a whole block of steps falls below
    tol the series is declared converged.  Exhausting the horizon first is a
    hard error.
    """
    d = p.d
    if not (0.0 <= survival <= 1.0):
        raise UsageError("survival factor must lie in [0, 1]")
    if survival == 1.0 and np.linalg.norm(drift(p)) <= PROB_TOL:
        raise UsageError("survival = 1 requires a drifted kernel")
    disps = []
    for z, z2 in pairs:
        w = tuple(int(b) - int(a) for a, b in zip(z, z2))
        if len(w) != d:
            raise UsageError("pair dimension mismatch")
        disps.append(w)
    R = box_radius or DEFAULT_BOX.get(d, 32)
    if any(abs(c) > R for w in disps for c in w):
        raise UsageError("displacement outside the truncation box")

    shape = (2 * R + 1,) * d
    cur = np.zeros(shape)
    center = (R,) * d
    cur[center] = 1.0
    probs = p.as_array()
    totals = [0.0] * len(disps)
    points = [tuple(R + c for c in w) for w in disps]

    kpow = 1.0
    block_mag = 0.0
    n_used = 0
    tail = math.inf
    converged = False
    for n in range(horizon + 1):
        contrib = 0.0
        for i, pt in enumerate(points):
            v = kpow * cur[pt]
            totals[i] += v
            contrib = max(contrib, v)
        block_mag = max(block_mag, contrib)
        n_used = n
        if survival < 1.0:
            analytic = kpow * survival / (1.0 - survival)
            if analytic < tol:
                tail = analytic
                converged = True
                break
        if (n + 1) % block == 0:
            if block_mag < tol:
                tail = block_mag * block
                converged = True
                break
            block_mag = 0.0
        if n == horizon:
            break
        nxt = np.zeros_like(cur)
        for e in directions(d):
            axis = e.axis - 1
            sl_dst = [slice(None)] * d
            sl_src = [slice(None)] * d
            if e.sign > 0:
                sl_dst[axis] = slice(1, None)
                sl_src[axis] = slice(0, -1)
            else:
                sl_dst[axis] = slice(0, -1)
                sl_src[axis] = slice(1, None)
            nxt[tuple(sl_dst)] += probs[e.index] * cur[tuple(sl_src)]
        cur = nxt
        kpow *= survival

    if not converged:
        raise NumericalError(
            f"series horizon {horizon} too small: last block magnitude {block_mag:.3e} >= {tol}"
        )
    values = {
        (tuple(int(a) for a in z), tuple(int(b) for b in z2)): totals[i]
        for i, (z, z2) in enumerate(pairs)
    }
    return SeriesResult(values, n_used, tail, R)


def j_series(
    p: TransitionKernel,
    horizon: int = 100_000,
    survival: float = 1.0,
    tol: float = 1e-10,
    box_radius: int | None = None,
    gamma: float | None = None,
) -> JTable:
    """Green increments via the truncated-series oracle."""
    d = p.d
    origin = (0,) * d
    dirs = directions(d)
    pairs = [(tuple(e.vector(d)), origin) for e in dirs] + [(origin, origin)]
    res = series_oracle(p, pairs, horizon=horizon, survival=survival, tol=tol, box_radius=box_radius)
    g00 = res.values[(origin, origin)]
    values = {e: res.values[(tuple(e.vector(d)), origin)] - g00 for e in dirs}
    err = {e: res.tail_bound for e in dirs}
    return JTable(gamma, values, "series", res.n_used, err)


# --- single-site perturbation -------------------------------------------------


def one_point_green_ratio(
    model: ModelSpec,
    gamma: float,
    atom_index: int,
    box_radius: int | None = None,
    k: float = 0.999,
    horizon: int = 100_000,
    tol: float = 1e-10,
) -> float:
    """Relative Green-function gain from replacing the mean kernel at 0.

    Computes 1 - G(0,0)/G'(0,0) where G' belongs to the environment equal to
    the mean kernel everywhere except at the origin, which carries the given
    atom's kernel.  G' follows from G by the exact rank-one single-site
    update, so the weight reduces to k * sum_e dw(e) G(e, 0).
    """
    gamma = model.check_gamma(gamma)
    p = model.p_gamma(gamma)
    d = model.d
    origin = (0,) * d
    dirs = directions(d)
    pairs = [(tuple(e.vector(d)), origin) for e in dirs]
    res = series_oracle(p, pairs, horizon=horizon, survival=k, tol=tol, box_radius=box_radius)
    centered = model.nu.centered_matrix[atom_index]
    B = sum(
        gamma * centered[e.index] * res.values[(tuple(e.vector(d)), origin)] for e in dirs
    )
    denom = 1.0 - k * B
    if denom <= 0.0:
        raise NumericalError("rank-one update denominator is not positive")
    return k * B


# --- single-site perturbation bounds -----------------------------------------


@dataclass(frozen=True)
class PerturbationBoundReport:
    """Worst-case ratios of the two perturbation inequalities over a domain.

    ratio_first compares |G' - G| against (2d sup|dw| / kappa0^2) G';
    ratio_second compares the remainder after subtracting the explicit
    first-order term against (2d sup|dw|)^2 / kappa0^3 G'.  Both must stay
    at or below 1.
    """

    ratio_first: float
    ratio_second: float
    sup_delta: float
    kappa0: float

    @property
    def first_holds(self) -> bool:
        return self.ratio_first <= 1.0 + 1e-9

    @property
    def second_holds(self) -> bool:
        return self.ratio_second <= 1.0 + 1e-9


def perturbation_bound_report(
    domain: Domain,
    delta: float,
    env: Mapping[Site, TransitionKernel],
    z: Site,
    delta_omega: Sequence[float],
    kappa0: float | None = None,
) -> PerturbationBoundReport:
    """Check the single-site Green perturbation bounds on every source/target.

    ``delta_omega`` is the increment vector (canonical direction order) added
    to the kernel at z; it must sum to zero and keep the kernel elliptic.
    When kappa0 is omitted the tightest valid constant (the minimum
    probability over both environments) is used, which is the hardest test.
    """
    z = tuple(int(c) for c in z)
    d = domain.d
    dw = np.asarray(delta_omega, dtype=np.float64)
    if abs(dw.sum()) > PROB_TOL:
        raise UsageError("perturbation increments must sum to zero")
    base = env[z].as_array()
    pert_kernel = TransitionKernel(d, tuple(base + dw))
    env2 = dict(env)
    env2[z] = pert_kernel

    if kappa0 is None:
        kappa0 = min(min(k.min_prob for k in env.values()), pert_kernel.min_prob)

    G = GreenMatrix(domain, delta, env)
    G2 = GreenMatrix(domain, delta, env2)
    sites = list(domain.sites)
    targets = sites + list(domain.boundary)
    sup_dw = float(np.max(np.abs(dw)))
    c1 = 2 * d * sup_dw / kappa0**2
    c2 = (2 * d * sup_dw) ** 2 / kappa0**3

    A = np.array([[G.value(y, t) for t in targets] for y in sites])
    B = np.array([[G2.value(y, t) for t in targets] for y in sites])
    # first-order term: G(y, z) sum_e dw(e) (delta G(z+e, t) - G(z, t))
    dirs = directions(d)
    inner = np.zeros(len(targets))
    for e in dirs:
        ze = tuple(np.asarray(z) + e.vector(d))
        inner += dw[e.index] * np.array(
            [delta * G.value(ze, t) - G.value(z, t) for t in targets]
        )
    gz = np.array([G.value(y, z) for y in sites])
    T = gz[:, None] * inner[None, :]

    ratio1 = float(np.max(np.abs(B - A) / (c1 * B)))
    ratio2 = float(np.max(np.abs(B - A - T) / (c2 * B)))
    return PerturbationBoundReport(ratio1, ratio2, sup_dw, float(kappa0))

"""Kalikow's auxiliary walk on bounded domains.

The auxiliary kernel at z is the environment average of w(z, e) weighted by
the Green function G(z0, z); its own Green function reproduces the averaged
Green function exactly.  This module builds that kernel by exact enumeration
or Monte Carlo, verifies the identity, expands the kernel to second order in
the disorder strength, and maps the drift field of the infinite-domain walk
on a finite window.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NumericalError, UsageError
from .model import (
    ModelSpec,
    PROB_TOL,
    TransitionKernel,
    covariance,
    directions,
    mix64_words,
    site_atom_indices_array,
    step_vectors,
)
from .green import (
    Domain,
    GreenMatrix,
    MAX_DENSE_SITES,
    Site,
    green_finite,
)
from . import tableio


@dataclass(frozen=True)
class AuxiliaryKernel:
    """Auxiliary-walk transition kernels on a bounded domain."""

    domain: Domain
    delta: float
    z0: Site
    kernels: dict[Site, TransitionKernel]
    method: str
    stderr: dict[Site, np.ndarray] | None
    weights_checked: bool

    def drift(self, z: Site) -> np.ndarray:
        d = self.domain.d
        return self.kernels[tuple(z)].as_array() @ step_vectors(d).astype(np.float64)


def environment_assignments(model: ModelSpec, sites: Sequence[Site]):
    """All atom assignments on ``sites`` with their product weights."""
    weights = model.nu.weights
    n_atoms = model.nu.n_atoms
    for combo in itertools.product(range(n_atoms), repeat=len(sites)):
        w = 1.0
        for a in combo:
            w *= weights[a]
        yield combo, w


def _env_from_assignment(
    model: ModelSpec, gamma: float, sites: Sequence[Site], combo
) -> dict[Site, TransitionKernel]:
    return {z: model.atom_kernel(gamma, a) for z, a in zip(sites, combo)}


def _finalize_kernels(model, domain, num, den) -> dict[Site, TransitionKernel]:
    d = model.d
    kernels = {}
    for z in domain.sites:
        if den[z] <= 0.0:
            raise NumericalError(f"auxiliary kernel weight vanished at {z}")
        row = num[z] / den[z]
        if abs(row.sum() - 1.0) > PROB_TOL:
            raise NumericalError(f"auxiliary kernel row at {z} sums to {row.sum()!r}")
        if row.min() < model.kappa0 - PROB_TOL:
            raise NumericalError(f"auxiliary kernel at {z} violates ellipticity")
        kernels[z] = TransitionKernel(d, tuple(row))
    return kernels


def auxiliary_kernel(
    model: ModelSpec,
    gamma: float,
    domain: Domain,
    delta: float,
    z0: Site,
    budget: int = 1 << 20,
    mc_samples: int = 512,
    master_seed: int = 0,
) -> AuxiliaryKernel:
    """Green-weighted environment average of the transition probabilities.

    Enumerates every environment assignment exactly when the count fits the
    budget, otherwise averages over ``mc_samples`` sampled environments and
    reports a delta-method standard error per site and direction.
    """
    gamma = model.check_gamma(gamma)
    z0 = tuple(int(c) for c in z0)
    d = model.d
    if z0 not in set(domain.sites):
        raise UsageError("z0 must lie inside the domain")
    sites = domain.sites
    n_assign = model.nu.n_atoms ** len(sites)

    num = {z: np.zeros(2 * d) for z in sites}
    den = {z: 0.0 for z in sites}

    if n_assign <= budget:
        for combo, w in environment_assignments(model, sites):
            env = _env_from_assignment(model, gamma, sites, combo)
            table = green_finite(domain, delta, env, z0)
            for z in sites:
                g = table.value(z)
                num[z] += w * g * env[z].as_array()
                den[z] += w * g
        kernels = _finalize_kernels(model, domain, num, den)
        return AuxiliaryKernel(domain, float(delta), z0, kernels, "exact-enumeration", None, True)

    if mc_samples < 2:
        raise UsageError("Monte Carlo mode needs at least 2 samples")
    rng = np.random.default_rng(master_seed)
    cum = np.array(model.nu.cumulative_weights())
    samples_n = {z: [] for z in sites}
    samples_d = {z: [] for z in sites}
    for _ in range(mc_samples):
        draws = np.searchsorted(cum, rng.random(len(sites)), side="right")
        env = _env_from_assignment(model, gamma, sites, tuple(int(a) for a in draws))
        table = green_finite(domain, delta, env, z0)
        for z in sites:
            g = table.value(z)
            samples_n[z].append(g * env[z].as_array())
            samples_d[z].append(g)
    stderr = {}
    for z in sites:
        N = np.array(samples_n[z])
        D = np.array(samples_d[z])
        num[z] = N.mean(axis=0)
        den[z] = float(D.mean())
        ratio = num[z] / den[z]
        var_n = N.var(axis=0, ddof=1)
        var_d = D.var(ddof=1)
        cov_nd = ((N - num[z]) * (D - den[z])[:, None]).sum(axis=0) / (len(D) - 1)
        var_r = (var_n - 2.0 * ratio * cov_nd + ratio**2 * var_d) / (den[z] ** 2 * len(D))
        stderr[z] = np.sqrt(np.maximum(var_r, 0.0))
    kernels = _finalize_kernels(model, domain, num, den)
    return AuxiliaryKernel(domain, float(delta), z0, kernels, "monte-carlo", stderr, True)


def kalikow_identity_residual(
    model: ModelSpec,
    gamma: float,
    domain: Domain,
    delta: float,
    z0: Site,
    budget: int = 1 << 20,
) -> float:
    """Max gap between the averaged Green row and the auxiliary walk's own.

    Both sides are computed exactly (full environment enumeration), so the
    residual measures nothing but floating-point noise; the identity itself
    is an equality.
    """
    gamma = model.check_gamma(gamma)
    z0 = tuple(int(c) for c in z0)
    sites = domain.sites
    n_assign = model.nu.n_atoms ** len(sites)
    if n_assign > budget:
        raise UsageError(f"{n_assign} environment assignments exceed budget {budget}")

    targets = list(sites) + list(domain.boundary)
    averaged = {z: 0.0 for z in targets}
    num = {z: np.zeros(2 * model.d) for z in sites}
    den = {z: 0.0 for z in sites}
    for combo, w in environment_assignments(model, sites):
        env = _env_from_assignment(model, gamma, sites, combo)
        table = green_finite(domain, delta, env, z0)
        for z in targets:
            averaged[z] += w * table.value(z)
        for z in sites:
            g = table.value(z)
            num[z] += w * g * env[z].as_array()
            den[z] += w * g
    kernels = _finalize_kernels(model, domain, num, den)
    aux_table = green_finite(domain, delta, kernels, z0)
    return max(abs(averaged[z] - aux_table.value(z)) for z in targets)


# --- second-order expansion of the auxiliary kernel ---------------------------


@dataclass(frozen=True)
class AuxiliaryExpansionReport:
    """Residuals of the quadratic expansion of the auxiliary kernel."""

    gammas: tuple[float, ...]
    residuals: tuple[float, ...]
    bound_limits: tuple[float, ...]
    fitted_exponent: float

    @property
    def bound_ok(self) -> bool:
        return all(r <= b for r, b in zip(self.residuals, self.bound_limits))

    def to_csv(self, path, config: Mapping | None = None) -> None:
        rows = [
            (g, r, b, r <= b)
            for g, r, b in zip(self.gammas, self.residuals, self.bound_limits)
        ]
        tableio.write_csv(path, ("gamma", "residual", "bound", "bound_ok"), rows, config)


def _green_increment_weights(
    model: ModelSpec, gamma: float, domain: Domain, delta: float, z0: Site, y: Site
) -> np.ndarray:
    """Averaged Green increments at y under the one-point-modified environment.

    For each direction e', averages G(z0, y) (delta G(y+e', y) - G(y, y))
    over environments that carry the mean kernel at y, normalized by the
    averaged G(z0, y).
    """
    d = model.d
    dirs = directions(d)
    sites = domain.sites
    others = [z for z in sites if z != y]
    p_mean = model.p_gamma(gamma)
    num = np.zeros(2 * d)
    den = 0.0
    for combo, w in environment_assignments(model, others):
        env = _env_from_assignment(model, gamma, others, combo)
        env[y] = p_mean
        gm = GreenMatrix(domain, delta, env)
        g0y = gm.value(z0, y)
        gyy = gm.value(y, y)
        for e in dirs:
            ye = tuple(np.asarray(y) + e.vector(d))
            num[e.index] += w * g0y * (delta * gm.value(ye, y) - gyy)
        den += w * g0y
    return num / den


def auxiliary_expansion_residuals(
    model: ModelSpec,
    domain: Domain,
    delta: float,
    z0: Site,
    gammas: Sequence[float],
    budget: int = 1 << 20,
) -> AuxiliaryExpansionReport:
    """Cubic-order residual of the auxiliary kernel's quadratic expansion.

    At each gamma, compares the exact auxiliary kernel against
    p0 + gamma p1 + gamma^2 C . Jtilde, where Jtilde are the averaged Green
    increments under the one-point modification.  Fits the log-log slope of
    the residual (the expansion guarantees slope 3) and checks the explicit
    bound 2 (2d)^2 / kappa0^4 gamma^3.
    """
    z0 = tuple(int(c) for c in z0)
    d = model.d
    dirs = directions(d)
    C = covariance(model.nu)
    p0 = model.p0.as_array()
    p1 = model.p1
    residuals = []
    limits = []
    for gamma in gammas:
        gamma = model.check_gamma(gamma)
        aux = auxiliary_kernel(model, gamma, domain, delta, z0, budget=budget)
        if aux.method != "exact-enumeration":
            raise UsageError("expansion residuals require exact enumeration")
        worst = 0.0
        for y in domain.sites:
            jt = _green_increment_weights(model, gamma, domain, delta, z0, y)
            predicted = p0 + gamma * p1 + gamma**2 * (C @ jt)
            actual = aux.kernels[y].as_array()
            worst = max(worst, float(np.max(np.abs(actual - predicted))))
        residuals.append(worst)
        limits.append(2.0 * (2 * d) ** 2 / model.kappa0**4 * abs(gamma) ** 3)
    # residuals at the floating-point floor carry no scaling information
    usable = [(g, r) for g, r in zip(gammas, residuals) if r > 1e-13]
    if len(usable) >= 2:
        xs = np.log([abs(g) for g, _ in usable])
        ys = np.log([r for _, r in usable])
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = float("nan")
    return AuxiliaryExpansionReport(
        tuple(float(g) for g in gammas), tuple(residuals), tuple(limits), slope
    )


# --- drift field of the infinite-domain walk -----------------------------------


@dataclass(frozen=True)
class DriftField:
    """Auxiliary-walk drifts on a window, with hull and MC noise estimates."""

    window: tuple[Site, ...]
    drifts: dict[Site, np.ndarray]
    stderr: dict[Site, np.ndarray]
    hull: tuple[tuple[float, float], ...] | None
    delta: float
    box_radius: int
    method: str

    def to_csv(self, path, config: Mapping | None = None) -> None:
        d = len(self.window[0])
        fields = (
            [f"z{i + 1}" for i in range(d)]
            + [f"drift{i + 1}" for i in range(d)]
            + ["method"]
            + [f"stderr{i + 1}" for i in range(d)]
        )
        rows = []
        for z in self.window:
            rows.append(
                list(z)
                + [float(x) for x in self.drifts[z]]
                + [self.method]
                + [float(x) for x in self.stderr[z]]
            )
        tableio.write_csv(path, fields, rows, config)


def convex_hull_2d(points: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
    """Monotone-chain convex hull, counterclockwise without repeated endpoint."""
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if len(pts) <= 2:
        return list(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def hull_distance(point: Sequence[float], hull: Sequence[Sequence[float]]) -> float:
    """Euclidean distance from a point to a convex polygon (0 if inside)."""
    px, py = float(point[0]), float(point[1])
    pts = [(float(a), float(b)) for a, b in hull]
    if not pts:
        raise UsageError("empty hull")
    if len(pts) == 1:
        return math.hypot(px - pts[0][0], py - pts[0][1])

    def seg_dist(a, b):
        ax, ay = a
        bx, by = b
        vx, vy = bx - ax, by - ay
        L2 = vx * vx + vy * vy
        t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / L2))
        return math.hypot(px - (ax + t * vx), py - (ay + t * vy))

    if len(pts) == 2:
        return seg_dist(pts[0], pts[1])
    inside = True
    for i in range(len(pts)):
        a = pts[i]
        b = pts[(i + 1) % len(pts)]
        if (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) < 0:
            inside = False
            break
    if inside:
        return 0.0
    return min(seg_dist(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts)))


def _iterative_green_row(prob_grids: np.ndarray, delta: float, center: tuple[int, ...], n_iter: int) -> np.ndarray:
    """Green row G(center, .) on a box via damped Neumann iteration.

    ``prob_grids`` has shape (2d, L, ..., L) holding the per-direction
    transition probabilities of every site; outside the box the walk is
    stopped, inside it is killed at rate delta.
    """
    d = prob_grids.ndim - 1
    g = np.zeros(prob_grids.shape[1:])
    src = np.zeros_like(g)
    src[center] = 1.0
    dirs = directions(d)
    for _ in range(n_iter):
        nxt = src.copy()
        for e in dirs:
            axis = e.axis - 1
            flow = g * prob_grids[e.index]
            sl_dst = [slice(None)] * d
            sl_src = [slice(None)] * d
            if e.sign > 0:
                sl_dst[axis] = slice(1, None)
                sl_src[axis] = slice(0, -1)
            else:
                sl_dst[axis] = slice(0, -1)
                sl_src[axis] = slice(1, None)
            nxt[tuple(sl_dst)] += delta * flow[tuple(sl_src)]
        g = nxt
    return g


def drift_field(
    model: ModelSpec,
    gamma: float,
    window_radius: int,
    delta: float,
    budget: int = 400,
    master_seed: int = 0,
) -> DriftField:
    """Auxiliary-walk drift vectors near the source for the whole-lattice walk.

    The infinite domain is truncated to a box padded by ceil(3/(1-delta))
    around the window (capped at the dense-solver site limit); ``budget``
    Monte Carlo environments estimate the Green-weighted averages, with
    block standard errors over 10 sample blocks.  For d=2 the convex hull
    of the drift set is attached.
    """
    gamma = model.check_gamma(gamma)
    if not (0.0 < delta < 1.0):
        raise UsageError("drift field requires delta in (0, 1)")
    d = model.d
    pad = int(math.ceil(3.0 / (1.0 - delta)))
    rb = window_radius + pad
    while (2 * rb + 1) ** d > MAX_DENSE_SITES and rb > window_radius:
        rb -= 1
    if rb <= window_radius:
        raise UsageError("window too large for the solver box")

    L = 2 * rb + 1
    degenerate = model.nu.is_degenerate()
    n_samples = 1 if degenerate else int(budget)
    if n_samples < 1:
        raise UsageError("budget must allow at least one environment sample")

    axes = [np.arange(-rb, rb + 1)] * d
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    base = model.p0.as_array()
    values = model.nu.values_matrix
    center = (rb,) * d
    n_iter = max(8, int(math.ceil(math.log(1e-13) / math.log(delta))))

    num_blocks = min(10, n_samples)
    block_of = [min(i * num_blocks // n_samples, num_blocks - 1) for i in range(n_samples)]
    num_acc = np.zeros((L,) * d + (2 * d,))
    den_acc = np.zeros((L,) * d)
    block_num = np.zeros((num_blocks,) + (L,) * d + (2 * d,))
    block_den = np.zeros((num_blocks,) + (L,) * d)

    for i in range(n_samples):
        env_seed = np.uint64(_drift_env_seed(master_seed, i))
        atoms = site_atom_indices_array(model.nu, np.full(len(mesh), env_seed, dtype=np.uint64), mesh)
        probs = base[None, :] + gamma * values[atoms]
        prob_grids = np.moveaxis(probs.reshape((L,) * d + (2 * d,)), -1, 0)
        g = _iterative_green_row(prob_grids, delta, center, n_iter)
        contrib_num = g[..., None] * np.moveaxis(prob_grids, 0, -1)
        num_acc += contrib_num
        den_acc += g
        block_num[block_of[i]] += contrib_num
        block_den[block_of[i]] += g

    window_sites = [tuple(z) for z in mesh if np.abs(z).max() <= window_radius]
    sv = step_vectors(d).astype(np.float64)
    drifts = {}
    stderrs = {}
    for z in window_sites:
        idx = tuple(c + rb for c in z)
        row = num_acc[idx] / den_acc[idx]
        drifts[z] = row @ sv
        if n_samples > 1 and not degenerate:
            per_block = []
            for b in range(num_blocks):
                if block_den[b][idx] > 0:
                    per_block.append((block_num[b][idx] / block_den[b][idx]) @ sv)
            per_block = np.array(per_block)
            stderrs[z] = per_block.std(axis=0, ddof=1) / math.sqrt(len(per_block))
        else:
            stderrs[z] = np.zeros(d)

    hull = None
    if d == 2:
        hull = tuple(convex_hull_2d([drifts[z] for z in window_sites]))
    return DriftField(
        tuple(window_sites),
        drifts,
        stderrs,
        hull,
        float(delta),
        rb,
        "exact" if degenerate else "monte-carlo",
    )


def _drift_env_seed(master_seed: int, sample_index: int) -> int:
    return mix64_words(master_seed, 0x64726674, sample_index)  # 'drft'

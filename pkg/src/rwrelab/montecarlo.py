"""Direct annealed simulation and the symmetric kernel-decay experiment.

The walk simulator draws a fresh lazily-sampled environment per replicate
and advances all replicates in lockstep with counter-based randomness, so
every estimate is a pure function of (model, gamma, sizes, master_seed).
The decay experiment evolves the exact n-step distribution of a symmetric
kernel by dynamic-programming convolution on the nonnegative quadrant.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NumericalError, UsageError
from .model import (
    COORD_BOUND,
    Direction,
    ModelSpec,
    TransitionKernel,
    mix64_array,
    mix64_words,
    site_atom_indices_array,
    step_vectors,
)
from .expansion import solomon_speed, speed_expansion
from . import tableio

_ENV_TAG = 0x656E76        # 'env'
_WALK_TAG = 0x77616C6B     # 'walk'
_STEP_TAG = 0x73746570     # 'step'

MEMORY_BUDGET_BYTES = 1_500_000_000


@dataclass(frozen=True)
class SimEstimate:
    """Endpoint speed estimate over independent replicates."""

    v_hat: np.ndarray
    stderr: np.ndarray
    n_steps: int
    n_replicates: int
    master_seed: int

    def to_csv(self, path, config: Mapping | None = None) -> None:
        d = len(self.v_hat)
        rows = [
            (f"e{i + 1}", float(self.v_hat[i]), float(self.stderr[i]))
            for i in range(d)
        ]
        tableio.write_csv(path, ("component", "v_hat", "stderr"), rows, config)


def _replicate_seeds(master_seed: int, n_replicates: int, tag: int) -> np.ndarray:
    return np.array(
        [mix64_words(master_seed, tag, r) for r in range(n_replicates)], dtype=np.uint64
    )


def simulate_endpoints(
    model: ModelSpec, gamma: float, n_steps: int, n_replicates: int, master_seed: int
) -> np.ndarray:
    """(n_replicates, d) endpoint positions of the annealed walk.

    Each replicate r walks in its own environment, resolved lazily through
    the deterministic site sampler with seed mix(master_seed, 'env', r);
    step choices consume the counter-based stream mix(master_seed, 'walk', r)
    xor mix('step', t).  Bit-stable across runs and thread counts.
    """
    gamma = model.check_gamma(gamma)
    if n_steps < 1:
        raise UsageError("n_steps must be >= 1")
    if n_steps >= COORD_BOUND:
        raise UsageError("n_steps would let the walk escape the coordinate box")
    if n_replicates < 1:
        raise UsageError("n_replicates must be >= 1")
    d = model.d
    env_seeds = _replicate_seeds(master_seed, n_replicates, _ENV_TAG)
    walk_seeds = _replicate_seeds(master_seed, n_replicates, _WALK_TAG)

    atom_kernels = np.array(
        [model.atom_kernel(gamma, i).probs for i in range(model.nu.n_atoms)]
    )
    cum_kernels = np.cumsum(atom_kernels, axis=1)
    cum_kernels[:, -1] = 1.0
    steps = step_vectors(d)

    pos = np.zeros((n_replicates, d), dtype=np.int64)
    for t in range(n_steps):
        atom = site_atom_indices_array(model.nu, env_seeds, pos)
        hw = mix64_array(walk_seeds ^ np.uint64(mix64_words(_STEP_TAG, t)))
        u = (hw >> np.uint64(11)).astype(np.float64) * 2.0**-53
        rows = cum_kernels[atom]
        idx = (u[:, None] >= rows).sum(axis=1)
        pos += steps[idx]
    return pos


def annealed_speed(
    model: ModelSpec, gamma: float, n_steps: int, n_replicates: int, master_seed: int
) -> SimEstimate:
    """Mean endpoint velocity X_n / n with per-component standard error."""
    if not model.hypothesis_h:
        warnings.warn("drift hypothesis violated: the walk may not be ballistic")
    pos = simulate_endpoints(model, gamma, n_steps, n_replicates, master_seed)
    speeds = pos.astype(np.float64) / n_steps
    v_hat = speeds.mean(axis=0)
    if n_replicates > 1:
        stderr = speeds.std(axis=0, ddof=1) / math.sqrt(n_replicates)
    else:
        stderr = np.zeros(model.d)
    return SimEstimate(v_hat, stderr, n_steps, n_replicates, int(master_seed))


# --- order scaling ------------------------------------------------------------

EXACT_STDERR_FLOOR = 1e-12


@dataclass(frozen=True)
class OrderScalingReport:
    """Log-log fit of |v_true - v_order| against gamma."""

    order: int
    gammas: tuple[float, ...]
    errors: tuple[float, ...]
    stderrs: tuple[float, ...]
    used: tuple[bool, ...]
    slope: float
    noise_floor: bool
    source: str

    def csv_rows(self):
        for g, e, s, u in zip(self.gammas, self.errors, self.stderrs, self.used):
            yield (g, self.order, e, s, u, self.source)

    def to_csv(self, path, config: Mapping | None = None) -> None:
        tableio.write_csv(
            path,
            ("gamma", "order", "error", "stderr", "used_in_fit", "source"),
            self.csv_rows(),
            config,
        )


def order_scaling(
    model: ModelSpec,
    gammas: Sequence[float],
    order: int,
    n_steps: int | None = None,
    n_replicates: int | None = None,
    master_seed: int | None = None,
    source: str = "auto",
    n_per_axis: int | None = None,
) -> OrderScalingReport:
    """Fitted exponent of the expansion error over a list of gammas.

    The reference speed is exact (the d=1 formula) when available, else a
    Monte Carlo estimate with the supplied simulation sizes.  Points whose
    error does not exceed 5x their standard error are dropped from the fit;
    if fewer than two points survive the noise-floor flag is set and the
    slope is NaN.
    """
    if source == "auto":
        source = "exact" if model.d == 1 else "mc"
    if source not in ("exact", "mc"):
        raise UsageError("source must be 'auto', 'exact', or 'mc'")
    if source == "exact" and model.d != 1:
        raise UsageError("exact reference speed is only available in d = 1")
    if source == "mc":
        if n_steps is None or n_replicates is None or master_seed is None:
            raise UsageError("mc source needs n_steps, n_replicates, and master_seed")

    errors = []
    stderrs = []
    for i, gamma in enumerate(gammas):
        gamma = model.check_gamma(gamma)
        report = speed_expansion(model, gamma, order, n_per_axis=n_per_axis)
        v_ord = report.v_order[order]
        u_dir = report.d0 + gamma * report.d1
        u_dir = u_dir / np.linalg.norm(u_dir)
        if source == "exact":
            v_true = np.array([solomon_speed(model, gamma)])
            err = abs(float((v_true - v_ord) @ u_dir))
            sig = EXACT_STDERR_FLOOR
        else:
            est = annealed_speed(
                model, gamma, n_steps, n_replicates, mix64_words(master_seed, i)
            )
            err = abs(float((est.v_hat - v_ord) @ u_dir))
            sig = float(np.sqrt(((est.stderr * u_dir) ** 2).sum()))
        errors.append(err)
        stderrs.append(sig)

    used = [e > 5.0 * s for e, s in zip(errors, stderrs)]
    if sum(used) < 2:
        slope = float("nan")
        noise_floor = True
    else:
        xs = np.log([g for g, u in zip(gammas, used) if u])
        ys = np.log([e for e, u in zip(errors, used) if u])
        slope = float(np.polyfit(xs, ys, 1)[0])
        noise_floor = False
    return OrderScalingReport(
        order,
        tuple(float(g) for g in gammas),
        tuple(errors),
        tuple(stderrs),
        tuple(used),
        slope,
        noise_floor,
        source,
    )


# --- kernel-difference decay ---------------------------------------------------


@dataclass(frozen=True)
class DecayTable:
    """L1 distances sum_z |p_{n+1}(0,z) - p_n(e,z)| and their decay fit."""

    n_values: tuple[int, ...]
    values: dict[Direction, tuple[float, ...]]
    fitted: dict[Direction, float]

    @property
    def fitted_exponent(self) -> float:
        """Worst (largest) fitted slope across the requested directions."""
        return max(self.fitted.values())

    def rows(self):
        for e in sorted(self.values, key=lambda e: e.index):
            for n, v in zip(self.n_values, self.values[e]):
                yield (n, e.key, v)

    def to_csv(self, path, config: Mapping | None = None) -> None:
        tableio.write_csv(path, ("n", "direction", "l1_difference"), self.rows(), config)


def _quadrant_step(
    cur: np.ndarray, nxt: np.ndarray, src_ext: int, dst_ext: int, s_axis: np.ndarray
) -> None:
    """One convolution step on the nonnegative quadrant with axis reflection.

    ``src_ext``/``dst_ext`` are the active extents (indices 0..ext-1).  When
    the destination extent equals the source extent the window is capped and
    mass stepping past the cap is dropped; the caller's mass check bounds
    that loss.
    """
    d = cur.ndim
    nxt[(slice(0, dst_ext),) * d] = 0.0
    for axis in range(d):
        s = s_axis[axis]
        base = [slice(0, src_ext)] * d
        # from the negative-side neighbor (shift up, clipped at the cap)
        lo_dst = list(base)
        lo_src = list(base)
        lo_dst[axis] = slice(1, dst_ext)
        lo_src[axis] = slice(0, dst_ext - 1)
        nxt[tuple(lo_dst)] += s * cur[tuple(lo_src)]
        # from the positive-side neighbor (shift down)
        hi_dst = list(base)
        hi_src = list(base)
        hi_dst[axis] = slice(0, src_ext - 1)
        hi_src[axis] = slice(1, src_ext)
        nxt[tuple(hi_dst)] += s * cur[tuple(hi_src)]
        # reflection: the -1 neighbor of row 0 is row 1
        if src_ext >= 2:
            edge_dst = list(base)
            edge_src = list(base)
            edge_dst[axis] = slice(0, 1)
            edge_src[axis] = slice(1, 2)
            nxt[tuple(edge_dst)] += s * cur[tuple(edge_src)]


def _quadrant_mass(q: np.ndarray, extent: int) -> float:
    """Total lattice mass of a quadrant array (axis cells count once)."""
    d = q.ndim
    view = q[(slice(0, extent),) * d]
    total = view
    for axis in range(d):
        w = np.full(extent, 2.0)
        w[0] = 1.0
        shape = [1] * d
        shape[axis] = extent
        total = total * w.reshape(shape)
    return float(total.sum())


def _l1_shifted_difference(
    q_next: np.ndarray, q_cur: np.ndarray, extent_next: int, axis: int
) -> float:
    """sum_z |p_{n+1}(0, z) - p_n(0, z - e_axis)| from quadrant arrays.

    Both distributions are even in every axis except the shifted one, which
    must be scanned over its full signed range.
    """
    d = q_next.ndim
    L = extent_next  # indices 0 .. L-1 hold |coordinate| values
    perm = [axis] + [a for a in range(d) if a != axis]
    qn = np.transpose(q_next, perm)
    qc = np.transpose(q_cur, perm)
    rest = (slice(0, L),) * (d - 1)
    weights = None
    if d > 1:
        w = np.full(L, 2.0)
        w[0] = 1.0
        weights = w
        for _ in range(d - 2):
            weights = np.multiply.outer(weights, w)
    total = 0.0
    for z0 in range(-L, L + 1):
        a = abs(z0)
        b = abs(z0 - 1)
        f = qn[a][rest] if a < L else 0.0
        g = qc[b][rest] if b < L else 0.0
        diff = np.abs(f - g)
        if d > 1:
            total += float((diff * weights).sum())
        else:
            total += float(diff)
    return total


def transition_difference_decay(
    s: TransitionKernel,
    n_values: Sequence[int],
    dirs: Sequence[Direction] | None = None,
) -> DecayTable:
    """Exact DP evaluation of the one-step shift sensitivity of p_n.

    The kernel must be symmetric per axis.  For each requested n the L1
    distance between p_{n+1}(0, .) and p_n(e, .) is computed from the exact
    n-step distribution; a log-log line is fitted per direction.

    The active window is capped at ~9.5 standard deviations of the walk,
    where the dropped tail mass is far below the 1e-12 conservation check
    that every captured slice must pass.
    """
    d = s.d
    if d > 3:
        raise UsageError("decay experiment supports d <= 3")
    if not s.is_axis_symmetric():
        raise UsageError("decay experiment needs a per-axis symmetric kernel")
    n_values = sorted(int(n) for n in n_values)
    if not n_values or n_values[0] < 1:
        raise UsageError("n values must be positive")
    if dirs is None:
        dirs = [Direction(axis, 1) for axis in range(1, d + 1)]
    n_max = n_values[-1]
    if d == 3 and n_max > 512:
        raise UsageError("d=3 decay runs are capped at n=512")
    s_axis = np.array([s.probs[2 * i] for i in range(d)])

    sigma_max = math.sqrt(n_max * float(2.0 * s_axis.max()))
    cap = min(n_max + 2, int(math.ceil(9.5 * sigma_max)) + 10)
    size = cap + 2
    bytes_needed = 3 * 8 * size**d
    if bytes_needed > MEMORY_BUDGET_BYTES:
        raise UsageError(
            f"n_max={n_max} in d={d} needs ~{bytes_needed / 1e9:.1f} GB, over budget"
        )

    cur = np.zeros((size,) * d)
    nxt = np.zeros((size,) * d)
    cur[(0,) * d] = 1.0

    def extent(m: int) -> int:
        return min(m, cap) + 1

    values: dict[Direction, list[float]] = {e: [] for e in dirs}
    m = 0
    for n in n_values:
        while m < n:
            _quadrant_step(cur, nxt, extent(m), extent(m + 1), s_axis)
            cur, nxt = nxt, cur
            m += 1
        mass = _quadrant_mass(cur, extent(m))
        if abs(mass - 1.0) > 1e-12:
            raise NumericalError(f"probability mass drifted to {mass!r} at n={m}")
        prev = cur.copy()
        _quadrant_step(cur, nxt, extent(m), extent(m + 1), s_axis)
        cur, nxt = nxt, cur
        m += 1
        for e in dirs:
            val = _l1_shifted_difference(cur, prev, extent(m), e.axis - 1)
            values[e].append(val)

    fitted = {}
    for e in dirs:
        if len(n_values) >= 2:
            fitted[e] = float(np.polyfit(np.log(n_values), np.log(values[e]), 1)[0])
        else:
            fitted[e] = float("nan")
    return DecayTable(
        tuple(n_values), {e: tuple(v) for e, v in values.items()}, fitted
    )

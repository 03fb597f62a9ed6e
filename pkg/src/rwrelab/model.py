"""Lattice model primitives.

Directions on Z^d, nearest-neighbor transition kernels, finite-support
perturbation laws with their moment tensors, validated model specifications,
and deterministic lazily-sampled site environments.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import UsageError

# Tolerance for identities that are exact in rational arithmetic.
PROB_TOL = 1e-12

# Coordinates are packed 21 bits per axis (sign folded in); walks and domains
# must stay inside this box.
COORD_BOUND = 1 << 20

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_C1 = 0xBF58476D1CE4E5B9
_MIX_C2 = 0x94D049BB133111EB


class Direction(NamedTuple):
    """Signed lattice axis: ``axis`` in [1, d], ``sign`` in {+1, -1}."""

    axis: int
    sign: int

    @property
    def index(self) -> int:
        """Position in the canonical order +1, -1, +2, -2, ..."""
        return 2 * (self.axis - 1) + (0 if self.sign > 0 else 1)

    @property
    def key(self) -> str:
        """Signed-axis string, e.g. '+1' for e1 and '-2' for -e2."""
        return ("+" if self.sign > 0 else "-") + str(self.axis)

    def opposite(self) -> "Direction":
        return Direction(self.axis, -self.sign)

    def vector(self, d: int) -> np.ndarray:
        v = np.zeros(d, dtype=np.int64)
        v[self.axis - 1] = self.sign
        return v

    @classmethod
    def from_key(cls, key: str) -> "Direction":
        if len(key) < 2 or key[0] not in "+-" or not key[1:].isdigit():
            raise UsageError(f"bad direction key {key!r}, expected e.g. '+1' or '-2'")
        return cls(int(key[1:]), 1 if key[0] == "+" else -1)


@lru_cache(maxsize=None)
def directions(d: int) -> tuple[Direction, ...]:
    """All 2d signed unit directions in canonical order."""
    if d < 1:
        raise UsageError("dimension must be >= 1")
    return tuple(Direction(axis, sign) for axis in range(1, d + 1) for sign in (1, -1))


@lru_cache(maxsize=None)
def step_vectors(d: int) -> np.ndarray:
    """(2d, d) int64 array of unit steps in canonical direction order."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for e in directions(d):
        out[e.index, e.axis - 1] = e.sign
    out.setflags(write=False)
    return out


def _as_prob_tuple(d: int, probs) -> tuple[float, ...]:
    dirs = directions(d)
    if isinstance(probs, Mapping):
        vals = [0.0] * (2 * d)
        seen = 0
        for key, p in probs.items():
            e = key if isinstance(key, Direction) else Direction.from_key(str(key))
            if e.axis > d:
                raise UsageError(f"direction {e.key} exceeds dimension {d}")
            vals[e.index] = float(p)
            seen += 1
        if seen != 2 * d:
            raise UsageError(f"kernel needs all {2 * d} directions, got {seen}")
        return tuple(vals)
    vals = tuple(float(p) for p in probs)
    if len(vals) != 2 * d:
        raise UsageError(f"kernel needs {2 * d} probabilities, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class TransitionKernel:
    """Nearest-neighbor step distribution on Z^d.

    ``probs`` follows the canonical direction order +1, -1, +2, -2, ...
    Probabilities must be strictly positive and sum to 1 within PROB_TOL.
    """

    d: int
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_prob_tuple(self.d, self.probs))
        if min(self.probs) <= 0.0:
            raise UsageError("kernel probabilities must be strictly positive")
        if abs(sum(self.probs) - 1.0) > PROB_TOL:
            raise UsageError(f"kernel probabilities sum to {sum(self.probs)!r}, not 1")

    def p(self, e: Direction) -> float:
        return self.probs[e.index]

    def as_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=np.float64)

    def as_map(self) -> dict[str, float]:
        return {e.key: self.probs[e.index] for e in directions(self.d)}

    @property
    def min_prob(self) -> float:
        return min(self.probs)

    def is_axis_symmetric(self, tol: float = PROB_TOL) -> bool:
        return all(
            abs(self.probs[2 * i] - self.probs[2 * i + 1]) <= tol for i in range(self.d)
        )


def drift(kernel: TransitionKernel) -> np.ndarray:
    """Mean step sum_e p(e) e as a length-d vector."""
    return kernel.as_array() @ step_vectors(kernel.d).astype(np.float64)


@dataclass(frozen=True)
class PerturbationAtom:
    """One support point of the site-perturbation law.

    ``values`` are the perturbation increments per direction (canonical
    order); they must sum to zero so the perturbed kernel stays stochastic.
    """

    d: int
    values: tuple[float, ...]
    weight: float

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != 2 * self.d:
            raise UsageError(f"atom needs {2 * self.d} increments, got {len(vals)}")
        object.__setattr__(self, "values", vals)
        if not (0.0 <= self.weight <= 1.0):
            raise UsageError(f"atom weight {self.weight} outside [0, 1]")
        if abs(sum(self.values)) > PROB_TOL:
            raise UsageError(f"atom increments sum to {sum(self.values)!r}, not 0")
        if max(abs(v) for v in self.values) > 2.0:
            raise UsageError("atom increments must lie in [-2, 2]")

    @classmethod
    def from_map(cls, d: int, values: Mapping, weight: float) -> "PerturbationAtom":
        dirs = directions(d)
        vals = [0.0] * (2 * d)
        for key, v in values.items():
            e = key if isinstance(key, Direction) else Direction.from_key(str(key))
            vals[e.index] = float(v)
        return cls(d, tuple(vals), float(weight))

    def value(self, e: Direction) -> float:
        return self.values[e.index]


@dataclass(frozen=True)
class PerturbationLaw:
    """Finite-support law of the i.i.d. site perturbation."""

    d: int
    atoms: tuple[PerturbationAtom, ...]

    def __post_init__(self):
        if not self.atoms:
            raise UsageError("law needs at least one atom")
        if any(a.d != self.d for a in self.atoms):
            raise UsageError("atom dimension mismatch")
        total = sum(a.weight for a in self.atoms)
        if abs(total - 1.0) > PROB_TOL:
            raise UsageError(f"atom weights sum to {total!r}, not 1")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms], dtype=np.float64)

    @property
    def values_matrix(self) -> np.ndarray:
        """(n_atoms, 2d) matrix of raw perturbation increments."""
        return np.array([a.values for a in self.atoms], dtype=np.float64)

    @property
    def mean(self) -> np.ndarray:
        """Mean increment per direction (the order-1 kernel correction)."""
        return self.weights @ self.values_matrix

    @property
    def centered_matrix(self) -> np.ndarray:
        """(n_atoms, 2d) matrix of mean-zero increments."""
        return self.values_matrix - self.mean

    def is_degenerate(self, tol: float = PROB_TOL) -> bool:
        """True when every atom carries the same increment vector."""
        return bool(np.max(np.abs(self.centered_matrix)) <= tol)

    def cumulative_weights(self) -> list[float]:
        cum = np.cumsum(self.weights).tolist()
        cum[-1] = 1.0
        return cum


def covariance(nu: PerturbationLaw) -> np.ndarray:
    """(2d, 2d) covariance matrix of the centered perturbation increments."""
    xb = nu.centered_matrix
    return np.einsum("a,ae,af->ef", nu.weights, xb, xb)


def third_moments(nu: PerturbationLaw) -> np.ndarray:
    """(2d, 2d, 2d) tensor of centered third mixed moments."""
    xb = nu.centered_matrix
    return np.einsum("a,ae,af,ag->efg", nu.weights, xb, xb, xb)


@dataclass(frozen=True)
class ModelSpec:
    """Validated model: base kernel, perturbation law, and admissible range.

    Every kernel p0 + gamma * U reachable with |gamma| <= gamma_max must stay
    inside [kappa0, 1 - kappa0] per direction, so all sampled environments are
    uniformly elliptic.
    """

    d: int
    p0: TransitionKernel
    nu: PerturbationLaw
    kappa0: float
    gamma_max: float

    def __post_init__(self):
        if self.p0.d != self.d or self.nu.d != self.d:
            raise UsageError("dimension mismatch between kernel, law, and model")
        if not (0.0 < self.kappa0 < 0.5):
            raise UsageError("kappa0 must lie in (0, 0.5)")
        if self.gamma_max <= 0.0:
            raise UsageError("gamma_max must be positive")
        base = self.p0.as_array()
        for atom in self.nu.atoms:
            u = np.asarray(atom.values)
            for g in (self.gamma_max, -self.gamma_max):
                probs = base + g * u
                if probs.min() < self.kappa0 - PROB_TOL:
                    raise UsageError(
                        "ellipticity violated: some probability drops below "
                        f"kappa0={self.kappa0} at gamma={g}"
                    )
                if probs.max() > 1.0 - self.kappa0 + PROB_TOL:
                    raise UsageError(
                        "ellipticity violated: some probability exceeds "
                        f"1-kappa0={1.0 - self.kappa0} at gamma={g}"
                    )

    @property
    def d0(self) -> np.ndarray:
        return drift(self.p0)

    @property
    def p1(self) -> np.ndarray:
        """Mean perturbation increment per direction."""
        return self.nu.mean

    @property
    def d1(self) -> np.ndarray:
        return self.p1 @ step_vectors(self.d).astype(np.float64)

    @property
    def hypothesis_h(self) -> bool:
        """True when the drift is nonzero at order 0 or order 1."""
        return bool(
            np.linalg.norm(self.d0) > PROB_TOL or np.linalg.norm(self.d1) > PROB_TOL
        )

    def check_gamma(self, gamma: float) -> float:
        gamma = float(gamma)
        if abs(gamma) > self.gamma_max + PROB_TOL:
            raise UsageError(f"gamma={gamma} outside admissible range |gamma| <= {self.gamma_max}")
        return gamma

    def p_gamma(self, gamma: float) -> TransitionKernel:
        """Mean-environment kernel p0 + gamma * mean increment."""
        gamma = self.check_gamma(gamma)
        return TransitionKernel(self.d, tuple(self.p0.as_array() + gamma * self.p1))

    def atom_kernel(self, gamma: float, atom_index: int) -> TransitionKernel:
        gamma = self.check_gamma(gamma)
        u = np.asarray(self.nu.atoms[atom_index].values)
        return TransitionKernel(self.d, tuple(self.p0.as_array() + gamma * u))

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "p0": self.p0.as_map(),
            "atoms": [
                {"weight": a.weight, "U": {e.key: a.values[e.index] for e in directions(self.d)}}
                for a in self.nu.atoms
            ],
            "kappa0": self.kappa0,
            "gamma_max": self.gamma_max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "ModelSpec":
        required = {"d", "p0", "atoms", "kappa0", "gamma_max"}
        unknown = set(data) - required
        if unknown:
            raise UsageError(f"unknown model keys: {sorted(unknown)}")
        missing = required - set(data)
        if missing:
            raise UsageError(f"missing model keys: {sorted(missing)}")
        d = int(data["d"])
        p0 = TransitionKernel(d, _as_prob_tuple(d, data["p0"]))
        atoms = []
        for entry in data["atoms"]:
            extra = set(entry) - {"weight", "U"}
            if extra:
                raise UsageError(f"unknown atom keys: {sorted(extra)}")
            atoms.append(PerturbationAtom.from_map(d, entry["U"], entry["weight"]))
        return cls(d, p0, PerturbationLaw(d, tuple(atoms)), float(data["kappa0"]), float(data["gamma_max"]))

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_json_dict(json.loads(text))


# --- deterministic site sampling -------------------------------------------
#
# The environment is never stored: the atom at site z is a pure function of
# (master_seed, z).  A SplitMix64-style avalanche finalizer is applied to the
# seed XOR the packed coordinates, and the resulting word drives an
# inverse-CDF draw over the atom weights.  The same mixer, evaluated with
# numpy uint64 arithmetic, powers the vectorized Monte Carlo paths; both
# routes must stay bit-identical.


def mix64(x: int) -> int:
    """SplitMix64 avalanche finalizer on a 64-bit word."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX_C1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX_C2) & _MASK64
    return x ^ (x >> 31)


def mix64_words(*words: int) -> int:
    """Chain several words through the finalizer into one mixed word."""
    h = _GOLDEN
    for w in words:
        h = mix64(h ^ (int(w) & _MASK64))
    return h


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized finalizer; input is converted to uint64 and not modified."""
    x = np.asarray(x, dtype=np.uint64).copy()
    x ^= x >> np.uint64(30)
    x *= np.uint64(_MIX_C1)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_MIX_C2)
    x ^= x >> np.uint64(31)
    return x


def unit_from_word(h: int) -> float:
    """Map a 64-bit word to a double in [0, 1) using the top 53 bits."""
    return (h >> 11) * 2.0**-53


def pack_coords(z: Sequence[int]) -> int:
    """Pack lattice coordinates into one 64-bit word, 21 bits per axis.

    Requires |z_i| < 2^20.  Dimensions above 3 fold each block of three
    coordinates through the finalizer before packing the next block.
    """
    word = 0
    block = 0
    in_block = 0
    for zi in z:
        zi = int(zi)
        if abs(zi) >= COORD_BOUND:
            raise UsageError(f"coordinate {zi} outside packing box |z_i| < 2^20")
        block |= (zi + COORD_BOUND) << (21 * in_block)
        in_block += 1
        if in_block == 3:
            word = mix64(word ^ block)
            block = 0
            in_block = 0
    if in_block:
        word = block if word == 0 else mix64(word ^ block)
    return word


@dataclass(frozen=True)
class SiteEnvironment:
    """Resolved environment at one site: its kernel and the atom that made it."""

    z: tuple[int, ...]
    kernel: TransitionKernel
    atom_index: int


def site_atom_index(nu: PerturbationLaw, master_seed: int, z: Sequence[int]) -> int:
    """Atom index at site z, a pure function of (master_seed, z)."""
    h = mix64((int(master_seed) & _MASK64) ^ mix64(pack_coords(z) ^ _GOLDEN))
    return bisect.bisect_right(nu.cumulative_weights(), unit_from_word(h))


def sample_site(model: ModelSpec, gamma: float, master_seed: int, z: Sequence[int]) -> SiteEnvironment:
    """Deterministically sample the environment kernel at site z."""
    gamma = model.check_gamma(gamma)
    idx = site_atom_index(model.nu, master_seed, z)
    return SiteEnvironment(tuple(int(c) for c in z), model.atom_kernel(gamma, idx), idx)


def site_atom_indices_array(
    nu: PerturbationLaw, master_seeds: np.ndarray, coords: np.ndarray
) -> np.ndarray:
    """Vectorized site_atom_index for (n, d) coordinate rows, d <= 3.

    ``master_seeds`` broadcasts against the rows.  Bit-identical to the
    scalar route.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] > 3:
        raise UsageError("vectorized sampling supports (n, d) coordinates with d <= 3")
    if np.abs(coords).max(initial=0) >= COORD_BOUND:
        raise UsageError("coordinate outside packing box |z_i| < 2^20")
    packed = np.zeros(coords.shape[0], dtype=np.uint64)
    for i in range(coords.shape[1]):
        packed |= (coords[:, i] + COORD_BOUND).astype(np.uint64) << np.uint64(21 * i)
    inner = mix64_array(packed ^ np.uint64(_GOLDEN))
    h = mix64_array(np.asarray(master_seeds, dtype=np.uint64) ^ inner)
    u = (h >> np.uint64(11)).astype(np.float64) * 2.0**-53
    cum = np.array(nu.cumulative_weights(), dtype=np.float64)
    return np.searchsorted(cum, u, side="right").astype(np.int64)


def one_point_modification(
    model: ModelSpec,
    gamma: float,
    site_env_map: Mapping[tuple[int, ...], TransitionKernel],
    y: Sequence[int],
    kernel: TransitionKernel | None = None,
) -> dict[tuple[int, ...], TransitionKernel]:
    """Copy of an environment with the kernel at y replaced.

    The replacement defaults to the mean-environment kernel p^gamma; pass
    ``kernel`` to install a specific one instead (e.g. a sampled kernel at
    the origin).
    """
    replacement = kernel if kernel is not None else model.p_gamma(gamma)
    out = dict(site_env_map)
    out[tuple(int(c) for c in y)] = replacement
    return out

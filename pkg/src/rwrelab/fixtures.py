"""Named model fixtures used by the CLI and the acceptance suite."""

from __future__ import annotations

from .errors import UsageError
from .model import ModelSpec, PerturbationAtom, PerturbationLaw, TransitionKernel


def _d1_twopoint() -> ModelSpec:
    """Drifted d=1 walk with a skewed two-point perturbation."""
    p0 = TransitionKernel(1, (0.6, 0.4))
    law = PerturbationLaw(
        1,
        (
            PerturbationAtom(1, (0.6, -0.6), 2.0 / 3.0),
            PerturbationAtom(1, (-0.3, 0.3), 1.0 / 3.0),
        ),
    )
    return ModelSpec(1, p0, law, 0.3, 0.12)


def _skewed_1d() -> ModelSpec:
    """Drifted d=1 walk with zero-mean but strongly skewed perturbation."""
    p0 = TransitionKernel(1, (0.65, 0.35))
    law = PerturbationLaw(
        1,
        (
            PerturbationAtom(1, (0.25, -0.25), 0.8),
            PerturbationAtom(1, (-1.0, 1.0), 0.2),
        ),
    )
    return ModelSpec(1, p0, law, 0.2, 0.12)


def _speedup_s2(a: float = 0.5, eps: float = 0.02) -> ModelSpec:
    """d=2 acceleration construction: anisotropic base kernel, +/-U law.

    The perturbation couples extra sideways motion with a vertical push;
    increments are scaled to unit size, which only rescales the disorder
    strength.  For small eps the order-2 drift points along +e2, so the
    walk outruns the mean-environment drift eps (1-a)/2 in that direction.
    """
    if not (0.0 < a < 1.0 and 0.0 < eps < 1.0):
        raise UsageError("speedup fixture needs a, eps in (0, 1)")
    p0 = TransitionKernel(
        2,
        (
            (1.0 + a) / 4.0,
            (1.0 + a) / 4.0,
            (1.0 - a) / 4.0 * (1.0 + eps),
            (1.0 - a) / 4.0 * (1.0 - eps),
        ),
    )
    law = PerturbationLaw(
        2,
        (
            PerturbationAtom(2, (0.5, 0.5, 0.0, -1.0), 0.5),
            PerturbationAtom(2, (-0.5, -0.5, 0.0, 1.0), 0.5),
        ),
    )
    gamma_max = 0.1
    kappa0 = p0.min_prob - gamma_max
    if kappa0 <= 0.0:
        raise UsageError("speedup fixture parameters leave no ellipticity margin")
    return ModelSpec(2, p0, law, kappa0, gamma_max)


def _sym_2d() -> ModelSpec:
    """Simple symmetric d=2 base kernel with an order-1 drift perturbation."""
    p0 = TransitionKernel(2, (0.25, 0.25, 0.25, 0.25))
    law = PerturbationLaw(
        2,
        (
            PerturbationAtom(2, (0.5, -0.5, 0.25, -0.25), 0.5),
            PerturbationAtom(2, (0.0, 0.0, -0.25, 0.25), 0.5),
        ),
    )
    return ModelSpec(2, p0, law, 0.15, 0.2)


def _drifted_2d() -> ModelSpec:
    """Strongly drifted d=2 base kernel with a +/-U perturbation."""
    p0 = TransitionKernel(2, (0.35, 0.15, 0.25, 0.25))
    law = PerturbationLaw(
        2,
        (
            PerturbationAtom(2, (0.5, -0.5, -0.5, 0.5), 0.5),
            PerturbationAtom(2, (-0.5, 0.5, 0.5, -0.5), 0.5),
        ),
    )
    return ModelSpec(2, p0, law, 0.08, 0.12)


FIXTURES = {
    "d1-twopoint": _d1_twopoint,
    "skewed-1d": _skewed_1d,
    "speedup-s2": _speedup_s2,
    "sym-2d": _sym_2d,
    "drifted-2d": _drifted_2d,
}


def get_fixture(name: str) -> ModelSpec:
    try:
        builder = FIXTURES[name]
    except KeyError:
        raise UsageError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return builder()

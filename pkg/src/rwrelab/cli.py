"""Batch command-line front end.

Each experiment is a subcommand taking a JSON config (--config and/or
--fixture) and writing CSV/JSON reports under an output prefix.  Exit codes:
0 on completion, 2 on usage or config errors, 3 on numerical failures.
Scientific pass/fail lands in report columns, never in the exit code, so
batch sweeps always run to completion.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalError, UsageError
from .fixtures import get_fixture
from .green import Domain, j_closed_form_1d, j_exact, j_series
from .expansion import d2_one_point_route, solomon_speed, speed_expansion, speedup_integral
from .kalikow import auxiliary_expansion_residuals, drift_field, kalikow_identity_residual
from .model import Direction, ModelSpec, TransitionKernel, directions
from .montecarlo import annealed_speed, order_scaling, transition_difference_decay
from . import tableio


def _load_config(args) -> dict:
    config: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            config = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError("config must be a JSON object")
    if args.fixture:
        config.setdefault("fixture", args.fixture)
    return config


def _check_keys(config: dict, allowed: set[str], required: set[str]) -> None:
    unknown = set(config) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    missing = required - set(config)
    if missing:
        raise UsageError(f"missing config keys: {sorted(missing)}")


def _resolve_model(config: dict) -> ModelSpec:
    has_fixture = "fixture" in config
    has_model = "model" in config
    if has_fixture == has_model:
        raise UsageError("config needs exactly one of 'fixture' or 'model'")
    if has_fixture:
        return get_fixture(config["fixture"])
    return ModelSpec.from_json_dict(config["model"])


def _drift_direction(model: ModelSpec, gamma: float) -> np.ndarray:
    u = model.d0 + gamma * model.d1
    n = np.linalg.norm(u)
    if n == 0:
        raise UsageError("drift hypothesis violated: no drift direction")
    return u / n


# --- subcommands ---------------------------------------------------------------


def cmd_expand(config: dict, out: Path) -> None:
    _check_keys(
        config,
        {"fixture", "model", "gamma", "gammas", "order", "n_per_axis"},
        set(),
    )
    model = _resolve_model(config)
    if ("gamma" in config) == ("gammas" in config):
        raise UsageError("config needs exactly one of 'gamma' or 'gammas'")
    gammas = [config["gamma"]] if "gamma" in config else list(config["gammas"])
    order = int(config.get("order", 2))
    n_per_axis = config.get("n_per_axis")

    fieldnames = ["gamma", "order"] + [f"v{i + 1}" for i in range(model.d)] + ["j_source"]
    if model.d == 1:
        fieldnames.append("solomon")
    rows = []
    reports = []
    for gamma in gammas:
        rep = speed_expansion(model, float(gamma), order, n_per_axis=n_per_axis)
        payload = rep.to_json_dict()
        if model.d == 1:
            payload["solomon"] = solomon_speed(model, float(gamma))
        if rep.d2 is not None:
            u = _drift_direction(model, float(gamma))
            payload["second_order_speedup"] = bool(float(rep.d2 @ u) > 0.0)
        reports.append(payload)
        for k in sorted(rep.v_order):
            row = [rep.gamma, k] + [float(x) for x in rep.v_order[k]] + [rep.j_source]
            if model.d == 1:
                row.append(payload["solomon"])
            rows.append(row)
    tableio.write_csv(out.with_name(out.name + "_expansion.csv"), fieldnames, rows, config)
    tableio.write_json(out.with_name(out.name + "_expansion.json"), {"config": config, "reports": reports})


def cmd_simulate(config: dict, out: Path) -> None:
    _check_keys(
        config,
        {"fixture", "model", "gamma", "n_steps", "n_replicates", "master_seed"},
        {"gamma", "n_steps", "n_replicates", "master_seed"},
    )
    model = _resolve_model(config)
    gamma = float(config["gamma"])
    est = annealed_speed(
        model, gamma, int(config["n_steps"]), int(config["n_replicates"]), int(config["master_seed"])
    )
    fieldnames = ["component", "v_hat", "stderr"]
    rows = [
        [f"e{i + 1}", float(est.v_hat[i]), float(est.stderr[i])] for i in range(model.d)
    ]
    payload = {
        "config": config,
        "v_hat": [float(x) for x in est.v_hat],
        "stderr": [float(x) for x in est.stderr],
    }
    if model.d == 1:
        sol = solomon_speed(model, gamma)
        within = bool(abs(est.v_hat[0] - sol) <= 3.0 * est.stderr[0])
        fieldnames += ["solomon", "within_3stderr"]
        rows[0] += [sol, within]
        payload["solomon"] = sol
        payload["within_3stderr"] = within
    tableio.write_csv(out.with_name(out.name + "_simulate.csv"), fieldnames, rows, config)
    tableio.write_json(out.with_name(out.name + "_simulate.json"), payload)


def cmd_scaling(config: dict, out: Path) -> None:
    _check_keys(
        config,
        {"fixture", "model", "gammas", "order", "source", "n_steps", "n_replicates", "master_seed", "n_per_axis"},
        {"gammas", "order"},
    )
    model = _resolve_model(config)
    report = order_scaling(
        model,
        [float(g) for g in config["gammas"]],
        int(config["order"]),
        n_steps=config.get("n_steps"),
        n_replicates=config.get("n_replicates"),
        master_seed=config.get("master_seed"),
        source=config.get("source", "auto"),
        n_per_axis=config.get("n_per_axis"),
    )
    report.to_csv(out.with_name(out.name + "_scaling.csv"), config)
    tableio.write_json(
        out.with_name(out.name + "_scaling.json"),
        {
            "config": config,
            "order": report.order,
            "slope": report.slope,
            "noise_floor": report.noise_floor,
            "source": report.source,
        },
    )


def cmd_kalikow(config: dict, out: Path) -> None:
    _check_keys(
        config,
        {
            "fixture",
            "model",
            "gamma",
            "gammas",
            "domain_radius",
            "deltas",
            "expansion_delta",
            "window_radius",
            "drift_delta",
            "budget",
            "master_seed",
        },
        {"gamma", "master_seed"},
    )
    model = _resolve_model(config)
    gamma = float(config["gamma"])
    radius = int(config.get("domain_radius", 1))
    deltas = [float(x) for x in config.get("deltas", (0.9, 0.95, 1.0))]
    domain = Domain.box(model.d, radius)
    z0 = (0,) * model.d

    rows = [
        (delta, kalikow_identity_residual(model, gamma, domain, delta, z0))
        for delta in deltas
    ]
    tableio.write_csv(
        out.with_name(out.name + "_kalikow_identity.csv"), ("delta", "residual"), rows, config
    )

    gammas = [float(g) for g in config.get("gammas", (gamma, gamma / 2.0, gamma / 4.0))]
    expansion = auxiliary_expansion_residuals(
        model, domain, float(config.get("expansion_delta", 1.0)), z0, gammas
    )
    expansion.to_csv(out.with_name(out.name + "_kalikow_expansion.csv"), config)

    field = drift_field(
        model,
        gamma,
        int(config.get("window_radius", 1)),
        float(config.get("drift_delta", 0.9)),
        budget=int(config.get("budget", 200)),
        master_seed=int(config["master_seed"]),
    )
    field.to_csv(out.with_name(out.name + "_kalikow_drift.csv"), config)
    tableio.write_json(
        out.with_name(out.name + "_kalikow.json"),
        {
            "config": config,
            "identity_max_residual": max(r for _, r in rows),
            "expansion_exponent": expansion.fitted_exponent,
            "expansion_bound_ok": expansion.bound_ok,
            "hull": None if field.hull is None else [list(p) for p in field.hull],
        },
    )


def cmd_speedup(config: dict, out: Path) -> None:
    _check_keys(
        config,
        {"fixture", "model", "a", "gamma", "n_steps", "n_replicates", "master_seed", "n_per_axis"},
        {"gamma", "n_steps", "n_replicates", "master_seed"},
    )
    if "fixture" not in config and "model" not in config:
        config = dict(config)
        config["fixture"] = "speedup-s2"
    model = _resolve_model(config)
    if model.d != 2:
        raise UsageError("speedup experiment is a d=2 construction")
    gamma = float(config["gamma"])
    a = float(config.get("a", 0.5))
    n_per_axis = int(config.get("n_per_axis", 2048))

    integral = speedup_integral(a)
    rep = speed_expansion(model, gamma, 2, n_per_axis=n_per_axis)
    d2_e2 = float(rep.d2[1])
    d0_e2 = float(model.d0[1])
    est = annealed_speed(
        model, gamma, int(config["n_steps"]), int(config["n_replicates"]), int(config["master_seed"])
    )
    v_e2 = float(est.v_hat[1])
    sigma = float(est.stderr[1])
    margin = (v_e2 - d0_e2) / sigma if sigma > 0 else float("inf")
    payload = {
        "config": config,
        "speedup_integral": integral,
        "d0_e2": d0_e2,
        "d2_e2": d2_e2,
        "v_hat_e2": v_e2,
        "stderr_e2": sigma,
        "margin_sigmas": margin,
        "significant_speedup": bool(margin >= 3.0),
        "second_order_speedup": bool(d2_e2 > 0.0),
    }
    tableio.write_json(out.with_name(out.name + "_speedup.json"), payload)
    tableio.write_csv(
        out.with_name(out.name + "_speedup.csv"),
        ("quantity", "value"),
        [(k, v) for k, v in sorted(payload.items()) if k != "config"],
        config,
    )


def cmd_lemma4(config: dict, out: Path) -> None:
    _check_keys(
        config,
        {"fixture", "model", "kernel", "n_values", "directions"},
        set(),
    )
    if "kernel" in config:
        probs = config["kernel"]
        d = len(probs) // 2
        kernel = TransitionKernel(d, probs)
    else:
        model = _resolve_model(config)
        kernel = model.p0
    n_values = [int(n) for n in config.get("n_values", (16, 32, 64, 128, 256, 512, 1024, 2048, 4096))]
    dirs = None
    if "directions" in config:
        dirs = [Direction.from_key(k) for k in config["directions"]]
    table = transition_difference_decay(kernel, n_values, dirs)
    table.to_csv(out.with_name(out.name + "_lemma4.csv"), config)
    tableio.write_json(
        out.with_name(out.name + "_lemma4.json"),
        {
            "config": config,
            "fitted_exponent": table.fitted_exponent,
            "fitted_per_direction": {e.key: v for e, v in table.fitted.items()},
        },
    )


def cmd_oracle(config: dict, out: Path) -> None:
    _check_keys(
        config,
        {"fixture", "model", "gamma", "n_per_axis", "box_radius", "horizon", "tol", "one_point_k"},
        {"gamma"},
    )
    model = _resolve_model(config)
    gamma = float(config["gamma"])
    tol = float(config.get("tol", 1e-10))
    horizon = int(config.get("horizon", 100_000))
    box_radius = config.get("box_radius")
    p = model.p_gamma(gamma)
    if model.d == 1:
        reference = j_closed_form_1d(p, gamma=gamma)
        ref_name = "closed-form-1d"
    else:
        reference = j_exact(p, config.get("n_per_axis"), gamma=gamma)
        ref_name = "quadrature"
    series = j_series(
        p,
        horizon=horizon,
        survival=1.0,
        tol=tol,
        box_radius=None if box_radius is None else int(box_radius),
        gamma=gamma,
    )
    rows = []
    max_diff = 0.0
    for e in directions(model.d):
        diff = abs(reference.value(e) - series.value(e))
        max_diff = max(max_diff, diff)
        rows.append((e.key, reference.value(e), series.value(e), diff))
    payload = {"config": config, "reference": ref_name, "max_abs_diff": max_diff}
    if not model.nu.is_degenerate() and gamma != 0.0:
        k = float(config.get("one_point_k", 0.999))
        route_a = speed_expansion(model, gamma, 2, n_per_axis=config.get("n_per_axis")).d2_gamma
        route_b = d2_one_point_route(
            model, gamma, k=k,
            box_radius=None if box_radius is None else int(box_radius),
            horizon=horizon, tol=tol,
        )
        rel = float(np.max(np.abs(route_a - route_b)) / max(np.max(np.abs(route_a)), 1e-300))
        payload["d2_two_route_rel_diff"] = rel
    tableio.write_csv(
        out.with_name(out.name + "_oracle.csv"),
        ("direction", ref_name, "series", "abs_diff"),
        rows,
        config,
    )
    tableio.write_json(out.with_name(out.name + "_oracle.json"), payload)


COMMANDS = {
    "expand": cmd_expand,
    "simulate": cmd_simulate,
    "scaling": cmd_scaling,
    "kalikow": cmd_kalikow,
    "speedup": cmd_speedup,
    "lemma4": cmd_lemma4,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rwrelab",
        description="Numerical laboratory for random walks in low-disorder random environments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--fixture", help="named model fixture")
        p.add_argument("--out", default="out", help="output path prefix")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="cap on worker threads (results are identical for any value)",
        )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        config = _load_config(args)
        COMMANDS[args.command](config, Path(args.out))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

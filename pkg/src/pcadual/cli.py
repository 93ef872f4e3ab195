"""Command-line entry point: ``pcadual <subcommand> --model spec.json ...``.

Exit status is 0 on success, 2 when the input is rejected (unreadable or
malformed spec, invalid kernel, failed class check, state cap) and 1 on
any other error.  Every output carries a run manifest and a schema version.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from typing import Any

import numba
import numpy as np

from . import __version__
from .dual_monotone import MonotoneDualState, check_monotone_class, solve_monotone_dual
from .dual_voter import NoDualError, VoterDualState, check_voter_class, solve_voter_dual
from .duality_core import DEFAULT_MAX_STATES, CapExceeded, verify
from .ergodicity import (
    CrosscheckBudget,
    check_ergodicity,
    crosscheck_equilibrium,
    dual_state_cylinder,
    estimate_equilibrium,
)
from .kernel import DK_STATE_NAMES, Kernel, KernelError, kernel_from_spec, load_model_spec, spec_hash, validate_kernel
from .lattice import ProductMeasure, empirical_cylinder_prob, simulate

SCHEMA_VERSION = 1

logger = logging.getLogger(__name__)


class InputError(ValueError):
    """Rejected user input; maps to exit status 2."""


@dataclass
class RunManifest:
    subcommand: str
    spec_hash: str
    seed: int
    params: dict[str, Any]
    version: str
    wall_clock_seconds: float = 0.0


def _load_spec(path: str) -> dict[str, Any]:
    try:
        return load_model_spec(path)
    except OSError as exc:
        raise InputError(f"cannot read model spec: {exc}") from None


def _solve(k: Kernel, cls: str | None):
    if cls is None:
        cls = "voter" if check_voter_class(k).passed else "monotone"
    return cls, (solve_voter_dual(k) if cls == "voter" else solve_monotone_dual(k))


def _parse_dual_state(text: str, cls: str, params):
    """Cylinder as JSON: ``{"sets": [[sites of opinion 1], ...]}`` for the
    voter class or ``{"levels": [[site, level], ...]}`` for the monotone one."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"--cylinder:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        if cls == "voter":
            sets = [list(s) for s in obj["sets"]]
            if len(sets) > params.M - 1:
                raise InputError(f"voter cylinder has at most M-1 = {params.M - 1} sets")
            sets += [[]] * (params.M - 1 - len(sets))
            return VoterDualState.make(sets, params.frozen)
        return MonotoneDualState.from_levels([(int(z), int(lv)) for z, lv in obj["levels"]], params.M)
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed --cylinder for the {cls} class: {exc}") from None


def _parse_measure(text: str, M: int) -> ProductMeasure:
    if text == "uniform":
        return ProductMeasure(M)
    if text.startswith("state:"):
        state = text[6:]
        return ProductMeasure.delta(M, M if state == "M" else int(state))
    try:
        return ProductMeasure(M, tuple(json.loads(text)))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise InputError(f"initial measure {text!r}: expected 'uniform', 'state:K' or a JSON list of {M} probabilities") from exc


def cmd_validate(args, spec, k):
    return validate_kernel(k).to_dict(), 0


def _validate_raw(spec: dict[str, Any]):
    # report every violation of a raw table instead of stopping at the first
    try:
        M = int(spec["M"])
        table = np.asarray(spec["p"], dtype=np.float64).reshape(M, M, M, M)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed raw spec: {exc}") from None
    report = validate_kernel(table)
    return report.to_dict(), 0 if report.valid else 2


def cmd_solve_dual(args, spec, k):
    _, params = _solve(k, args.cls)
    return params.to_dict(), 0


def cmd_check(args, spec, k):
    report = check_voter_class(k) if args.cls == "voter" else check_monotone_class(k)
    return report.to_dict(), 0 if report.passed else 2


def cmd_verify(args, spec, k):
    return verify(k, args.cls, args.L, args.smax, args.max_states).to_dict(), 0


def cmd_check_ergodicity(args, spec, k):
    out = check_ergodicity(k).to_dict()
    if k.family == "dk":
        out["state_names"] = {str(s): n for s, n in DK_STATE_NAMES.items()}
    return out, 0


def cmd_simulate(args, spec, k):
    s = simulate(_parse_measure(args.init, k.M), k, args.steps, args.replicas, args.seed, L=args.L)
    if args.format == "csv":
        return s.to_csv(), 0
    density = {str(m): float((s.final == m).mean()) for m in range(1, k.M + 1)}
    out: dict[str, Any] = {"replicas": s.replicas, "L": s.L, "steps": s.steps, "density": density}
    if args.cylinder:
        cls, params = _solve(k, args.cls)
        cyl = dual_state_cylinder(_parse_dual_state(args.cylinder, cls, params))
        est, se = empirical_cylinder_prob(s, cyl)
        out["cylinder"] = {"estimate": est, "stderr": se}
    return out, 0


def cmd_equilibrium(args, spec, k):
    cls, params = _solve(k, args.cls)
    A = _parse_dual_state(args.cylinder, cls, params)
    est = estimate_equilibrium(params, A, args.replicas, args.max_steps, args.seed)
    return {"class": cls, **est.to_dict()}, 0


def cmd_crosscheck(args, spec, k):
    cls, params = _solve(k, args.cls)
    cyls = [_parse_dual_state(c, cls, params) for c in args.cylinder]
    budget = CrosscheckBudget(
        dual_replicas=args.replicas,
        max_steps=args.max_steps,
        L=args.L,
        steps=args.steps,
        forward_replicas=args.forward_replicas,
        initial_measures=[_parse_measure(m, k.M) for m in args.init],
    )
    rows = crosscheck_equilibrium(k, cyls, params, budget, args.seed)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cylinder", "estimator", "estimate", "stderr", "censored_fraction", "max_z"])
        for r in rows:
            w.writerow([r.cylinder, "dual", r.dual.estimate, r.dual.stderr, r.dual.censored_fraction, r.max_z])
            for name, e, se in r.forward:
                w.writerow([r.cylinder, "forward:" + name, e, se, "", r.max_z])
        return buf.getvalue(), 0
    return {"class": cls, "rows": [r.to_dict() for r in rows]}, 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="JSON model spec")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("--out", default="-", help="output path, '-' for stdout")

    cls_opt = argparse.ArgumentParser(add_help=False)
    cls_opt.add_argument("--class", dest="cls", choices=("voter", "monotone"), default=None)
    cls_req = argparse.ArgumentParser(add_help=False)
    cls_req.add_argument("--class", dest="cls", choices=("voter", "monotone"), required=True)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--L", type=int, default=200)
    sim.add_argument("--steps", type=int, default=10_000)

    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--replicas", type=int, default=100_000)
    est.add_argument("--max-steps", type=int, default=1_000_000)

    parser = argparse.ArgumentParser(prog="pcadual", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("validate", parents=[common], help="validate a kernel")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("solve-dual", parents=[common, cls_opt], help="closed-form dual parameters")
    p.set_defaults(func=cmd_solve_dual)
    p = sub.add_parser("check", parents=[common, cls_req], help="dual class check")
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("verify", parents=[common, cls_req], help="exact duality check on a ring")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--smax", type=int, default=1)
    p.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("simulate", parents=[common, cls_opt, sim], help="forward simulation")
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--init", default="uniform", help="'uniform', 'state:K' or a JSON list of probabilities")
    p.add_argument("--cylinder", default=None, help="dual-state JSON whose cylinder is estimated")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("equilibrium", parents=[common, cls_opt, est], help="dual-based equilibrium estimate")
    p.add_argument("--cylinder", required=True)
    p.set_defaults(func=cmd_equilibrium)
    p = sub.add_parser("check-ergodicity", parents=[common], help="sufficient ergodicity conditions")
    p.set_defaults(func=cmd_check_ergodicity)
    p = sub.add_parser("crosscheck", parents=[common, cls_opt, sim, est], help="dual vs forward equilibrium")
    p.add_argument("--cylinder", action="append", required=True)
    p.add_argument("--forward-replicas", type=int, default=1_000)
    p.add_argument("--init", action="append", default=None, help="initial measure (repeat; default uniform and state:M)")
    p.set_defaults(func=cmd_crosscheck)
    return parser


def _render(result: Any, manifest: RunManifest, fmt: str) -> str:
    if fmt == "csv":
        if not isinstance(result, str):
            raise InputError(f"{manifest.subcommand} has no CSV output; use --format json")
        header = f"# schema_version: {SCHEMA_VERSION}\n# manifest: {json.dumps(asdict(manifest), sort_keys=True)}\n"
        return header + result
    doc = {"schema_version": SCHEMA_VERSION, "manifest": asdict(manifest), "result": result}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _error(subcommand: str, kind: str, message: str) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "subcommand": subcommand, "error": {"kind": kind, "message": message}}
    sys.stderr.write(json.dumps(doc) + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = "csv" if args.subcommand == "crosscheck" else "json"
    if args.subcommand == "crosscheck" and args.init is None:
        args.init = ["uniform", "state:M"]
    if args.threads is not None:
        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    t0 = time.perf_counter()
    try:
        spec = _load_spec(args.model)
        if args.subcommand == "validate" and isinstance(spec, dict) and spec.get("family") == "raw":
            result, code = _validate_raw(spec)
        else:
            result, code = args.func(args, spec, kernel_from_spec(spec))
        params = {key: v for key, v in vars(args).items() if key not in ("func", "out", "threads", "subcommand", "seed")}
        manifest = RunManifest(args.subcommand, spec_hash(spec), args.seed, params, __version__, time.perf_counter() - t0)
        _write(_render(result, manifest, args.format), args.out)
        return code
    except (InputError, KernelError, NoDualError, CapExceeded, ValueError) as exc:
        _error(args.subcommand, type(exc).__name__, str(exc))
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        _error(args.subcommand, "internal", f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

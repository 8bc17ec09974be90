"""Command-line front door.

Subcommands write their artifacts to ``--output-dir`` and print a JSON
summary on stdout. Wall-clock figures go to ``timings.json`` and the
``solve_ms`` column of ``trajectory.csv``; every other file is
byte-identical across runs with the same seed and config.

Exit codes: 0 success, 2 usage or configuration error, 3 infeasible
problem, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys
import textwrap
import time
from typing import Any, Dict, List, Optional, Sequence

from hybrid_mpc.accuracy import RolloutSampler, envelope_report
from hybrid_mpc.bnb import (
    BnbOptions,
    BranchRule,
    GaitStyle,
    InvalidWarmStart,
    MiqpResult,
    MiqpStatus,
    TooManyBinaries,
    enumerate_miqp,
    gait_seed,
    solve_miqp,
)
from hybrid_mpc.builder import InfeasibleBounds, build_miqp, knot_count
from hybrid_mpc.learn import (
    CorruptLine,
    DatasetConfig,
    EmptyDataset,
    export_csv,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from hybrid_mpc.miqp import IntegerAssignment, MixedIntegerQP
from hybrid_mpc.mpc import Disturbance, MpcConfig, run_closed_loop
from hybrid_mpc.qp_solver import NumericalBreakdown
from hybrid_mpc.relax import SegmentationSpec
from hybrid_mpc.schema_check import SchemaMismatch, load_document
from hybrid_mpc.types import ProblemInstance, SrbParams, nominal_feet, standing_state

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_RUNTIME = 4

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "planar": False,
    "gap_target": 0.0,
    "time_limit": None,
    "node_limit": 100_000,
    "output_dir": "out",
    "segmentation": "desk",
}


class ConfigError(ValueError):
    """A flag or config value is unusable (bad path, unknown option)."""


# ---------------------------------------------------------------------------
# configuration


def _segmentation(value: Any) -> SegmentationSpec:
    if isinstance(value, dict):
        return SegmentationSpec.from_dict(value)
    if value == "desk":
        return SegmentationSpec.desk()
    if value == "reference":
        return SegmentationSpec.reference()
    if value == "doubled":
        return SegmentationSpec.reference().doubled()
    raise ConfigError(f"unknown segmentation {value!r}")


def resolve_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg: Dict[str, Any] = dict(DEFAULTS)
    if args.config is not None:
        path = pathlib.Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        doc = load_document(path, "run_config.schema.json")
        cfg.update({k: v for k, v in doc.items() if k != "schema_version"})
    for key in ("seed", "gap_target", "time_limit", "output_dir", "segmentation"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if args.planar:
        cfg["planar"] = True
    section = args.command.replace("-", "_")
    cfg.setdefault(section, {})
    return cfg


def _params(cfg: Dict[str, Any]) -> SrbParams:
    return SrbParams.placeholder_planar() if cfg["planar"] else SrbParams.placeholder_quadruped()


def _bnb_options(cfg: Dict[str, Any], **extra: Any) -> BnbOptions:
    return BnbOptions(
        time_limit=cfg["time_limit"],
        gap_target=cfg["gap_target"],
        node_limit=cfg["node_limit"],
        **extra,
    )


def _output_dir(cfg: Dict[str, Any]) -> pathlib.Path:
    out = pathlib.Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: pathlib.Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _finish(out: pathlib.Path, summary: Dict[str, Any], timings: Dict[str, Any]) -> None:
    _write_json(out / "summary.json", summary)
    _write_json(out / "timings.json", timings)
    print(json.dumps(summary, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_dataset(args: argparse.Namespace, cfg: Dict[str, Any]) -> int:
    section = cfg["gen_dataset"]
    n = args.trajectories if args.trajectories is not None else section.get("n_trajectories", 110)
    dcfg = DatasetConfig(
        n_trajectories=n,
        horizon_n=section.get("horizon_n", 9),
        window_offsets=tuple(section.get("window_offsets", (0, 2))),
        vx_range=tuple(section.get("vx_range", (-1.5, 1.5))),  # type: ignore[arg-type]
        ax_range=tuple(section.get("ax_range", (-15.0, 15.0))),  # type: ignore[arg-type]
        seed=cfg["seed"],
        planar=cfg["planar"],
        weights=section.get("weights", "forward"),
        seg=_segmentation(cfg["segmentation"]),
    )
    out = _output_dir(cfg)
    t0 = time.perf_counter()
    ds, report = generate_dataset(dcfg, _bnb_options(cfg))
    elapsed = time.perf_counter() - t0
    save_dataset(ds, out / "dataset.jsonl")
    export_csv(ds, out / "dataset.csv")
    summary = {"command": "gen-dataset", **report.summary()}
    _write_json(out / "generation.json", [r.to_dict() for r in report.records])
    _finish(out, summary, {"command": "gen-dataset", "wall_s": elapsed})
    return EXIT_OK


def _load_problem(path: pathlib.Path, seg: SegmentationSpec) -> MixedIntegerQP:
    """A problem instance is built; an MIQP container (has ``A``) is loaded as is."""
    if not path.is_file():
        raise ConfigError(f"problem file {path} does not exist")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(doc, dict) and "A" in doc:
        return MixedIntegerQP.load(path)
    doc = load_document(path, "problem_instance.schema.json")
    return build_miqp(ProblemInstance.from_dict(doc), seg)


def _warm_assignment(args: argparse.Namespace, section: Dict[str, Any], miqp: MixedIntegerQP,
                     n_legs: int) -> Optional[IntegerAssignment]:
    warm_path = args.warm or section.get("warm")
    style = args.gait_seed or section.get("gait_seed")
    values: Dict[str, int] = {}
    if style:
        values.update(gait_seed(knot_count(miqp), GaitStyle(style), n_legs).values)
    if warm_path:
        path = pathlib.Path(warm_path)
        if not path.is_file():
            raise ConfigError(f"warm file {path} does not exist")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            values.update({str(k): int(v) for k, v in doc.items()})
        except (json.JSONDecodeError, AttributeError, TypeError, ValueError) as exc:
            raise InvalidWarmStart(f"{path}: {exc}") from exc
    if not values:
        return None
    try:
        return IntegerAssignment(values)
    except ValueError as exc:
        raise InvalidWarmStart(str(exc)) from exc


def cmd_solve(args: argparse.Namespace, cfg: Dict[str, Any]) -> int:
    section = cfg["solve"]
    problem = args.problem or section.get("instance")
    if not problem:
        raise ConfigError("solve needs a problem file (argument or solve.instance in the config)")
    miqp = _load_problem(pathlib.Path(problem), _segmentation(cfg["segmentation"]))
    out = _output_dir(cfg)
    n_legs = 2 if cfg["planar"] else 4
    if miqp.binary_names and miqp.binary_names[0].startswith("c["):
        n_legs = sum(1 for b in miqp.binary_names if b.startswith("c[0]."))

    t0 = time.perf_counter()
    result: MiqpResult
    if args.enumerate:
        result = enumerate_miqp(miqp)
    else:
        warm = _warm_assignment(args, section, miqp, n_legs)
        rule = BranchRule(section.get("branch_rule", BranchRule.CONTACT_FIRST.value))
        result = solve_miqp(miqp, _bnb_options(cfg, warm=warm, branch_rule=rule,
                                               log_path=out / "search_log.jsonl"))
    elapsed = time.perf_counter() - t0

    doc = result.to_dict()
    doc["x"] = None if result.x is None else [float(v) for v in result.x]
    _write_json(out / "solution.json", doc)
    summary = {"command": "solve", **{k: v for k, v in result.to_dict().items() if k != "assignment"},
               "problem": miqp.summary()}
    _finish(out, summary, {"command": "solve", "wall_s": elapsed})
    if result.status is MiqpStatus.INFEASIBLE:
        print("infeasible: every branch was pruned by a primal infeasibility certificate "
              "or contradictory bounds", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _disturbances(items: Sequence[Any]) -> List[Disturbance]:
    out = []
    for item in items:
        if isinstance(item, str):
            tick, _, dv = item.partition(":")
            try:
                out.append(Disturbance(int(tick), (float(dv), 0.0, 0.0)))
            except ValueError as exc:
                raise ConfigError(f"impulse {item!r} is not TICK:DVX") from exc
        else:
            out.append(Disturbance(int(item["tick"]), tuple(item["dv"])))  # type: ignore[arg-type]
    return out


def cmd_mpc(args: argparse.Namespace, cfg: Dict[str, Any]) -> int:
    section = cfg["mpc"]
    dataset_path = args.dataset or section.get("dataset")
    if not dataset_path or not pathlib.Path(dataset_path).is_file():
        raise ConfigError(f"dataset file {dataset_path!r} does not exist")
    ds = load_dataset(pathlib.Path(dataset_path))
    if not len(ds):
        raise EmptyDataset(f"{dataset_path} holds no points")
    params = _params({**cfg, "planar": cfg["planar"] or bool(ds.info.get("planar", False))})
    disturbances = _disturbances(section.get("disturbances", []) + (args.impulse or []))
    mcfg = MpcConfig(
        horizon_n=section.get("horizon_n", ds.window_knots),
        candidate_k=section.get("candidate_k", 5),
        v_ref=tuple(section.get("v_ref", (0.2, 0.0, 0.0))),  # type: ignore[arg-type]
        weights=section.get("weights", "forward"),
        disturbances=tuple(disturbances),
        seg=_segmentation(cfg["segmentation"]),
    )
    ticks = args.ticks if args.ticks is not None else section.get("ticks", 20)
    state = standing_state(params)
    out = _output_dir(cfg)

    t0 = time.perf_counter()
    result = run_closed_loop(state, nominal_feet(params, state), ds, mcfg, params, ticks)
    elapsed = time.perf_counter() - t0
    result.write_csv(out / "trajectory.csv", params.leg_names)
    summary = {"command": "mpc", **result.summary(mcfg.disturbances)}
    _finish(out, summary, {"command": "mpc", "wall_s": elapsed,
                           "median_qp_solve_s": result.median_solve_time()})
    if result.halted:
        last = result.logs[-1] if result.logs else None
        print(f"closed loop halted: {result.halted}", file=sys.stderr)
        if last is not None:
            print(json.dumps({"tick": last.tick, "statuses": last.statuses,
                              "failure": last.failure}), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_envelope_report(args: argparse.Namespace, cfg: Dict[str, Any]) -> int:
    section = cfg["envelope_report"]
    seg = _segmentation(args.segmentation or section.get("segmentation", "reference"))
    if args.doubled or section.get("doubled", False):
        seg = seg.doubled()
    knobs = ("n_rollouts", "steps", "attitude", "rate", "lateral")
    sampler = RolloutSampler(seed=cfg["seed"], **{k: section[k] for k in knobs if k in section})
    out = _output_dir(cfg)
    t0 = time.perf_counter()
    report = envelope_report(seg, SrbParams.placeholder_quadruped(), sampler)
    elapsed = time.perf_counter() - t0
    report.write_csv(out / "envelope_report.csv")
    _finish(out, {"command": "envelope-report", **report.summary()},
            {"command": "envelope-report", "wall_s": elapsed})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="Random seed (default: 0)")
    p.add_argument("--planar", action="store_true", help="Use the two-leg sagittal model")
    p.add_argument("--gap-target", type=float, default=None,
                   help="Stop branch-and-bound once the relative gap is at most this")
    p.add_argument("--time-limit", type=float, default=None, help="Branch-and-bound limit, seconds")
    p.add_argument("--output-dir", type=str, default=None, help="Artifact directory (default: out)")
    p.add_argument("--config", type=str, default=None, help="Run config JSON (run_config.schema.json)")
    p.add_argument("--segmentation", choices=("desk", "reference", "doubled"), default=None,
                   help="Envelope segmentation table")
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hybrid-mpc",
        description="Mixed-integer locomotion MPC: offline solves, datasets, closed loop, envelope accuracy",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=textwrap.dedent("""
        Examples:
          hybrid-mpc gen-dataset --planar --trajectories 10 --output-dir out/ds
          hybrid-mpc solve instance.json --gait-seed Trot --gap-target 0.15
          hybrid-mpc mpc --planar --dataset out/ds/dataset.jsonl --impulse 5:-0.3
          hybrid-mpc envelope-report --output-dir out/report
        """),
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="Solve sampled instances and store KNN windows")
    _common(p)
    p.add_argument("--trajectories", type=int, default=None, help="Number of sampled instances")

    p = sub.add_parser("solve", help="Branch-and-bound one problem instance or MIQP container")
    _common(p)
    p.add_argument("problem", nargs="?", help="problem_instance or miqp JSON file")
    p.add_argument("--warm", type=str, default=None, help="JSON object of binary name -> 0/1")
    p.add_argument("--gait-seed", choices=[s.value for s in GaitStyle], default=None,
                   help="Partial warm start over the contact binaries")
    p.add_argument("--enumerate", action="store_true",
                   help="Solve by enumerating every assignment (at most 16 binaries)")

    p = sub.add_parser("mpc", help="Closed-loop run against the simulator")
    _common(p)
    p.add_argument("--dataset", type=str, default=None, help="Dataset JSONL from gen-dataset")
    p.add_argument("--ticks", type=int, default=None, help="Number of MPC ticks (default: 20)")
    p.add_argument("--impulse", action="append", metavar="TICK:DVX",
                   help="Forward velocity impulse after TICK (repeatable)")

    p = sub.add_parser("envelope-report", help="Per-term envelope accuracy on simulated rollouts")
    _common(p)
    p.add_argument("--doubled", action="store_true", help="Double every region count")
    return ap


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "solve": cmd_solve,
    "mpc": cmd_mpc,
    "envelope-report": cmd_envelope_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("hybrid_mpc")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if args.verbose else logging.WARNING)

    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (SchemaMismatch, CorruptLine, EmptyDataset, InvalidWarmStart, TooManyBinaries,
            ConfigError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleBounds as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalBreakdown as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

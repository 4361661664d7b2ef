"""Command-line entry point: ``bcgauth <command> [options]``.

Commands: synth, enroll, auth, ga-search, sweep-w, report. Settings come
from ``--config`` (an ExperimentConfig JSON file) with flags taking
precedence. Failures exit non-zero and print ``{"error": ..., "type": ...}``
on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ExperimentConfig
from .io_utils import atomic_write_text
from .neuralnet import genome_from_json


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "dataset", None):
        cfg.dataset_root = args.dataset
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    if getattr(args, "w", None) is not None:
        cfg.pipeline = replace(cfg.pipeline, w_s=args.w)
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _emit(obj) -> None:
    print(harness.dump_json(obj))


def run_synth(args) -> None:
    cfg = _config(args)
    if args.out:
        cfg.dataset_root = args.out
    if args.duration is not None or args.intervals is not None:
        cfg.synth = replace(
            cfg.synth,
            session_seconds=args.duration if args.duration is not None else cfg.synth.session_seconds,
            intervals_per_session=args.intervals if args.intervals is not None else cfg.synth.intervals_per_session,
        )
    man = harness.cmd_synth(cfg, args.n_validation, args.n_external, args.sessions, force=args.force)
    _emit({"dataset_root": str(cfg.root), "validation_subjects": man.validation_subjects,
           "external_subjects": man.external_subjects})


def run_enroll(args) -> None:
    cfg = _config(args)
    genome = genome_from_json(Path(args.genome).read_text()) if args.genome else None
    ds = harness.Dataset(cfg.root, cfg.pipeline)
    subjects = ds.manifest.validation_subjects if args.subject == "all" else [args.subject]
    out = _out(args, "models")
    summary = []
    for subj in subjects:
        res = harness.cmd_enroll(cfg, subj, genome=genome, out_dir=out, dataset=ds)
        summary.append({"subject": subj, "model": str(res.model_path),
                        "final_loss": res.report["final_loss"],
                        "train_accuracy": res.report["train_accuracy"]})
    _emit(summary)


def run_auth(args) -> None:
    cfg = _config(args)
    result = harness.cmd_auth(cfg, args.model, args.recording, args.claimed, args.threshold, args.attempts)
    if args.out:
        atomic_write_text(args.out, harness.dump_json(result) + "\n")
    _emit(result)


def run_ga(args) -> None:
    cfg = _config(args)
    if args.population is not None or args.generations is not None:
        pop = args.population or cfg.ga.population
        n_el = max(1, round(pop * cfg.ga.elite_fraction))
        rp = min(cfg.ga.random_parents, pop - n_el)
        cfg.ga = replace(
            cfg.ga, population=pop, generations=args.generations or cfg.ga.generations,
            elite_fraction=n_el / pop, random_parents=rp, children_per_gen=pop - n_el - rp,
        )
    res = harness.cmd_ga(cfg, args.subject, out_dir=_out(args, "ga"))
    _emit({"best_genome": res.best.genome.traits(), "far": res.best.far, "frr": res.best.frr,
           "score": res.best.score, "best_so_far": res.best_so_far()})


def run_sweep_w(args) -> None:
    cfg = _config(args)
    subjects = args.subjects.split(",") if args.subjects else None
    rows = harness.cmd_sweep_w(cfg, args.w_values, subjects=subjects, out_dir=_out(args, "sweep"))
    _emit([{"w": r["w"], "accuracy": r["accuracy"]} for r in rows])


def run_report(args) -> None:
    cfg = _config(args)
    if args.s_values:
        cfg.s_values = tuple(args.s_values)
    if args.sessions:
        cfg.sessions = tuple(args.sessions)
    reports, _ = harness.cmd_report(cfg, args.models, out_dir=_out(args, "report"))
    _emit([r.metrics() for r in reports])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="ExperimentConfig JSON file")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--out", help="output path (file or directory, per command)")
    common.add_argument("--dataset", help="dataset root (overrides config)")
    common.add_argument("--epochs", type=int, help="training epochs per model")
    common.add_argument("--w", type=int, help="segment length in seconds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bcgauth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--n-validation", type=int, default=12)
    s.add_argument("--n-external", type=int, default=10)
    s.add_argument("--sessions", type=int, default=3)
    s.add_argument("--duration", type=float, help="seconds per session")
    s.add_argument("--intervals", type=int, help="recording files per session")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=run_synth)

    s = sub.add_parser("enroll", parents=[common], help="train a subject's verifier")
    s.add_argument("subject", help="validation subject id, or 'all'")
    s.add_argument("--genome", help="genome JSON (e.g. a ga-search best_genome.json)")
    s.set_defaults(func=run_enroll)

    s = sub.add_parser("auth", parents=[common], help="authenticate a recording")
    s.add_argument("model")
    s.add_argument("recording", help="recording manifest JSON")
    s.add_argument("--claimed", required=True)
    s.add_argument("--threshold", "-T", type=float, default=0.5)
    s.add_argument("--attempts", "-s", type=int, default=1)
    s.set_defaults(func=run_auth)

    s = sub.add_parser("ga-search", parents=[common], help="genetic genome search")
    s.add_argument("subject")
    s.add_argument("--population", type=int)
    s.add_argument("--generations", type=int)
    s.set_defaults(func=run_ga)

    s = sub.add_parser("sweep-w", parents=[common], help="accuracy per segment length")
    s.add_argument("--w-values", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    s.add_argument("--subjects", help="comma-separated subset of validation subjects")
    s.set_defaults(func=run_sweep_w)

    s = sub.add_parser("report", parents=[common], help="session x attempts metric grid")
    s.add_argument("models", help="directory of *.model.json files")
    s.add_argument("--s-values", type=int, nargs="+")
    s.add_argument("--sessions", nargs="+")
    s.set_defaults(func=run_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

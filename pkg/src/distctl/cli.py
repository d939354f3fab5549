"""Experiment runner: fit, train, ablation, oracle, and eval subcommands.

One JSON config per experiment; numeric outputs are CSV only. Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 universe guard.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import REJECTION_MLE, rejection_mle, train_baseline
from .config import GDC_METHOD, ExperimentConfig
from .dpg import train
from .ebm import (
    Ebm,
    build_pointwise,
    fit_lambda,
    moment_preserving_perturbations,
)
from .errors import (
    ConfigError,
    DegenerateWeights,
    DistctlError,
    EmptyCorpus,
    EmptySupport,
    NoAcceptedSamples,
    NonpositiveZ,
    SchemaMismatch,
    SupportViolation,
    UnattainableTarget,
    UniverseTooLarge,
)
from .estimators import exact_kl
from .features import ConstraintSet
from .metrics import (
    metrics_csv_header,
    metrics_csv_row,
    snapshot,
    zipf_table,
)

OUTPUT_ROOT_ENV = "DISTCTL_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_UNIVERSE = 4

_CONFIG_ERRORS = (ConfigError, SchemaMismatch, EmptyCorpus)
_NUMERICAL_ERRORS = (
    UnattainableTarget,
    NoAcceptedSamples,
    EmptySupport,
    DegenerateWeights,
    NonpositiveZ,
    SupportViolation,
)


def _resolve_output(args, cfg: ExperimentConfig) -> Path:
    if args.output:
        return Path(args.output)
    if cfg.output:
        return cfg.config_dir / cfg.output
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "distctl-runs"))
    return root / Path(args.config).stem


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _manifest(out_dir: Path, cfg: ExperimentConfig, artifacts: dict, started: float) -> Path:
    doc = {
        "version": __version__,
        "config": {
            "seed": cfg.seed,
            "space": {"lmax": cfg.lmax},
            "base_model": cfg.base_model,
            "constraints": cfg.constraints,
            "fit": cfg.fit,
            "trainer": cfg.trainer,
            "eval": cfg.eval,
        },
        "artifacts": {name: str(p) for name, p in artifacts.items()},
        "wall_clock_seconds": time.monotonic() - started,
    }
    path = out_dir / "manifest.json"
    _write_json(path, doc)
    return path


def _build_target(cfg: ExperimentConfig, base, constraint_set: ConstraintSet):
    """Pointwise sets take the product shortcut; anything else is fitted."""
    if constraint_set.all_pointwise:
        return None, build_pointwise(base, constraint_set)
    report, target = fit_lambda(base, constraint_set, cfg.build_fit_config())
    return report, target


def _fit_document(report, target: Ebm, constraint_set: ConstraintSet) -> dict:
    doc = {"mode": target.mode, "constraint_ids": constraint_set.ids}
    if report is not None:
        doc.update(report.to_document())
    else:
        doc["lambda"] = []
    return doc


def run_fit(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    base = cfg.build_base()
    constraint_set = cfg.build_constraints(base.space)
    if len(constraint_set) == 0:
        raise ConfigError("config.constraints: fit needs at least one constraint")
    report, target = _build_target(cfg, base, constraint_set)
    report_path = out_dir / "fit_report.json"
    _write_json(report_path, _fit_document(report, target, constraint_set))
    _manifest(out_dir, cfg, {"fit_report": report_path}, started)
    if report is not None and not report.converged:
        print(f"fit did not converge: objective {report.objective:.6g}", file=sys.stderr)
    return EXIT_OK


def _samples_file(path: Path, policy, vocab, n: int, rng) -> None:
    batch = policy.sample_batch(n, rng)
    lines = [" ".join(vocab.tokens[t] for t in s.tokens) for s in batch.sequences()]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _history_rows(history):
    return [metrics_csv_row(record) for record in history]


def run_train(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    base = cfg.build_base()
    constraint_set = cfg.build_constraints(base.space)
    if len(constraint_set) == 0:
        raise ConfigError("config.constraints: training needs at least one constraint")
    eval_options = cfg.build_eval_options()
    if eval_options.exact:
        base.space.guard()
    report, target = _build_target(cfg, base, constraint_set)
    method = cfg.trainer.get("method", GDC_METHOD)
    artifacts: dict = {}

    if method == REJECTION_MLE:
        model, stats = rejection_mle(
            base,
            constraint_set,
            sample_budget=cfg.trainer["sample_budget"],
            order=cfg.trainer["fit_order"],
            smoothing=cfg.trainer.get("fit_smoothing", 1.0),
            seed=cfg.seed,
        )
        rng_eval = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
        history = [
            snapshot(0, REJECTION_MLE, model, base, target, rng_eval, eval_options)
        ]
        policy = model
        extra_doc = {"acceptance_rate": stats.acceptance_rate, "kept": stats.kept, "drawn": stats.drawn}
    elif method == GDC_METHOD:
        result = train(base, target, cfg.build_dpg_config(), eval_options)
        history, policy = result.history, result.policy
        extra_doc = {"proposal_updates": result.state.proposal_updates}
    else:
        result = train_baseline(base, target, cfg.build_baseline_config(), eval_options)
        history, policy = result.history, result.policy
        extra_doc = {"final_beta": result.final_beta}

    report_path = out_dir / "fit_report.json"
    _write_json(report_path, _fit_document(report, target, constraint_set))
    artifacts["fit_report"] = report_path

    metrics_path = out_dir / "metrics.csv"
    header = metrics_csv_header(constraint_set.ids, eval_options.exact)
    _write_csv(metrics_path, header, _history_rows(history))
    artifacts["metrics"] = metrics_path

    model_path = out_dir / "model.json"
    _write_json(model_path, policy.to_document())
    artifacts["model"] = model_path

    rng_samples = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    samples_path = out_dir / "samples.txt"
    _samples_file(samples_path, policy, base.space.vocabulary, eval_options.sample_size, rng_samples)
    artifacts["samples"] = samples_path

    zipf_path = out_dir / "zipf.csv"
    zbatch = policy.sample_batch(eval_options.sample_size, np.random.default_rng(cfg.seed))
    table = zipf_table(zbatch.sequences(), base.space.vocabulary)
    _write_csv(
        zipf_path,
        ["rank", "token", "frequency"],
        [[str(r), tok, str(f)] for r, tok, f in table.rows],
    )
    artifacts["zipf"] = zipf_path

    run_doc_path = out_dir / "run.json"
    _write_json(run_doc_path, {"method": method, **{k: v for k, v in extra_doc.items()}})
    artifacts["run"] = run_doc_path
    _manifest(out_dir, cfg, artifacts, started)
    return EXIT_OK


def run_ablation(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    variants = cfg.ablation_variants
    seeds = cfg.ablation_seeds
    base = cfg.build_base()
    constraint_set = cfg.build_constraints(base.space)
    eval_options = cfg.build_eval_options()
    if eval_options.exact:
        base.space.guard()
    _, target = _build_target(cfg, base, constraint_set)
    threshold = cfg.eval.get("threshold")
    k = cfg.trainer["samples_per_iteration"]

    header = ["variant", "seed", "samples_drawn"]
    if threshold is not None:
        header.append("below_threshold")
    header += metrics_csv_header(constraint_set.ids, eval_options.exact)
    rows = []
    for variant in variants:
        for seed in seeds:
            result = train(base, target, cfg.build_dpg_config(adaptivity=variant, seed=seed), eval_options)
            for record in result.history:
                row = [variant, str(seed), str(record.step * k)]
                if threshold is not None:
                    below = (
                        record.kl_p_pi_exact is not None
                        and record.kl_p_pi_exact < threshold
                    )
                    row.append(str(int(below)))
                rows.append(row + metrics_csv_row(record))
    path = out_dir / "ablation.csv"
    _write_csv(path, header, rows)
    _manifest(out_dir, cfg, {"ablation": path}, started)
    return EXIT_OK


def run_oracle(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    base = cfg.build_base()
    base.space.guard()
    constraint_set = cfg.build_constraints(base.space)
    _, target = _build_target(cfg, base, constraint_set)
    z, p = target.exact_normalize()
    a_dist = base.exact_distribution()
    kl_p_a = exact_kl(p, a_dist)
    phi = target.phi_universe()
    rng = np.random.default_rng(cfg.seed)
    residuals = []
    for c in moment_preserving_perturbations(p, phi, count=5, rng=rng):
        residual = abs(exact_kl(c, a_dist) - exact_kl(c, p) - kl_p_a)
        residuals.append(residual)
    doc = {
        "z": z,
        "exact_moments": [float(m) for m in target.exact_moments()],
        "kl_p_a": kl_p_a,
        "pythagorean_residual_max": max(residuals) if residuals else None,
        "universe_size": base.space.universe_size,
    }
    path = out_dir / "oracle.json"
    _write_json(path, doc)
    _manifest(out_dir, cfg, {"oracle": path}, started)
    return EXIT_OK


def run_eval(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    if "model_file" not in cfg.base_model:
        raise ConfigError("config.base_model.model_file: eval needs a persisted model")
    model = cfg.build_base()
    constraint_set = cfg.build_constraints(model.space)
    eval_options = cfg.build_eval_options()
    if eval_options.exact:
        model.space.guard()
    target = (
        _build_target(cfg, model, constraint_set)[1] if len(constraint_set) else None
    )
    rng = np.random.default_rng(cfg.seed)
    artifacts = {}
    if target is not None:
        record = snapshot(0, "eval", model, model, target, rng, eval_options)
        path = out_dir / "metrics.csv"
        _write_csv(
            path,
            metrics_csv_header(constraint_set.ids, eval_options.exact),
            [metrics_csv_row(record)],
        )
        artifacts["metrics"] = path
    batch = model.sample_batch(eval_options.sample_size, rng)
    table = zipf_table(batch.sequences(), model.space.vocabulary)
    zipf_path = out_dir / "zipf.csv"
    _write_csv(
        zipf_path,
        ["rank", "token", "frequency"],
        [[str(r), tok, str(f)] for r, tok, f in table.rows],
    )
    artifacts["zipf"] = zipf_path
    samples_path = out_dir / "samples.txt"
    _samples_file(samples_path, model, model.space.vocabulary, eval_options.sample_size, rng)
    artifacts["samples"] = samples_path
    _manifest(out_dir, cfg, artifacts, started)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distctl",
        description="Constraint-controlled sequence model experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "train", "ablation", "oracle", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--output", help="output directory (overrides config)")
        p.add_argument("--seed-override", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    started = time.monotonic()
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed_override is not None:
            cfg.seed = args.seed_override
        out_dir = _resolve_output(args, cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "fit":
            return run_fit(cfg, out_dir, started)
        if args.command == "train":
            return run_train(cfg, out_dir, started)
        if args.command == "ablation":
            return run_ablation(cfg, out_dir, started)
        if args.command == "oracle":
            return run_oracle(cfg, out_dir, started)
        return run_eval(cfg, out_dir, started)
    except UniverseTooLarge as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNIVERSE
    except _CONFIG_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DistctlError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

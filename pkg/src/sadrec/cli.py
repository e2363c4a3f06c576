"""Command-line front door: simulate, train, gibbs, evaluate, rerun.

Every command resolves its configuration, writes a JSON run manifest first,
then computes and writes artifacts. The manifest records the resolved
parameters, input digests, and artifact paths; `sadrec rerun MANIFEST`
re-executes it and regenerates the computational artifacts byte-for-byte.
Wall-clock training logs are listed separately as timing artifacts, since
elapsed seconds are not reproducible.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_interactions, loo_split
from .errors import (
    DataError,
    DivergedChainError,
    DivergedTrainingError,
    SadrecError,
)
from .evaluation import MACHINE_HEADER, evaluate_split, format_table, machine_row
from .gibbs import GibbsConfig, run_chain, write_posterior_summary
from .model import load_checkpoint, save_checkpoint
from .sgd import TrainConfig, load_train_config, train, write_training_log
from .simulation import SimSpec, generate_truth, run_simulation_study, write_study_report

# Appendix-style default sweep for --grid; l1 stays fixed.
GRID_LEARNING_RATES = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1]
GRID_EPOCHS = [2, 5, 10, 20, 50]
GRID_L2 = [0.05, 0.01, 0.005, 0.001]
GRID_L1 = 0.01

DEFAULT_GIBBS_PAIR_CAP = 10**6

OUTPUT_DIR_ENV = "SADREC_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise UsageError(message)


def content_digest(path) -> str:
    """64-bit content hash of a file, hex encoded."""
    h = hashlib.blake2b(digest_size=8)
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def make_run_dir(root, command: str, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{command}-seed{seed}-{stamp}"
    run_dir = base
    suffix = 1
    while run_dir.exists():
        run_dir = Path(f"{base}-{suffix}")
        suffix += 1
    run_dir.mkdir(parents=True)
    return run_dir


def write_manifest(
    manifest_path: Path,
    command: str,
    seed: int,
    params: dict,
    inputs: dict,
    artifacts: list,
    timing_artifacts: list,
) -> None:
    payload = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "params": params,
        "inputs": {str(p): d for p, d in inputs.items()},
        "artifacts": [str(a) for a in artifacts],
        "timing_artifacts": [str(a) for a in timing_artifacts],
    }
    manifest_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _resolve_out_root(args) -> Path:
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(args.out)


def _train_config_from_params(params: dict) -> TrainConfig:
    keys = (
        "learning_rate",
        "l1_weight",
        "l2_weight",
        "epochs",
        "n_factors",
        "seed",
        "convergence_rel_tol",
        "freeze_right_factors",
        "shuffle",
    )
    return TrainConfig(**{k: params[k] for k in keys})


# ---------------------------------------------------------------------------
# simulate


def run_simulate(params: dict, run_dir: Path, fresh: bool) -> None:
    spec = SimSpec(
        kind=params["kind"],
        n_users=params["n_users"],
        n_items=params["n_items"],
        n_factors=params["n_factors"],
        extreme_fraction=params["extreme_fraction"],
        seed=params["seed"],
    )
    config = _train_config_from_params(params)
    fractions = params["missing"]
    report_path = run_dir / "study_report.csv"
    truth_path = run_dir / "ground_truth.ckpt"
    log_paths = [
        run_dir / f"training_log_{fmt_fraction(f)}_{name}.csv"
        for f in fractions
        for name in ("sad", "bpr")
    ]
    if fresh:
        write_manifest(
            run_dir / "manifest.json",
            "simulate",
            params["seed"],
            params,
            {},
            [report_path, truth_path],
            log_paths,
        )
    truth = generate_truth(spec)
    save_checkpoint(truth.model, truth_path)
    report = run_simulation_study(spec, fractions, config)
    write_study_report(report, report_path)
    for row, path in zip(report.rows, log_paths):
        write_training_log(row.log, path)
    print(f"wrote {report_path}")


def fmt_fraction(f: float) -> str:
    return f"{f:g}".replace(".", "p")


def cmd_simulate(args) -> None:
    params = {
        "kind": args.kind,
        "n_users": args.users,
        "n_items": args.items,
        "n_factors": args.factors,
        "extreme_fraction": args.extreme_fraction,
        "missing": [float(x) for x in args.missing.split(",") if x != ""],
        "seed": args.seed,
        "learning_rate": args.learning_rate,
        "l1_weight": args.l1,
        "l2_weight": args.l2,
        "epochs": args.epochs,
        "convergence_rel_tol": 0.0,
        "freeze_right_factors": False,
        "shuffle": False,
    }
    for f in params["missing"]:
        if not 0 <= f < 1:
            raise UsageError(f"--missing fraction {f} outside [0, 1)")
    run_dir = make_run_dir(_resolve_out_root(args), "simulate", args.seed)
    run_simulate(params, run_dir, fresh=True)


# ---------------------------------------------------------------------------
# train


def _fit_quality(model, data, config) -> float:
    """Goodness-of-fit for grid selection: one sampled pass on a fixed stream."""
    from .sgd import _initial_alg_loglik

    return _initial_alg_loglik(model, data, config)


def _train_one_cell(data, config):
    model, log = train(data, config)
    quality = _fit_quality(model, data, config)
    return model, log, quality


def run_train(params: dict, run_dir: Path, fresh: bool) -> None:
    data_path = Path(params["data"])
    dataset = load_interactions(
        data_path,
        format=params["format"],
        min_item_count=params["min_item_count"],
        top_users=params["top_users"],
    )
    checkpoint_path = run_dir / "model.ckpt"
    log_path = run_dir / "training_log.csv"
    grid_path = run_dir / "grid_results.csv"
    artifacts = [checkpoint_path] + ([grid_path] if params["grid"] else [])
    if fresh:
        write_manifest(
            run_dir / "manifest.json",
            "train",
            params["seed"],
            params,
            {data_path: content_digest(data_path)},
            artifacts,
            [log_path],
        )
    base = _train_config_from_params(params)
    if params["model"] == "bpr":
        base = replace(base, freeze_right_factors=True)
    view = dataset.implicit()
    if params["grid"]:
        cells = [
            replace(base, learning_rate=lr, epochs=ep, l2_weight=l2, l1_weight=GRID_L1)
            for lr in params["grid_learning_rates"]
            for ep in params["grid_epochs"]
            for l2 in params["grid_l2"]
        ]
        if params["parallel"] > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=params["parallel"]) as pool:
                results = list(pool.map(_train_one_cell, [view] * len(cells), cells))
        else:
            results = [_train_one_cell(view, cell) for cell in cells]
        lines = ["learning_rate,epochs,l2_weight,fit_loglik"]
        for cell, (_, _, quality) in zip(cells, results):
            lines.append(
                f"{cell.learning_rate:g},{cell.epochs},{cell.l2_weight:g},{quality:.17g}"
            )
        grid_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        best = int(np.argmax([q for _, _, q in results]))
        model, log, _ = results[best]
        print(f"grid best: {lines[best + 1]}")
    else:
        model, log = train(view, base)
    save_checkpoint(model, checkpoint_path)
    write_training_log(log, log_path)
    print(f"wrote {checkpoint_path}")


def cmd_train(args) -> None:
    params = {
        "data": args.data,
        "format": args.format,
        "model": args.model,
        "min_item_count": args.min_item_count,
        "top_users": args.top_users,
        "learning_rate": args.learning_rate,
        "l1_weight": args.l1,
        "l2_weight": args.l2,
        "epochs": args.epochs,
        "n_factors": args.k,
        "seed": args.seed,
        "convergence_rel_tol": args.convergence_rel_tol,
        "freeze_right_factors": args.model == "bpr",
        "shuffle": args.shuffle,
        "grid": args.grid,
        "grid_learning_rates": [float(x) for x in args.grid_learning_rates.split(",")],
        "grid_epochs": [int(x) for x in args.grid_epochs.split(",")],
        "grid_l2": [float(x) for x in args.grid_l2.split(",")],
        "parallel": args.parallel,
    }
    if args.config:
        cfg = load_train_config(args.config, base=_train_config_from_params(params))
        for key in (
            "learning_rate",
            "l1_weight",
            "l2_weight",
            "epochs",
            "n_factors",
            "seed",
            "convergence_rel_tol",
            "freeze_right_factors",
            "shuffle",
        ):
            params[key] = getattr(cfg, key)
    run_dir = make_run_dir(_resolve_out_root(args), "train", params["seed"])
    run_train(params, run_dir, fresh=True)


# ---------------------------------------------------------------------------
# gibbs


def run_gibbs(params: dict, run_dir: Path, fresh: bool) -> None:
    data_path = Path(params["data"])
    dataset = load_interactions(data_path, format=params["format"])
    n_pairs = dataset.n_users * dataset.n_items
    if n_pairs > params["max_pairs"]:
        raise DataError(
            f"dataset spans {n_pairs} user-item pairs; the sampler cap is "
            f"{params['max_pairs']} (raise --max-pairs only for small studies)"
        )
    summary_path = run_dir / "posterior_summary.csv"
    trace_path = run_dir / "log_density.csv"
    if fresh:
        write_manifest(
            run_dir / "manifest.json",
            "gibbs",
            params["seed"],
            params,
            {data_path: content_digest(data_path)},
            [summary_path, trace_path],
            [],
        )
    from .data import observations_from_implicit

    obs = observations_from_implicit(dataset)
    config = GibbsConfig(
        n_factors=params["n_factors"],
        seed=params["seed"],
        n_sweeps=params["sweeps"],
        burn_in=params["burn_in"],
        thin=params["thin"],
    )
    result = run_chain(obs, dataset.n_users, dataset.n_items, config)
    write_posterior_summary(result, summary_path)
    trace_lines = ["sweep,log_density"] + [
        f"{s + 1},{v:.17g}" for s, v in enumerate(result.log_density)
    ]
    trace_path.write_text("\n".join(trace_lines) + "\n", encoding="utf-8")
    if params["save_samples"]:
        samples_dir = run_dir / "samples"
        samples_dir.mkdir(exist_ok=True)
        for idx, sample in enumerate(result.samples):
            save_checkpoint(sample, samples_dir / f"sample_{idx:05d}.ckpt")
    print(f"wrote {summary_path}")


def cmd_gibbs(args) -> None:
    params = {
        "data": args.data,
        "format": args.format,
        "n_factors": args.k,
        "seed": args.seed,
        "sweeps": args.sweeps,
        "burn_in": args.burn_in,
        "thin": args.thin,
        "max_pairs": args.max_pairs,
        "save_samples": args.save_samples,
    }
    run_dir = make_run_dir(_resolve_out_root(args), "gibbs", args.seed)
    run_gibbs(params, run_dir, fresh=True)


# ---------------------------------------------------------------------------
# evaluate


def run_evaluate(params: dict, run_dir: Path, fresh: bool) -> None:
    data_path = Path(params["data"])
    dataset = load_interactions(
        data_path,
        format=params["format"],
        min_item_count=params["min_item_count"],
        top_users=params["top_users"],
    )
    rows_path = run_dir / "eval_rows.csv"
    table_path = run_dir / "eval_summary.txt"
    if fresh:
        write_manifest(
            run_dir / "manifest.json",
            "evaluate",
            params["seed_base"],
            params,
            {data_path: content_digest(data_path)},
            [rows_path, table_path],
            [],
        )
    base = _train_config_from_params(params)
    if params["model"] == "bpr":
        base = replace(base, freeze_right_factors=True)
    checkpoint = (
        load_checkpoint(params["checkpoint"]) if params["checkpoint"] else None
    )
    if checkpoint is not None and (
        checkpoint.n_users != dataset.n_users or checkpoint.n_items != dataset.n_items
    ):
        raise DataError(
            f"checkpoint shape ({checkpoint.n_users} users, {checkpoint.n_items} "
            f"items) does not match the dataset ({dataset.n_users}, {dataset.n_items})"
        )
    reports = []
    for offset in range(params["splits"]):
        split_seed = params["seed_base"] + offset
        split = loo_split(dataset, split_seed, n_negatives=params["negatives"])
        if checkpoint is not None:
            model = checkpoint
        else:
            model, _ = train(split.train, replace(base, seed=split_seed))
        reports.append(evaluate_split(model, split, dataset))
    lines = [MACHINE_HEADER] + [machine_row(r) for r in reports]
    rows_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    table_path.write_text(
        format_table(params["model"], reports) + "\n", encoding="utf-8"
    )
    print(f"wrote {rows_path}")


def cmd_evaluate(args) -> None:
    params = {
        "data": args.data,
        "format": args.format,
        "model": args.model,
        "checkpoint": args.checkpoint,
        "splits": args.splits,
        "seed_base": args.seed_base,
        "negatives": args.negatives,
        "min_item_count": args.min_item_count,
        "top_users": args.top_users,
        "learning_rate": args.learning_rate,
        "l1_weight": args.l1,
        "l2_weight": args.l2,
        "epochs": args.epochs,
        "n_factors": args.k,
        "seed": args.seed_base,
        "convergence_rel_tol": 0.0,
        "freeze_right_factors": args.model == "bpr",
        "shuffle": False,
    }
    run_dir = make_run_dir(_resolve_out_root(args), "evaluate", args.seed_base)
    run_evaluate(params, run_dir, fresh=True)


# ---------------------------------------------------------------------------
# rerun


_RUNNERS = {
    "simulate": run_simulate,
    "train": run_train,
    "gibbs": run_gibbs,
    "evaluate": run_evaluate,
}


def cmd_rerun(args) -> None:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise DataError(f"{manifest_path}: no such manifest")
    payload = json.loads(manifest_path.read_text(encoding="utf-8"))
    command = payload.get("command")
    if command not in _RUNNERS:
        raise DataError(f"{manifest_path}: unknown command {command!r}")
    for path, digest in payload.get("inputs", {}).items():
        if not Path(path).exists():
            raise DataError(f"rerun input missing: {path}")
        if content_digest(path) != digest:
            raise DataError(f"rerun input changed since the original run: {path}")
    run_dir = manifest_path.parent
    _RUNNERS[command](payload["params"], run_dir, fresh=False)


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p, default_epochs=20, default_k=5):
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--l1", type=float, default=0.01)
    p.add_argument("--l2", type=float, default=0.005)
    p.add_argument("--epochs", type=int, default=default_epochs)
    p.add_argument("--k", type=int, default=default_k)


def build_parser() -> _Parser:
    parser = _Parser(prog="sadrec", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the synthetic recovery study")
    p.add_argument("--kind", choices=["sim1", "sim2"], default="sim2")
    p.add_argument("--missing", default="0", help="comma list of missing fractions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--items", type=int, default=50)
    p.add_argument("--factors", type=int, default=5)
    p.add_argument("--extreme-fraction", type=float, default=0.14)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--l1", type=float, default=0.01)
    p.add_argument("--l2", type=float, default=0.005)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a model on an interactions file")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "movielens"], default="csv")
    p.add_argument("--model", choices=["sad", "bpr"], default="sad")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--convergence-rel-tol", type=float, default=0.0)
    p.add_argument("--shuffle", action="store_true")
    p.add_argument("--min-item-count", type=int, default=0)
    p.add_argument("--top-users", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value file; overrides flags")
    p.add_argument("--grid", action="store_true", help="sweep the default grid")
    p.add_argument("--grid-learning-rates", default=",".join(map(str, GRID_LEARNING_RATES)))
    p.add_argument("--grid-epochs", default=",".join(map(str, GRID_EPOCHS)))
    p.add_argument("--grid-l2", default=",".join(map(str, GRID_L2)))
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", default="runs")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gibbs", help="posterior inference on a small dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "movielens"], default="csv")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=200)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--max-pairs", type=int, default=DEFAULT_GIBBS_PAIR_CAP)
    p.add_argument("--save-samples", action="store_true")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_gibbs)

    p = sub.add_parser("evaluate", help="leave-one-out evaluation across splits")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "movielens"], default="csv")
    p.add_argument("--model", choices=["sad", "bpr"], default="sad")
    p.add_argument("--checkpoint", default=None, help="evaluate this model instead of training")
    p.add_argument("--splits", type=int, default=20)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--negatives", type=int, default=100)
    p.add_argument("--min-item-count", type=int, default=0)
    p.add_argument("--top-users", type=int, default=None)
    p.add_argument("--out", default="runs")
    _add_train_flags(p, default_epochs=20, default_k=5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rerun", help="re-execute a manifest in place")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DivergedTrainingError, DivergedChainError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3
    except (DataError, SadrecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

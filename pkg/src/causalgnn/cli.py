"""Command-line interface: generate | train | eval | explain | sweep.

Configuration comes from an optional key=value text file plus long-form
flags (flags win).  Every run writes its artifacts under one output
directory with fixed file names and a manifest that pins the resolved
configuration, so any run can be reproduced from its manifest alone.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, graphs, metrics, model, training
from .tensor import ContractError, NumericalError

DATASET_FILE = "dataset.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
HISTORY_FILE = "history.csv"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
EXPLANATIONS_FILE = "explanations.jsonl"
MANIFEST_FILE = "manifest.txt"

DEFAULT_SWEEP_RATIOS = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
SPLIT_CHOICES = ("train", "val", "test", "all")


class UsageError(Exception):
    """Bad flags, unknown keys or unusable paths."""


@dataclass
class RunConfig:
    """Everything one run needs: model hyperparameters plus I/O and sweep axes."""

    train: model.TrainConfig = field(default_factory=model.TrainConfig)
    dataset: str = ""
    generate_count: int = 0
    generate_seed: int = 0
    out: str = ""
    split: str = "test"
    sweep_ratios: str = DEFAULT_SWEEP_RATIOS

    def manifest_items(self) -> list[tuple[str, str]]:
        items = [(k, _format_value(v)) for k, v in self.train.to_dict().items()]
        items += [("dataset", self.dataset),
                  ("generate_count", str(self.generate_count)),
                  ("generate_seed", str(self.generate_seed)),
                  ("split", self.split),
                  ("sweep_ratios", self.sweep_ratios)]
        return items


def _format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


_TRAIN_FIELDS = model.TrainConfig.__dataclass_fields__
_RUN_FIELDS = ("dataset", "generate_count", "generate_seed", "out", "split",
               "sweep_ratios")
_VALID_KEYS = tuple(_TRAIN_FIELDS) + _RUN_FIELDS


def parse_config_file(path: Path) -> dict[str, str]:
    """key = value lines; blank lines and # comments ignored."""
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _VALID_KEYS:
            raise UsageError(
                f"{path}:{lineno}: unknown config key {key!r}; "
                f"valid keys: {', '.join(_VALID_KEYS)}")
        values[key] = value
    return values


def _coerce(key: str, value: str):
    if key in _TRAIN_FIELDS:
        kind = _TRAIN_FIELDS[key].type
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    if key in ("generate_count", "generate_seed"):
        return int(value)
    return value


def build_run_config(file_values: dict[str, str],
                     flag_values: dict[str, object]) -> RunConfig:
    merged: dict[str, object] = {}
    for key, value in file_values.items():
        merged[key] = _coerce(key, value)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    train_kwargs = {k: v for k, v in merged.items() if k in _TRAIN_FIELDS}
    run = RunConfig(train=model.TrainConfig(**train_kwargs))
    for key in _RUN_FIELDS:
        if key in merged:
            setattr(run, key, merged[key])
    try:
        run.train.validate()
    except ContractError as err:
        raise UsageError(str(err)) from err
    if run.split not in SPLIT_CHOICES:
        raise UsageError(f"split must be one of {SPLIT_CHOICES}")
    return run


def config_hash(run: RunConfig) -> str:
    blob = "\n".join(f"{k} = {v}" for k, v in run.manifest_items())
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(out_dir: Path, run: RunConfig, command: str) -> None:
    lines = [f"# reproducible run manifest",
             f"version = {__version__}",
             f"command = {command}",
             f"config_hash = {config_hash(run)}"]
    lines += [f"{k} = {v}" for k, v in run.manifest_items()]
    (out_dir / MANIFEST_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_or_generate(run: RunConfig, out_dir: Path | None) -> graphs.Dataset:
    if run.dataset:
        path = Path(run.dataset)
        if not path.exists():
            raise UsageError(f"dataset file not found: {path}")
        return graphs.load_dataset(path)
    if run.generate_count > 0:
        dataset = graphs.generate_ba2motif(run.generate_count, run.generate_seed)
        if out_dir is not None:
            graphs.save_dataset(dataset, out_dir / DATASET_FILE)
        return dataset
    raise UsageError("provide --dataset PATH or --generate-count N")


def _indices_for(split_name: str, dataset: graphs.Dataset, seed: int) -> list[int]:
    if split_name == "all":
        return list(range(len(dataset)))
    sp = graphs.split(dataset, seed)
    return getattr(sp, {"train": "train", "val": "val", "test": "test"}[split_name])


def _out_dir(run: RunConfig) -> Path:
    if not run.out:
        raise UsageError("an output location is required: pass --out DIR")
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------------


def cmd_generate(run: RunConfig) -> int:
    if run.generate_count <= 0:
        raise UsageError("generate needs --count N (even, positive)")
    dataset = graphs.generate_ba2motif(run.generate_count, run.generate_seed)
    out = Path(run.out) if run.out else Path(DATASET_FILE)
    if out.suffix == ".jsonl":
        out.parent.mkdir(parents=True, exist_ok=True)
        target = out
    else:
        out.mkdir(parents=True, exist_ok=True)
        target = out / DATASET_FILE
    graphs.save_dataset(dataset, target)
    print(f"wrote {len(dataset)} graphs to {target}")
    return 0


def cmd_train(run: RunConfig) -> int:
    out = _out_dir(run)
    dataset = _load_or_generate(run, out)
    params, history = training.train(dataset, run.train)
    training.save_checkpoint(out / CHECKPOINT_FILE, params, history)
    (out / HISTORY_FILE).write_text(history.to_csv(), encoding="utf-8")
    write_manifest(out, run, "train")
    print(f"trained {run.train.epochs} epochs; best val accuracy "
          f"{history.best_val_accuracy:.4f} at epoch {history.best_epoch}")
    print(f"checkpoint: {out / CHECKPOINT_FILE}")
    return 0


def _evaluation_report(params: model.ModelParams, dataset: graphs.Dataset,
                       indices: list[int], split_name: str) -> dict:
    preds = training.predict_labels(params, dataset, indices)
    truth = [dataset.graphs[i].label for i in indices]
    confusion = metrics.Confusion.from_predictions(truth, preds)
    accuracy, f1, mcc = metrics.metrics(confusion)
    report = {
        "split": split_name,
        "n_evaluated": len(indices),
        "accuracy": accuracy,
        "f1": f1,
        "mcc": mcc,
        "confusion": {"tp": confusion.tp, "tn": confusion.tn,
                      "fp": confusion.fp, "fn": confusion.fn},
        "explanations": None,
    }
    has_masks = any(dataset.graphs[i].mask is not None
                    and dataset.graphs[i].mask_edge_list() for i in indices)
    if has_masks and params.config.variant != "plain-classifier":
        report["explanations"] = metrics.score_explanations(params, dataset, indices)
    return report


def _report_text(report: dict) -> str:
    rows = [("split", report["split"]),
            ("graphs", report["n_evaluated"]),
            ("accuracy", f"{report['accuracy']:.4f}"),
            ("f1", f"{report['f1']:.4f}"),
            ("mcc", f"{report['mcc']:.4f}")]
    if report["explanations"]:
        ex = report["explanations"]
        rows.append(("explanation_auc", f"{ex['auc']:.4f}"))
        rows.append(("explanation_raw_auc", f"{ex['raw_auc']:.4f}"))
        for k, v in ex["precision_at_k"].items():
            rows.append((f"precision_at_{k}", f"{v:.4f}"))
    width = max(len(str(k)) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def cmd_eval(run: RunConfig, checkpoint: str) -> int:
    out = _out_dir(run)
    path = Path(checkpoint)
    if not path.exists():
        raise UsageError(f"checkpoint file not found: {path}")
    params, _ = training.load_checkpoint(path)
    dataset = _load_or_generate(run, None)
    indices = _indices_for(run.split, dataset, params.config.seed)
    report = _evaluation_report(params, dataset, indices, run.split)
    (out / REPORT_JSON).write_text(
        json.dumps(report, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    (out / REPORT_TEXT).write_text(_report_text(report), encoding="utf-8")
    write_manifest(out, run, "eval")
    sys.stdout.write(_report_text(report))
    return 0


def cmd_explain(run: RunConfig, checkpoint: str) -> int:
    out = _out_dir(run)
    path = Path(checkpoint)
    if not path.exists():
        raise UsageError(f"checkpoint file not found: {path}")
    params, _ = training.load_checkpoint(path)
    dataset = _load_or_generate(run, None)
    indices = _indices_for(run.split, dataset, params.config.seed)
    explanations = training.explain_graphs(params, dataset, indices)
    with open(out / EXPLANATIONS_FILE, "w", encoding="utf-8") as fh:
        for expl in explanations:
            g = dataset.graphs[expl.graph_id]
            edges = sorted(g.edge_list(),
                           key=lambda e: (-expl.weights[e[0], e[1]], e[0], e[1]))
            record = {"graph_id": expl.graph_id, "label": int(g.label),
                      "edges": [[i, j, float(expl.weights[i, j])]
                                for i, j in edges]}
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    write_manifest(out, run, "explain")
    print(f"wrote {len(explanations)} explanations to {out / EXPLANATIONS_FILE}")
    return 0


def cmd_sweep(run: RunConfig) -> int:
    out = _out_dir(run)
    dataset = _load_or_generate(run, out)
    try:
        ratios = [float(r) for r in run.sweep_ratios.split(",") if r.strip()]
    except ValueError as err:
        raise UsageError(f"bad sweep_ratios: {run.sweep_ratios!r}") from err
    if not ratios or any(not 0 < r < 1 for r in ratios):
        raise UsageError("sweep ratios must lie strictly between 0 and 1")
    total = run.train.causal_dim + run.train.nuisance_dim
    rows = []
    for ratio in ratios:
        causal_dim = round(ratio * total)
        nuisance_dim = total - causal_dim
        if causal_dim < 1 or nuisance_dim < 1:
            raise UsageError(f"ratio {ratio} leaves an empty latent block")
        cfg = model.TrainConfig(**{**run.train.to_dict(),
                                   "causal_dim": causal_dim,
                                   "nuisance_dim": nuisance_dim})
        params, _ = training.train(dataset, cfg)
        sp = graphs.split(dataset, cfg.seed)
        accuracy, f1, mcc = metrics.evaluate_test_metrics(params, dataset, sp.test)
        rows.append({"ratio": ratio, "causal_dim": causal_dim,
                     "nuisance_dim": nuisance_dim, "accuracy": accuracy,
                     "f1": f1, "mcc": mcc})
        print(f"ratio {ratio:.1f}: causal_dim={causal_dim:<3d} accuracy={accuracy:.4f}")
    report = {"latent_total": total, "rows": rows}
    (out / REPORT_JSON).write_text(json.dumps(report, indent=2) + "\n",
                                   encoding="utf-8")
    header = f"{'ratio':>6} {'causal_dim':>10} {'nuisance_dim':>12} " \
             f"{'accuracy':>9} {'f1':>9} {'mcc':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['ratio']:>6.1f} {r['causal_dim']:>10d} "
                     f"{r['nuisance_dim']:>12d} {r['accuracy']:>9.4f} "
                     f"{r['f1']:>9.4f} {r['mcc']:>9.4f}")
    (out / REPORT_TEXT).write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(out, run, "sweep")
    return 0


# -- argument plumbing --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors must exit 1, not argparse's 2
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser, *, dataset: bool = True,
                train_fields: bool = False, checkpoint: bool = False) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--out", help="output directory")
    if dataset:
        parser.add_argument("--dataset", help="dataset file (line-oriented JSON)")
        parser.add_argument("--generate-count", type=int, dest="generate_count",
                            help="generate a synthetic dataset of this size instead")
        parser.add_argument("--generate-seed", type=int, dest="generate_seed",
                            help="seed for the synthetic generator")
    if checkpoint:
        parser.add_argument("--checkpoint", required=True,
                            help="trained checkpoint.json")
        parser.add_argument("--split", choices=SPLIT_CHOICES,
                            help="which split to use (default test)")
    if train_fields:
        for name, f in _TRAIN_FIELDS.items():
            flag = "--" + name.replace("_", "-")
            if f.type == "int":
                parser.add_argument(flag, type=int, dest=name)
            elif f.type == "float":
                parser.add_argument(flag, type=float, dest=name)
            else:
                parser.add_argument(flag, dest=name)


def _build_parser() -> _Parser:
    parser = _Parser(prog="causalgnn", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark dataset")
    p.add_argument("--count", type=int, required=True, dest="generate_count")
    p.add_argument("--seed", type=int, default=0, dest="generate_seed")
    p.add_argument("--out", help="output file (.jsonl) or directory")
    p.add_argument("--config", help="key = value configuration file")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p, train_fields=True)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _add_common(p, checkpoint=True)

    p = sub.add_parser("explain", help="export per-graph edge explanations")
    _add_common(p, checkpoint=True)

    p = sub.add_parser("sweep", help="train across causal/nuisance width ratios")
    _add_common(p, train_fields=True)
    p.add_argument("--sweep-ratios", dest="sweep_ratios",
                   help=f"comma list of causal fractions (default {DEFAULT_SWEEP_RATIOS})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        file_values = parse_config_file(Path(args.config)) if getattr(
            args, "config", None) else {}
        flag_values = {k: v for k, v in vars(args).items()
                       if k in _VALID_KEYS and v is not None}
        run = build_run_config(file_values, flag_values)
        if args.command == "generate":
            return cmd_generate(run)
        if args.command == "train":
            return cmd_train(run)
        if args.command == "eval":
            return cmd_eval(run, args.checkpoint)
        if args.command == "explain":
            return cmd_explain(run, args.checkpoint)
        if args.command == "sweep":
            return cmd_sweep(run)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ContractError, graphs.ValidationError, graphs.DatasetFormatError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

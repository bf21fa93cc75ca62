"""Command-line entry point.

Subcommands: ``train``, ``embed``, ``eval``, ``synth``, ``repro``.
Configuration precedence is defaults < config file < command line; the
resolved configuration is always written next to the outputs so any run
can be reproduced from its snapshot. All randomness flows from explicit
seeds, never the clock.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import evaluate as ev
from . import figures
from .data import (Dataset, build_features, load_dataset, parse_tu_dataset,
                   synth_classification, synth_regression, write_tu_dataset)
from .errors import ConfigError, DataFormatError, NumericError
from .semisup import error_ratio
from .train import (TrainConfig, build_semi_model, build_unsup_model,
                    checkpoint_load, checkpoint_save, train_semisupervised,
                    train_unsupervised)
from .tensor import AdamState
from .rng import RunRng

log = logging.getLogger(__name__)

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}

# Non-TrainConfig keys accepted in config files and --set overrides.
_EXTRA_SCHEMA = {
    "folds": int,
    "eval_seed": int,
    "data_kind": str,      # tu | cache | synth-class | synth-reg
    "data_path": str,
    "data_name": str,
    "data_n": int,
    "data_sizes": str,     # "LO:HI"
    "data_seed": int,
    "labeled_frac": float,
    "valid_frac": float,
    "test_frac": float,
    "split_seed": int,
}

_EXTRA_DEFAULTS = {
    "folds": 10,
    "eval_seed": 0,
    "data_kind": None,
    "data_path": None,
    "data_name": None,
    "data_n": 100,
    "data_sizes": "5:9",
    "data_seed": 0,
    "labeled_frac": 0.1,
    "valid_frac": 0.1,
    "test_frac": 0.1,
    "split_seed": 0,
}


def _parse_value(key: str, raw: str):
    if key in _TRAIN_FIELDS:
        typ = _TRAIN_FIELDS[key].type
        if raw.lower() in ("none", "null"):
            return None
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        if typ in ("bool", bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
        if typ in ("float | None",):
            return float(raw)
        return raw
    if key in _EXTRA_SCHEMA:
        if raw.lower() in ("none", "null"):
            return None
        return _EXTRA_SCHEMA[key](raw)
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_file(path: str) -> dict:
    """Line-oriented ``key=value`` file; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            out[key] = _parse_value(key, raw)
    return out


def resolve_config(args) -> tuple[dict, set]:
    """defaults < config file < --set overrides < dedicated flags.

    Returns the resolved mapping and the set of keys the user set
    explicitly (recipes only fill keys outside that set).
    """
    resolved = {f.name: getattr(TrainConfig(), f.name) for f in
                dataclasses.fields(TrainConfig)}
    resolved.update(_EXTRA_DEFAULTS)
    provided: set[str] = set()
    if getattr(args, "config", None):
        from_file = parse_config_file(args.config)
        resolved.update(from_file)
        provided.update(from_file)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        resolved[key] = _parse_value(key, raw.strip())
        provided.add(key)
    for flag in ("mode", "seed"):
        if getattr(args, flag, None) is not None:
            resolved[flag] = getattr(args, flag)
            provided.add(flag)
    if getattr(args, "data", None):
        if "data_kind" not in provided:
            resolved["data_kind"] = resolved["data_kind"] or "tu"
        resolved["data_path"] = args.data
        provided.update(("data_kind", "data_path"))
    if getattr(args, "name", None):
        resolved["data_name"] = args.name
        provided.add("data_name")
    return resolved, provided


def train_config_from(resolved: dict, **overrides) -> TrainConfig:
    kwargs = {k: resolved[k] for k in _TRAIN_FIELDS}
    kwargs.update(overrides)
    config = TrainConfig(**kwargs)
    config.validate()
    return config


def write_snapshot(path: str, resolved: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# graphmi resolved configuration\n")
        for key in sorted(resolved):
            value = resolved[key]
            fh.write(f"{key}={'none' if value is None else value}\n")


def _sizes(resolved: dict) -> tuple[int, int]:
    raw = resolved["data_sizes"]
    try:
        lo, hi = (int(p) for p in str(raw).split(":"))
    except ValueError:
        raise ConfigError(f"data_sizes must be LO:HI, got {raw!r}") from None
    return lo, hi


def load_data(resolved: dict) -> Dataset:
    kind = resolved["data_kind"]
    if kind is None:
        raise ConfigError("no dataset given: set data_kind (or --data)")
    if kind == "tu":
        path = resolved["data_path"]
        if not path:
            raise ConfigError("data_kind=tu needs data_path")
        name = resolved["data_name"] or os.path.basename(os.path.normpath(path))
        ds = parse_tu_dataset(path, name)
        return build_features(ds, resolved["feature_mode"], resolved["degree_cap"])
    if kind == "cache":
        return load_dataset(resolved["data_path"])
    if kind == "synth-class":
        return synth_classification(resolved["data_n"], _sizes(resolved),
                                    resolved["data_seed"])
    if kind == "synth-reg":
        return synth_regression(resolved["data_n"], _sizes(resolved),
                                resolved["data_seed"])
    raise ConfigError(f"unknown data_kind {kind!r}")


def split_semi(ds: Dataset, resolved: dict):
    """Seeded (labeled, unlabeled, valid, test) split of one dataset."""
    n = len(ds)
    perm = np.random.default_rng(resolved["split_seed"]).permutation(n)
    n_lab = max(1, int(round(resolved["labeled_frac"] * n)))
    n_val = int(round(resolved["valid_frac"] * n))
    n_test = int(round(resolved["test_frac"] * n))
    if n_lab + n_val + n_test > n:
        raise ConfigError("labeled/valid/test fractions exceed the dataset")
    cut1, cut2, cut3 = n_lab, n_lab + n_val, n_lab + n_val + n_test

    def sub(idx) -> Dataset:
        return Dataset(name=ds.name, graphs=[ds.graphs[i] for i in idx],
                       feature_dim=ds.feature_dim, num_classes=ds.num_classes,
                       target_dim=ds.target_dim, metadata=dict(ds.metadata))

    return (sub(perm[:cut1]), sub(perm[cut3:]), sub(perm[cut1:cut2]),
            sub(perm[cut2:cut3]))


def _restore_params(params, state) -> None:
    names = [name for name, _ in params]
    if names != state["param_names"]:
        raise ConfigError("checkpoint parameters do not match the rebuilt model")
    source = state.get("best_params") or state["param_values"]
    for (_, p), values in zip(params, source):
        p.values[...] = values


def load_encoder(checkpoint_path: str):
    """Rebuild the embedding encoder from a checkpoint (best params if
    present)."""
    state = checkpoint_load(checkpoint_path)
    config = TrainConfig(**state["config"])
    feature_dim = state["data_meta"]["feature_dim"]
    if state["kind"] == "unsup":
        encoder, disc = build_unsup_model(config, feature_dim)
        _restore_params(encoder.parameters("enc") + disc.parameters("disc"), state)
        return encoder, config
    model = build_semi_model(config, feature_dim, state["data_meta"]["target_dim"])
    _restore_params(model.parameters(), state)
    return model.sup_encoder, config


# ---------------------------------------------------------------------------
# Subcommands

def cmd_train(args) -> int:
    resolved, _ = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    config = train_config_from(
        resolved,
        checkpoint_path=resolved["checkpoint_path"]
        or os.path.join(args.out, "checkpoint.npz"),
        metrics_path=resolved["metrics_path"]
        or os.path.join(args.out, "metrics.jsonl"),
    )
    write_snapshot(os.path.join(args.out, "resolved.cfg"), resolved)
    ds = load_data(resolved)

    if config.mode == "unsup":
        encoder, disc, records = train_unsupervised(ds, config, resume=args.resume)
        params = encoder.parameters("enc") + disc.parameters("disc")
        final = {"feature_dim": ds.feature_dim}
        kind = "unsup"
    else:
        if ds.target_dim is None:
            raise DataFormatError("semi modes need regression targets")
        labeled, unlabeled, valid, _ = split_semi(ds, resolved)
        model, records = train_semisupervised(labeled, unlabeled, valid,
                                              config, resume=args.resume)
        params = model.parameters()
        final = {"feature_dim": ds.feature_dim, "target_dim": ds.target_dim}
        kind = "semi"

    # Final model (best params for semi) separate from the resumable
    # trajectory checkpoint.
    model_path = os.path.join(args.out, "model.npz")
    checkpoint_save(model_path, config=config, params=params,
                    adam=AdamState.for_params(params), rng=RunRng(config.seed),
                    epoch=config.epochs, kind=kind, data_meta=final)
    if records:
        figures.plot_convergence(records, os.path.join(args.out, "convergence.png"))
    print(f"trained {config.mode} for {len(records)} epochs; "
          f"outputs in {args.out}")
    return 0


def cmd_embed(args) -> int:
    encoder, config = load_encoder(args.checkpoint)
    resolved, _ = resolve_config(args)
    for key in ("feature_mode", "degree_cap"):
        resolved[key] = getattr(config, key)
    ds = load_data(resolved)
    emb = ev.embed_dataset(encoder, ds, batch_size=args.batch_size)
    ev.save_embeddings(emb, args.out)
    write_snapshot(args.out + ".cfg", resolved)
    print(f"wrote {emb.matrix.shape[0]}x{emb.matrix.shape[1]} embeddings to {args.out}")
    return 0


def cmd_eval(args) -> int:
    resolved, _ = resolve_config(args)
    ds = load_data(resolved)
    emb = ev.load_embeddings(args.embeddings)
    if ds.num_classes is None:
        raise DataFormatError("eval needs a classification dataset")
    labels = ds.labels()
    mean, std, accs = ev.logistic_cv(emb, labels, k=resolved["folds"],
                                     seed=resolved["eval_seed"])
    os.makedirs(args.out, exist_ok=True)
    rows = [{"name": ds.name, "mean_acc": mean, "std_acc": std}]
    records = [{"kind": "classification", "name": ds.name, "mean_acc": mean,
                "std_acc": std, "fold_accs": accs,
                "majority_rate": ev.majority_rate(labels),
                "folds": resolved["folds"], "eval_seed": resolved["eval_seed"]}]
    prefix = os.path.join(args.out, "report")
    ev.write_report(prefix, [ev.format_accuracy_table(rows)], records)
    figures.plot_fold_accuracies({ds.name: accs},
                                 os.path.join(args.out, "fold_accuracy.png"))
    write_snapshot(os.path.join(args.out, "eval.cfg"), resolved)
    print(f"accuracy {100 * mean:.2f} ± {100 * std:.2f} "
          f"({resolved['folds']} folds); report in {args.out}")
    return 0


def cmd_synth(args) -> int:
    resolved, _ = resolve_config(args)
    resolved["data_kind"] = f"synth-{args.kind}"
    if args.n is not None:
        resolved["data_n"] = args.n
    if args.kind == "class":
        ds = synth_classification(resolved["data_n"], _sizes(resolved),
                                  resolved["data_seed"])
    elif args.kind == "reg":
        ds = synth_regression(resolved["data_n"], _sizes(resolved),
                              resolved["data_seed"])
    else:
        raise ConfigError(f"unknown synth kind {args.kind!r}")
    name = resolved["data_name"] or ds.name
    write_tu_dataset(ds, args.out, name)
    write_snapshot(os.path.join(args.out, "synth.cfg"), resolved)
    print(f"wrote {len(ds)} graphs in TU format to {args.out} (name {name})")
    return 0


# ---------------------------------------------------------------------------
# Reproduction recipes

RECIPES = {
    "mutag-unsup": {
        "data_kind": "tu", "data_name": "MUTAG", "feature_mode": "node-labels",
        "mode": "unsup", "num_layers": 3, "hidden_dim": 32, "lr": 1e-3,
        "batch_size": 128, "epochs": 100,
    },
    "synth-unsup": {
        "data_kind": "synth-class", "data_n": 50, "data_sizes": "5:9",
        "data_seed": 0, "mode": "unsup", "num_layers": 3, "hidden_dim": 32,
        "lr": 1e-3, "batch_size": 128, "epochs": 30,
    },
    "synth-semi-star": {
        "data_kind": "synth-reg", "data_n": 600, "data_sizes": "5:9",
        "data_seed": 0, "mode": "semi-star", "num_layers": 3, "hidden_dim": 32,
        "lr": 1e-3, "batch_size": 20, "epochs": 60, "lam": 1.0,
        "labeled_frac": 0.1, "valid_frac": 0.1, "test_frac": 0.1,
        "split_seed": 0,
    },
    "synth-semi-combined": {
        "data_kind": "synth-reg", "data_n": 600, "data_sizes": "5:9",
        "data_seed": 0, "mode": "semi-combined", "num_layers": 3,
        "hidden_dim": 32, "lr": 1e-3, "batch_size": 20, "epochs": 60,
        "lam": 1e-3, "labeled_frac": 0.1, "valid_frac": 0.1, "test_frac": 0.1,
        "split_seed": 0,
    },
}


def _parse_seeds(args) -> list[int]:
    if args.seeds:
        if ".." in args.seeds:
            lo, hi = args.seeds.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in args.seeds.split(",")]
    return [args.seed if args.seed is not None else 0]


def _repro_unsup(resolved: dict, seeds: list[int], out: str) -> list[dict]:
    ds = load_data(resolved)
    labels = ds.labels()
    majority = ev.majority_rate(labels)
    records = []
    first_records = None
    first_folds = {}
    for seed in seeds:
        run_dir = os.path.join(out, f"seed{seed}")
        os.makedirs(run_dir, exist_ok=True)
        config = train_config_from(
            resolved, seed=seed,
            checkpoint_path=os.path.join(run_dir, "checkpoint.npz"),
            metrics_path=os.path.join(run_dir, "metrics.jsonl"))
        # Random-initialization control: same architecture, no training.
        control, _ = build_unsup_model(config, ds.feature_dim)
        emb0 = ev.embed_dataset(control, ds)
        m0, s0, accs0 = ev.logistic_cv(emb0, labels, k=resolved["folds"],
                                       seed=resolved["eval_seed"])
        encoder, _, run_records = train_unsupervised(ds, config)
        emb = ev.embed_dataset(encoder, ds)
        ev.save_embeddings(emb, os.path.join(run_dir, "embeddings.txt"))
        mean, std, accs = ev.logistic_cv(emb, labels, k=resolved["folds"],
                                         seed=resolved["eval_seed"])
        records.append({
            "kind": "unsup-run", "seed": seed, "mean_acc": mean,
            "std_acc": std, "fold_accs": accs, "random_encoder_acc": m0,
            "random_encoder_std": s0, "majority_rate": majority,
        })
        if first_records is None:
            first_records = run_records
            first_folds = {"trained": accs, "random encoder": accs0}
        log.info("seed %d: trained %.4f random %.4f majority %.4f",
                 seed, mean, m0, majority)
    if first_records:
        figures.plot_convergence(first_records, os.path.join(out, "convergence.png"))
    if first_folds:
        figures.plot_fold_accuracies(first_folds,
                                     os.path.join(out, "fold_accuracy.png"))
    return records


def _repro_semi(resolved: dict, seeds: list[int], out: str) -> list[dict]:
    ds = load_data(resolved)
    labeled, unlabeled, valid, test = split_semi(ds, resolved)
    records = []
    first_records = None
    for seed in seeds:
        run_dir = os.path.join(out, f"seed{seed}")
        os.makedirs(run_dir, exist_ok=True)
        arm_cfg = train_config_from(
            resolved, seed=seed,
            metrics_path=os.path.join(run_dir, "metrics.jsonl"))
        model, run_records = train_semisupervised(labeled, unlabeled, valid, arm_cfg)
        test_mae = _test_mae(model, test)
        sup_cfg = train_config_from(
            resolved, seed=seed, mode="semi-combined", lam=0.0,
            metrics_path=os.path.join(run_dir, "metrics_supervised.jsonl"))
        sup_model, _ = train_semisupervised(labeled, unlabeled, valid, sup_cfg)
        sup_mae = _test_mae(sup_model, test)
        ratio = error_ratio(test_mae, sup_mae)
        records.append({
            "kind": "semi-run", "seed": seed, "mode": resolved["mode"],
            "test_mae": test_mae, "supervised_mae": sup_mae,
            "error_ratio": ratio,
        })
        if first_records is None:
            first_records = run_records
        log.info("seed %d: mae %.4f supervised %.4f ratio %.3f",
                 seed, test_mae, sup_mae, ratio)
    if first_records:
        figures.plot_convergence(first_records, os.path.join(out, "convergence.png"))
    figures.plot_error_ratios(
        [{"name": f"seed {r['seed']}", "error_ratio": r["error_ratio"]}
         for r in records],
        os.path.join(out, "error_ratio.png"))
    return records


def _test_mae(model, test: Dataset) -> float:
    from .data import make_batch
    batch = make_batch(test.graphs)
    return float(ev.mae(model.predict(batch), batch.targets).mean())


def cmd_repro(args) -> int:
    if args.recipe not in RECIPES:
        raise ConfigError(
            f"unknown recipe {args.recipe!r}; available: {sorted(RECIPES)}")
    resolved, provided = resolve_config(args)
    # The recipe fills every key the user did not set explicitly.
    for key, value in RECIPES[args.recipe].items():
        if key not in provided:
            resolved[key] = value
    seeds = _parse_seeds(args)
    os.makedirs(args.out, exist_ok=True)
    write_snapshot(os.path.join(args.out, "resolved.cfg"), resolved)

    if resolved["mode"] == "unsup":
        records = _repro_unsup(resolved, seeds, args.out)
        means = [r["mean_acc"] for r in records]
        rows = [
            {"name": f"{args.recipe} (trained)", "mean_acc": float(np.mean(means)),
             "std_acc": float(np.std(means))},
            {"name": "random encoder",
             "mean_acc": float(np.mean([r["random_encoder_acc"] for r in records])),
             "std_acc": float(np.std([r["random_encoder_acc"] for r in records]))},
            {"name": "majority class",
             "mean_acc": records[0]["majority_rate"], "std_acc": 0.0},
        ]
        summary = {"kind": "summary", "recipe": args.recipe, "seeds": seeds,
                   "mean_acc": float(np.mean(means)),
                   "std_acc": float(np.std(means)),
                   "random_encoder_acc": rows[1]["mean_acc"],
                   "majority_rate": rows[2]["mean_acc"]}
        tables = [ev.format_accuracy_table(rows)]
        print(f"{args.recipe}: accuracy {100 * summary['mean_acc']:.2f} "
              f"± {100 * summary['std_acc']:.2f} over {len(seeds)} seeds")
    else:
        records = _repro_semi(resolved, seeds, args.out)
        ratios = sorted(r["error_ratio"] for r in records)
        median = float(np.median(ratios))
        summary = {"kind": "summary", "recipe": args.recipe, "seeds": seeds,
                   "median_error_ratio": median,
                   "error_ratios": [r["error_ratio"] for r in records],
                   "test_maes": [r["test_mae"] for r in records],
                   "supervised_maes": [r["supervised_mae"] for r in records]}
        tables = [ev.format_mae_table(
            [{"name": f"seed {r['seed']}", "mae": r["test_mae"],
              "mae_raw": None, "error_ratio": r["error_ratio"]}
             for r in records])]
        print(f"{args.recipe}: median error ratio {median:.2f} "
              f"over {len(seeds)} seeds")
    ev.write_report(os.path.join(args.out, "summary"), tables,
                    records + [summary])
    return 0


# ---------------------------------------------------------------------------

def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="TU-format dataset directory")
    p.add_argument("--name", help="dataset name (defaults to directory name)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphmi",
        description="whole-graph representation learning by mutual-information "
                    "maximization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_data_flags(p)
    p.add_argument("--mode", choices=("unsup", "semi-combined", "semi-star"))
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a dataset with a trained encoder")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="cross-validated evaluation of embeddings")
    _add_data_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset in TU format")
    _add_data_flags(p)
    p.add_argument("--kind", choices=("class", "reg"), required=True)
    p.add_argument("--n", type=int, help="graphs (reg) or graphs per class (class)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("repro", help="run a named end-to-end recipe")
    _add_data_flags(p)
    p.add_argument("recipe", choices=sorted(RECIPES))
    p.add_argument("--seeds", help="e.g. 1..5 or 1,2,3")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_repro)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GRAPHMI_LOGLEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

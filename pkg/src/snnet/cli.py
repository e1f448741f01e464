"""Operator commands: gen, train, eval, predict.

Configuration is a flat `key = value` text file; command-line flags override
file values. Unknown keys are rejected, referenced paths are validated before
any work starts, every command echoes its fully resolved configuration, and
all randomness flows from the single top-level seed. Output files are written
atomically (temp file + rename).
"""

import argparse
import json
import os
import sys
import tempfile

from .lightcurves import (
    DatasetFormatError,
    GeneratorConfig,
    class_counts,
    dataset_sparsity,
    encode,
    kfold_split,
    load_jsonl,
    save_jsonl,
    synth_generate,
)
from .losses import MarginConfig
from .metrics import aggregate_folds, evaluate_fold, score_samples, write_roc_csv
from .network import CheckpointError, load_checkpoint, plan_network, save_checkpoint
from .optim import TrainPlan
from .rng import substream
from .training import train_cnn, train_head, train_siamese, write_trace_csv


class ConfigError(Exception):
    pass


def _int_tuple(text):
    return tuple(int(v) for v in str(text).split(","))


# key -> (parser, default); mode-dependent defaults are filled at resolve time.
CONFIG_SCHEMA = {
    "seed": (int, 0),
    "data.path": (str, "dataset.jsonl"),
    "data.n_curves": (int, 5000),
    "data.class_balance": (float, 0.5),
    "data.duration_min": (int, 100),
    "data.duration_max": (int, 180),
    "data.noise_sigma": (float, 0.08),
    "data.visit_prob": (float, 0.42),
    "data.band_prob": (float, 0.70),
    "net.stem_channels": (int, 16),
    "net.pre_channels": (_int_tuple, (64, 64, 96, 96, 128)),
    "net.color_channels": (int, 128),
    "net.post_channels": (_int_tuple, (160, 192, 224, 256)),
    "net.head_units": (int, 1024),
    "train.iterations": (int, None),  # default depends on mode: 4500 cnn / 9000 siamese
    "train.batch_size": (int, 128),
    "train.lr_start": (float, 1e-2),
    "train.lr_end": (float, 5e-4),
    "train.dropout": (float, 0.4),
    "train.augment_prob": (float, 0.5),
    "train.margin": (float, 1.0),
    "train.margin_prime": (float, 1.0),
    "eval.k": (int, 4),
    "io.out_dir": (str, "."),
    "io.checkpoint": (str, ""),
}


def parse_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def resolve_config(args):
    """Merge defaults, the config file, and command-line flags (flags win)."""
    resolved = {}
    file_values = parse_config_file(args.config) if args.config else {}
    explicit = set(file_values)
    for key, (parse, default) in CONFIG_SCHEMA.items():
        if key in file_values:
            try:
                resolved[key] = parse(file_values[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        else:
            resolved[key] = default
    if args.seed is not None:
        resolved["seed"] = args.seed
        explicit.add("seed")
    if args.out is not None:
        resolved["io.out_dir"] = args.out
    if getattr(args, "k", None) is not None:
        resolved["eval.k"] = args.k
    if getattr(args, "data", None) is not None:
        resolved["data.path"] = args.data
    if getattr(args, "checkpoint", None) is not None:
        resolved["io.checkpoint"] = args.checkpoint
    mode = getattr(args, "mode", None)
    if resolved["train.iterations"] is None:
        resolved["train.iterations"] = 9000 if mode == "siamese" else 4500
    resolved["_explicit"] = explicit
    return resolved


def _echo_config(cfg, out_dir):
    lines = [f"{key} = {_fmt_value(cfg[key])}" for key in sorted(CONFIG_SCHEMA)]
    text = "\n".join(lines) + "\n"
    print("resolved configuration:")
    print(text, end="")
    atomic_write_text(os.path.join(out_dir, "resolved-config.txt"), text)
    return text


def _fmt_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-snnet-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_via(path, writer):
    """Run writer(tmp_path) then rename tmp over path."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-snnet-")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _generator_config(cfg):
    return GeneratorConfig(
        n_curves=cfg["data.n_curves"],
        class_balance=cfg["data.class_balance"],
        duration_min=cfg["data.duration_min"],
        duration_max=cfg["data.duration_max"],
        noise_sigma=cfg["data.noise_sigma"],
        visit_prob=cfg["data.visit_prob"],
        band_prob=cfg["data.band_prob"],
        seed=cfg["seed"],
    )


def _network_config(cfg):
    return plan_network(
        stem_channels=cfg["net.stem_channels"],
        pre_channels=cfg["net.pre_channels"],
        color_channels=cfg["net.color_channels"],
        post_channels=cfg["net.post_channels"],
        head_units=cfg["net.head_units"],
    )


def _train_plan(cfg, seed):
    return TrainPlan(
        iterations=cfg["train.iterations"],
        batch_size=cfg["train.batch_size"],
        lr_start=cfg["train.lr_start"],
        lr_end=cfg["train.lr_end"],
        dropout=cfg["train.dropout"],
        augment_prob=cfg["train.augment_prob"],
        seed=seed,
    )


def _require_dataset(cfg):
    path = cfg["data.path"]
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset not found: {path}")
    dataset = load_jsonl(path)
    if not dataset:
        raise DatasetFormatError(f"dataset {path} is empty")
    return dataset


def _prepare_out_dir(cfg):
    out_dir = cfg["io.out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    return out_dir


def _train_for_mode(dataset, net_cfg, plan, mode, margins):
    if mode == "cnn":
        net, trace = train_cnn(dataset, net_cfg, plan)
        return net, {"trace": trace}
    net, trace = train_siamese(dataset, net_cfg, plan, margins=margins)
    head_trace = train_head(net, dataset, plan)
    return net, {"trace": trace, "head_trace": head_trace}


def cmd_gen(cfg):
    out_dir = _prepare_out_dir(cfg)
    _echo_config(cfg, out_dir)
    gen_cfg = _generator_config(cfg)
    dataset = synth_generate(gen_cfg)
    _atomic_via(cfg["data.path"], lambda tmp: save_jsonl(dataset, tmp))
    counts = class_counts(dataset)
    sparsity = dataset_sparsity(dataset)
    print(f"wrote {len(dataset)} curves to {cfg['data.path']}")
    print(f"class balance: {counts['Ia']} Ia / {counts['notIa']} notIa")
    print(f"zero-cell fraction: {sparsity:.4f} (required > 0.70)")
    return 0


def cmd_train(cfg, mode):
    out_dir = _prepare_out_dir(cfg)
    dataset = _require_dataset(cfg)
    _echo_config(cfg, out_dir)
    plan = _train_plan(cfg, cfg["seed"])
    margins = MarginConfig(cfg["train.margin"], cfg["train.margin_prime"])
    net, traces = _train_for_mode(dataset, _network_config(cfg), plan, mode, margins)
    ckpt_path = cfg["io.checkpoint"] or os.path.join(out_dir, f"checkpoint-{mode}.snnet")
    _atomic_via(ckpt_path, lambda tmp: save_checkpoint(net, tmp))
    trace_path = os.path.join(out_dir, f"trace-{mode}.csv")
    _atomic_via(trace_path, lambda tmp: write_trace_csv(traces["trace"], tmp))
    if "head_trace" in traces:
        _atomic_via(
            os.path.join(out_dir, f"trace-{mode}-head.csv"),
            lambda tmp: write_trace_csv(traces["head_trace"], tmp),
        )
    print(f"trained {mode} for {plan.iterations} steps; checkpoint at {ckpt_path}")
    print(f"loss trace at {trace_path}")
    return 0


def cmd_eval(cfg, mode):
    out_dir = _prepare_out_dir(cfg)
    dataset = _require_dataset(cfg)
    config_text = _echo_config(cfg, out_dir)
    k = cfg["eval.k"]
    margins = MarginConfig(cfg["train.margin"], cfg["train.margin_prime"])
    net_cfg = _network_config(cfg)
    folds = kfold_split(dataset, k, cfg["seed"])
    reports = []
    lines = []
    for i, (train_set, test_set) in enumerate(folds):
        fold_seed = int(substream(cfg["seed"], "fold", i).integers(2**31))
        plan = _train_plan(cfg, fold_seed)
        net, _ = _train_for_mode(train_set, net_cfg, plan, mode, margins)
        report = evaluate_fold(net, test_set)
        reports.append(report)
        roc_path = os.path.join(out_dir, f"roc-fold{i}.csv")
        _atomic_via(roc_path, lambda tmp, r=report: write_roc_csv(r.roc, tmp))
        line = (
            f"fold {i}: train={len(train_set)} test={len(test_set)} "
            f"accuracy={report.accuracy:.17g} auc={report.auc:.17g}"
        )
        lines.append(line)
        print(line)
    agg = aggregate_folds(reports)
    summary = (
        f"aggregate ({k} folds, positive class Ia): "
        f"AUC {agg['auc_mean']:.4g} ± {agg['auc_std']:.2g} | "
        f"accuracy {agg['accuracy_mean']:.4g} ± {agg['accuracy_std']:.2g}"
    )
    lines.append(summary)
    print(summary)
    report_text = (
        "# snnet eval report\n# resolved configuration:\n"
        + "".join("# " + ln + "\n" for ln in config_text.splitlines())
        + "\n".join(lines)
        + "\n"
    )
    atomic_write_text(os.path.join(out_dir, "eval-report.txt"), report_text)
    return 0


def cmd_predict(cfg):
    out_dir = _prepare_out_dir(cfg)
    ckpt_path = cfg["io.checkpoint"]
    if not ckpt_path:
        raise ConfigError("predict requires io.checkpoint (or --checkpoint)")
    if not os.path.exists(ckpt_path):
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    dataset = _require_dataset(cfg)
    _echo_config(cfg, out_dir)
    expected = None
    if any(key.startswith("net.") for key in cfg["_explicit"]):
        expected = _network_config(cfg)
    net = load_checkpoint(ckpt_path, expected_config=expected)
    samples = [encode(curve) for curve in dataset]
    scores = score_samples(net, samples)
    rows = ["id,score_Ia,predicted_label"]
    for sample, score in zip(samples, scores):
        label = "Ia" if score >= 0.5 else "notIa"
        rows.append(f"{sample.id},{score:.17g},{label}")
    out_path = os.path.join(out_dir, "predictions.csv")
    atomic_write_text(out_path, "\n".join(rows) + "\n")
    print(f"wrote {len(samples)} predictions to {out_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="snnet",
        description="Train and evaluate light-curve classifiers (Ia vs notIa).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--seed", type=int, help="top-level random seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="dataset JSONL path")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p_gen)

    p_train = sub.add_parser("train", help="train one network on a dataset")
    common(p_train)
    p_train.add_argument("--mode", choices=("cnn", "siamese"), default="cnn")

    p_eval = sub.add_parser("eval", help="k-fold cross-validated evaluation")
    common(p_eval)
    p_eval.add_argument("--mode", choices=("cnn", "siamese"), default="cnn")
    p_eval.add_argument("--k", type=int, help="number of folds")

    p_pred = sub.add_parser("predict", help="score curves with a checkpoint")
    common(p_pred)
    p_pred.add_argument("--checkpoint", help="checkpoint path")
    return parser


ERROR_CATEGORIES = (
    (ConfigError, "config", 2),
    (CheckpointError, "checkpoint", 1),
    (DatasetFormatError, "data", 1),
    (FileNotFoundError, "io", 1),
    (PermissionError, "io", 1),
    (ValueError, "config", 2),
    (FloatingPointError, "numeric", 1),
)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.mode)
        if args.command == "eval":
            return cmd_eval(cfg, args.mode)
        return cmd_predict(cfg)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        for exc_type, category, code in ERROR_CATEGORIES:
            if isinstance(exc, exc_type):
                break
        else:
            category, code = "internal", 1
        print(json.dumps({"category": category, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

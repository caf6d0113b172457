"""Command-line pipeline over the library.

Subcommands cover the whole workflow: synthesize a ground-truth corpus,
split it, tune hyperparameters, train, interpret filters, estimate
effects, run the n-gram benchmark, check gradients, and evaluate.

Every stage reads one YAML config (bundled profile name or a path),
applies ``--set section.key=value`` overrides, and writes its outputs
plus a JSON manifest into ``--out``.  Manifests record the effective
config, package version, seeds, and input/output hashes, and contain no
timestamps: re-running a stage on identical inputs reproduces every
output byte for byte.

Exit codes: 0 success, 1 invalid configuration or a failed check,
2 missing or unreadable input, 3 file-format version mismatch.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import itertools
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .corpus import (
    Corpus,
    CorpusError,
    InvariantError,
    PlantedPattern,
    SplitError,
    SplitSpec,
    SyntheticSpec,
    VersionMismatchError,
    generate_synthetic,
    read_corpus,
    split,
    write_corpus,
)
from .effects import (
    EffectsError,
    bootstrap_ols,
    bootstrap_retrain,
    collinearity_check,
    ols_fit,
    oos_mse,
    treatment_matrix,
)
from .interpret import (
    collect_top_phrases,
    correlation_grid,
    pooled_matrix,
    useful_filters,
)
from .loss import LossWeights, balanced_class_weights, fd_check
from .model import (
    ModelConfig,
    ModelFormatError,
    ModelVersionError,
    init_params,
    load_model,
    save_model,
)
from .rlr import RLRError, rlr_report
from .train import (
    Candidate,
    TrainConfig,
    TrainError,
    evaluate_model,
    train,
    tune,
)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Configuration

DEFAULT_CONFIG: dict = {
    "corpus": {"max_tokens": None, "embedding_dim": None},
    "model": {"kernel_sizes": [3], "n_filters": 8},
    "loss": {
        "conv_l2": 0.0,
        "activity": 0.0,
        "out_l1": 0.0,
        "class_weights": "balanced",
    },
    "train": {
        "epochs": 100,
        "batch_size": 32,
        "learning_rate": 0.001,
        "patience": 15,
        "val_fraction": 0.2,
    },
    "split": {"train_fraction": 0.8},
    "interpret": {"useful_threshold": 0.05, "top_k": 10},
    "effects": {"n_boot": 1000, "n_boot_retrain": 150},
    "rlr": {"gram_sizes": [1, 2, 3], "min_count": 5, "max_selected": 16},
    "tune": {"n_folds": 5, "grid": {}},
    "gradcheck": {
        "n_instances": 5,
        "n_samples": 16,
        "doc_length_range": [6, 12],
        "h": 1e-5,
        "floor": 1e-4,
        "tie_tolerance": 1e-7,
        "tolerance": 1e-4,
    },
    "synth": None,
}

_SYNTH_KEYS = {
    "n_samples",
    "vocab_size",
    "embedding_dim",
    "doc_length_range",
    "noise_sigma",
    "outcome_rule",
    "logistic_intercept",
    "logistic_coefficients",
    "patterns",
}
_PATTERN_KEYS = {"tokens", "base_rate", "cluster_size", "cluster_spread"}


def _merge_section(base: dict, user: dict, section: str):
    for key, value in user.items():
        if key not in base:
            raise CliError(1, f"unknown config key {section}.{key}")
        base[key] = value


def _load_yaml(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(2, f"config file not found: {path}")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise CliError(1, f"config is not valid YAML: {e}")
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise CliError(1, "config root must be a mapping")
    return doc


def _resolve_config_source(name: str) -> dict:
    path = Path(name)
    if path.exists():
        return _load_yaml(path)
    if "/" not in name and "\\" not in name:
        # Bare names fall back to the bundled profiles.
        candidate = resources.files("texttreat") / "data" / f"{name}.yaml"
        if candidate.is_file():
            return yaml.safe_load(candidate.read_text(encoding="utf-8"))
    raise CliError(2, f"config file not found: {name}")


def effective_config(args) -> dict:
    """Defaults, then the config file, then --set overrides, validated."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        user = _resolve_config_source(args.config)
        for section, value in user.items():
            if section not in cfg:
                raise CliError(1, f"unknown config section {section!r}")
            if section == "synth":
                _check_synth(value)
                cfg[section] = value
            elif isinstance(cfg[section], dict):
                if not isinstance(value, dict):
                    raise CliError(1, f"config section {section!r} must be a mapping")
                _merge_section(cfg[section], value, section)
            else:
                cfg[section] = value
    for item in args.overrides or []:
        if "=" not in item:
            raise CliError(1, f"--set needs KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise CliError(1, f"--set value is not valid YAML: {raw!r}")
        _apply_dotted(cfg, key.strip(), value)
    return cfg


def _check_synth(section):
    if not isinstance(section, dict):
        raise CliError(1, "synth section must be a mapping")
    for key in section:
        if key not in _SYNTH_KEYS:
            raise CliError(1, f"unknown config key synth.{key}")
    for pat in section.get("patterns", []):
        if not isinstance(pat, dict):
            raise CliError(1, "each synth pattern must be a mapping")
        for key in pat:
            if key not in _PATTERN_KEYS:
                raise CliError(1, f"unknown synth pattern key {key!r}")


def _apply_dotted(cfg: dict, dotted: str, value):
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise CliError(1, f"unknown config key {dotted!r}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise CliError(1, f"unknown config key {dotted!r}")
    node[leaf] = value


def _config_error(fn, *args, **kwargs):
    # Dataclass validators raise ValueError; surface them as exit code 1.
    try:
        return fn(*args, **kwargs)
    except (ValueError, TypeError, InvariantError) as e:
        raise CliError(1, f"invalid configuration: {e}")


def model_config_from(cfg: dict, embedding_dim: int) -> ModelConfig:
    section = cfg["model"]
    return _config_error(
        ModelConfig,
        kernel_sizes=tuple(section["kernel_sizes"]),
        n_filters=int(section["n_filters"]),
        embedding_dim=embedding_dim,
    )


def loss_weights_from(cfg: dict) -> LossWeights:
    section = cfg["loss"]
    cw = section["class_weights"]
    if cw == "balanced":
        resolved = None  # train() resolves from the data
    elif isinstance(cw, (list, tuple)) and len(cw) == 2:
        resolved = (float(cw[0]), float(cw[1]))
    else:
        raise CliError(
            1, "loss.class_weights must be 'balanced' or a [w0, w1] pair"
        )
    return _config_error(
        LossWeights,
        conv_l2=float(section["conv_l2"]),
        activity=float(section["activity"]),
        out_l1=float(section["out_l1"]),
        class_weights=resolved,
    )


def train_config_from(cfg: dict, seed: int) -> TrainConfig:
    section = cfg["train"]
    return _config_error(
        TrainConfig,
        epochs=int(section["epochs"]),
        batch_size=int(section["batch_size"]),
        learning_rate=float(section["learning_rate"]),
        patience=int(section["patience"]),
        val_fraction=float(section["val_fraction"]),
        seed=seed,
    )


def synthetic_spec_from(cfg: dict, seed: int) -> SyntheticSpec:
    section = cfg.get("synth")
    if not section:
        raise CliError(1, "config has no synth section")
    patterns = tuple(
        PlantedPattern(
            tokens=tuple(p["tokens"]),
            base_rate=float(p["base_rate"]),
            cluster_spread=float(p.get("cluster_spread", 0.0)),
            cluster_size=int(p.get("cluster_size", 1)),
        )
        for p in section.get("patterns", [])
    )
    coefs = section.get("logistic_coefficients")
    spec = _config_error(
        SyntheticSpec,
        n_samples=int(section["n_samples"]),
        vocab_size=int(section["vocab_size"]),
        embedding_dim=int(section["embedding_dim"]),
        doc_length_range=tuple(section["doc_length_range"]),
        planted_patterns=patterns,
        outcome_rule=section.get("outcome_rule", "deterministic"),
        logistic_coefficients=tuple(coefs) if coefs is not None else None,
        logistic_intercept=float(section.get("logistic_intercept", 0.0)),
        noise_sigma=float(section.get("noise_sigma", 0.0)),
        seed=seed,
    )
    _config_error(spec.validate)
    return spec


# ---------------------------------------------------------------------------
# Files, hashing, manifests


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cell(v) -> str:
    # repr() keeps the shortest exact decimal for floats, so TSV files
    # round-trip and diff cleanly across runs.
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_tsv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def write_manifest(
    out: Path,
    stage: str,
    args,
    cfg: dict,
    inputs: dict[str, Path],
    outputs: list[Path],
    summary: dict | None = None,
) -> Path:
    config_blob = json.dumps(cfg, sort_keys=True)
    doc = {
        "stage": stage,
        "package_version": __version__,
        "seed": args.seed,
        "threads": args.threads,
        "config_sha256": hashlib.sha256(config_blob.encode()).hexdigest(),
        "config": cfg,
        "inputs": {
            role: {"file": p.name, "sha256": _sha256_file(p)}
            for role, p in inputs.items()
        },
        "outputs": {p.name: _sha256_file(p) for p in outputs},
        "summary": summary or {},
    }
    path = out / f"{stage}_manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _load_corpus(path_str: str) -> Corpus:
    path = Path(path_str)
    if not path.is_file():
        raise CliError(2, f"input corpus not found: {path}")
    try:
        return read_corpus(path)
    except VersionMismatchError as e:
        raise CliError(3, str(e))
    except CorpusError as e:
        raise CliError(2, f"unreadable corpus {path}: {e}")


def _load_model(path_str: str):
    path = Path(path_str)
    if not path.is_file():
        raise CliError(2, f"model checkpoint not found: {path}")
    try:
        return load_model(path)
    except ModelVersionError as e:
        raise CliError(3, str(e))
    except (ModelFormatError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise CliError(2, f"unreadable model {path}: {e}")


def _check_dim(cfg: dict, corpus: Corpus):
    declared = cfg["corpus"]["embedding_dim"]
    if declared is not None and declared != corpus.embedding_dim:
        raise CliError(
            1,
            f"config expects embedding_dim {declared}, corpus has "
            f"{corpus.embedding_dim}",
        )


# ---------------------------------------------------------------------------
# Stages


def cmd_synth(args, cfg) -> int:
    spec = synthetic_spec_from(cfg, args.seed)
    corpus = generate_synthetic(spec)
    out = _out_dir(args)
    corpus_path = out / "corpus.embt"
    write_corpus(corpus, corpus_path)
    truth = {
        "outcome_rule": spec.outcome_rule,
        "noise_sigma": spec.noise_sigma,
        "patterns": [
            {
                "tokens": list(p.tokens),
                "base_rate": p.base_rate,
                "cluster_spread": p.cluster_spread,
                "members": [" ".join(m) for m in p.members()],
            }
            for p in spec.planted_patterns
        ],
    }
    truth_path = out / "truth.json"
    with open(truth_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    y = corpus.outcomes()
    summary = {
        "n_samples": len(corpus),
        "embedding_dim": corpus.embedding_dim,
        "positive_rate": float(y.mean()),
    }
    write_manifest(out, "synth", args, cfg, {}, [corpus_path, truth_path], summary)
    print(
        f"synth: {len(corpus)} samples, dim {corpus.embedding_dim}, "
        f"positive rate {y.mean():.3f} -> {corpus_path}"
    )
    return 0


def cmd_split(args, cfg) -> int:
    corpus = _load_corpus(args.input)
    spec = SplitSpec(
        train_fraction=float(cfg["split"]["train_fraction"]), seed=args.seed
    )
    try:
        train_side, test_side = split(corpus, spec)
    except SplitError as e:
        raise CliError(1, str(e))
    out = _out_dir(args)
    train_path, test_path = out / "train.embt", out / "test.embt"
    write_corpus(train_side, train_path)
    write_corpus(test_side, test_path)
    summary = {"n_train": len(train_side), "n_test": len(test_side)}
    write_manifest(
        out, "split", args, cfg, {"input": Path(args.input)},
        [train_path, test_path], summary,
    )
    print(f"split: {len(train_side)} train / {len(test_side)} test")
    return 0


def _grid_candidates(
    cfg: dict, corpus: Corpus, seed: int
) -> tuple[list[Candidate], list[str], list[tuple]]:
    grid = cfg["tune"]["grid"] or {}
    keys = list(grid.keys())
    for key in keys:
        if not isinstance(grid[key], list) or not grid[key]:
            raise CliError(1, f"tune.grid.{key} must be a non-empty list")
    combos = list(itertools.product(*(grid[k] for k in keys)))
    candidates = []
    for combo in combos:
        c = copy.deepcopy(cfg)
        for key, value in zip(keys, combo):
            _apply_dotted(c, key, value)
        candidates.append(
            Candidate(
                model=model_config_from(c, corpus.embedding_dim),
                weights=loss_weights_from(c),
                train=train_config_from(c, seed),
            )
        )
    return candidates, keys, combos


def cmd_tune(args, cfg) -> int:
    corpus = _load_corpus(args.input)
    _check_dim(cfg, corpus)
    candidates, keys, combos = _grid_candidates(cfg, corpus, args.seed)
    if not candidates:
        raise CliError(1, "tune.grid is empty; nothing to search")
    try:
        result = tune(
            corpus,
            candidates,
            n_folds=int(cfg["tune"]["n_folds"]),
            seed=args.seed,
            useful_threshold=float(cfg["interpret"]["useful_threshold"]),
            threads=args.threads,
        )
    except TrainError as e:
        raise CliError(1, str(e))
    out = _out_dir(args)
    rows = []
    for row in result.rows:
        rows.append(
            [row.index]
            + [combos[row.index][j] for j in range(len(keys))]
            + [
                row.accuracy,
                row.max_correlation,
                row.n_useful,
                row.composite,
                row.error or "",
            ]
        )
    results_path = out / "tune_results.tsv"
    write_tsv(
        results_path,
        ["index"] + keys + ["accuracy", "max_correlation", "n_useful", "composite", "error"],
        rows,
    )
    best_cfg = copy.deepcopy(cfg)
    for key, value in zip(keys, combos[result.best_index]):
        _apply_dotted(best_cfg, key, value)
    best_path = out / "best_config.yaml"
    with open(best_path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(best_cfg, fh, sort_keys=True)
    best = result.rows[result.best_index]
    summary = {
        "best_index": result.best_index,
        "best_composite": best.composite,
        "best_accuracy": best.accuracy,
        "n_candidates": len(candidates),
        "n_failed": sum(1 for r in result.rows if r.error),
    }
    write_manifest(
        out, "tune", args, cfg, {"input": Path(args.input)},
        [results_path, best_path], summary,
    )
    print(
        f"tune: best candidate {result.best_index} "
        f"(composite {best.composite:.4f}, accuracy {best.accuracy:.4f})"
    )
    return 0


def cmd_train(args, cfg) -> int:
    corpus = _load_corpus(args.input)
    _check_dim(cfg, corpus)
    model_config = model_config_from(cfg, corpus.embedding_dim)
    weights = loss_weights_from(cfg)
    train_config = train_config_from(cfg, args.seed)
    try:
        result = train(corpus, model_config, weights, train_config)
    except TrainError as e:
        raise CliError(1, str(e))
    out = _out_dir(args)
    model_path = out / "model.json"
    extra = {
        "loss": {
            "conv_l2": result.weights.conv_l2,
            "activity": result.weights.activity,
            "out_l1": result.weights.out_l1,
            "class_weights": list(result.weights.class_weights),
        },
        "train": {
            "epochs": train_config.epochs,
            "batch_size": train_config.batch_size,
            "learning_rate": train_config.learning_rate,
            "patience": train_config.patience,
            "val_fraction": train_config.val_fraction,
            "seed": train_config.seed,
        },
        "best_epoch": result.best_epoch,
        "stopped_early": result.stopped_early,
        "input_sha256": _sha256_file(Path(args.input)),
    }
    save_model(result.params, model_config, model_path, extra)
    history_path = out / "history.tsv"
    write_tsv(
        history_path,
        [
            "epoch", "train_total", "train_bce", "train_conv_l2",
            "train_activity", "train_out_l1", "val_total", "val_bce",
            "val_accuracy",
        ],
        [
            [
                s.epoch, s.train_total, s.train_bce, s.train_conv_l2,
                s.train_activity, s.train_out_l1, s.val_total, s.val_bce,
                s.val_accuracy,
            ]
            for s in result.history
        ],
    )
    last = result.history[result.best_epoch - 1]
    summary = {
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "best_val_total": last.val_total,
        "best_val_accuracy": last.val_accuracy,
        "class_weights": list(result.weights.class_weights),
    }
    write_manifest(
        out, "train", args, cfg, {"input": Path(args.input)},
        [model_path, history_path], summary,
    )
    print(
        f"train: best epoch {result.best_epoch}/{len(result.history)}, "
        f"val accuracy {last.val_accuracy:.4f} -> {model_path}"
    )
    return 0


def cmd_interpret(args, cfg) -> int:
    corpus = _load_corpus(args.input)
    params, model_config, _ = _load_model(args.model)
    if model_config.embedding_dim != corpus.embedding_dim:
        raise CliError(
            1,
            f"model dim {model_config.embedding_dim} != corpus dim "
            f"{corpus.embedding_dim}",
        )
    threshold = float(cfg["interpret"]["useful_threshold"])
    top_k = int(cfg["interpret"]["top_k"])
    pooled, _ = pooled_matrix(params, corpus)
    mask = useful_filters(pooled, threshold)
    medians = np.median(pooled, axis=0)
    tops = collect_top_phrases(params, corpus, top_k)
    out = _out_dir(args)

    f = model_config.n_filters
    filters_path = out / "filters.tsv"
    write_tsv(
        filters_path,
        [
            "filter", "layer", "within_layer", "kernel_size", "output_weight",
            "activation_range", "median", "useful",
        ],
        [
            [
                g, g // f, g % f, model_config.kernel_sizes[g // f],
                params.out_weight[g],
                pooled[:, g].max() - pooled[:, g].min(),
                medians[g], mask[g],
            ]
            for g in range(model_config.total_filters)
        ],
    )
    phrases_path = out / "phrases.tsv"
    phrase_rows = []
    for g in range(model_config.total_filters):
        for rank, hit in enumerate(tops[g], start=1):
            phrase_rows.append(
                [g, rank, hit.sample_id, hit.position, hit.activation,
                 " ".join(hit.tokens)]
            )
    write_tsv(
        phrases_path,
        ["filter", "rank", "sample_id", "position", "activation", "phrase"],
        phrase_rows,
    )
    grid = correlation_grid(pooled)
    corr_path = out / "correlations.tsv"
    write_tsv(
        corr_path,
        ["filter"] + [f"f{g}" for g in range(model_config.total_filters)],
        [[g] + list(grid[g]) for g in range(model_config.total_filters)],
    )
    summary = {
        "n_useful": int(mask.sum()),
        "total_filters": model_config.total_filters,
        "useful_threshold": threshold,
    }
    write_manifest(
        out, "interpret", args, cfg,
        {"input": Path(args.input), "model": Path(args.model)},
        [filters_path, phrases_path, corr_path], summary,
    )
    print(f"interpret: {int(mask.sum())}/{model_config.total_filters} useful filters")
    return 0


def cmd_effects(args, cfg) -> int:
    if args.mode == "retrain":
        return _effects_retrain(args, cfg)
    corpus = _load_corpus(args.input)
    if not args.model:
        raise CliError(1, "effects --mode fixed needs --model")
    params, model_config, _ = _load_model(args.model)
    threshold = float(cfg["interpret"]["useful_threshold"])
    n_boot = int(cfg["effects"]["n_boot"])
    try:
        z, filter_idx, medians = treatment_matrix(params, corpus, threshold)
        fit = ols_fit(z, corpus.outcomes())
        boot = bootstrap_ols(z, corpus.outcomes(), n_boot, args.seed)
        col = collinearity_check(z)
    except EffectsError as e:
        raise CliError(1, str(e))
    out = _out_dir(args)
    effects_path = out / "effects.tsv"
    rows = [
        ["intercept", "", "", fit.intercept, boot.intercept_low, boot.intercept_high]
    ]
    for j in range(z.shape[1]):
        rows.append(
            [
                f"f{filter_idx[j]}", filter_idx[j], medians[j],
                fit.coefficients[j], boot.coef_low[j], boot.coef_high[j],
            ]
        )
    write_tsv(
        effects_path,
        ["term", "filter", "median_cut", "coefficient", "ci_low", "ci_high"],
        rows,
    )
    inputs = {"input": Path(args.input), "model": Path(args.model)}
    summary = {
        "r2": fit.r2,
        "adjusted_r2": fit.adjusted_r2,
        "n": fit.n,
        "n_treatments": fit.m,
        "n_boot": n_boot,
        "n_failed_resamples": boot.n_failed,
        "design_full_rank": col.full_rank,
        "near_duplicate_pairs": [
            [int(i), int(j), c] for i, j, c in col.near_duplicate_pairs
        ],
    }
    if args.test:
        test_corpus = _load_corpus(args.test)
        pooled_test, _ = pooled_matrix(params, test_corpus)
        z_test = (pooled_test[:, filter_idx] > medians).astype(np.int64)
        summary["oos_mse"] = oos_mse(fit, z_test, test_corpus.outcomes())
        inputs["test"] = Path(args.test)
    write_manifest(out, "effects", args, cfg, inputs, [effects_path], summary)
    print(
        f"effects: {fit.m} treatments, r2 {fit.r2:.4f}, "
        f"{boot.n_failed}/{n_boot} resamples failed"
    )
    return 0


def _effects_retrain(args, cfg) -> int:
    if not args.test:
        raise CliError(1, "effects --mode retrain needs --test")
    train_corpus = _load_corpus(args.input)
    test_corpus = _load_corpus(args.test)
    _check_dim(cfg, train_corpus)
    model_config = model_config_from(cfg, train_corpus.embedding_dim)
    weights = loss_weights_from(cfg)
    train_config = train_config_from(cfg, args.seed)
    n_boot = int(cfg["effects"]["n_boot_retrain"])
    try:
        result = bootstrap_retrain(
            train_corpus, test_corpus, model_config, weights, train_config,
            n_boot=n_boot, seed=args.seed,
            useful_threshold=float(cfg["interpret"]["useful_threshold"]),
        )
    except EffectsError as e:
        raise CliError(1, str(e))
    out = _out_dir(args)
    retrain_path = out / "retrain.tsv"
    write_tsv(
        retrain_path,
        ["resample", "accuracy", "n_useful", "max_correlation"],
        [[r.resample, r.accuracy, r.n_useful, r.max_correlation] for r in result.rows],
    )
    summary = {
        "accuracy_mean": result.accuracy_mean,
        "accuracy_low": result.accuracy_low,
        "accuracy_high": result.accuracy_high,
        "n_boot": n_boot,
        "n_failed": result.n_failed,
    }
    write_manifest(
        out, "effects_retrain", args, cfg,
        {"input": Path(args.input), "test": Path(args.test)},
        [retrain_path], summary,
    )
    print(
        f"effects retrain: accuracy {result.accuracy_mean:.4f} "
        f"[{result.accuracy_low:.4f}, {result.accuracy_high:.4f}], "
        f"{result.n_failed}/{n_boot} failed"
    )
    return 0


def cmd_rlr(args, cfg) -> int:
    corpus = _load_corpus(args.input)
    section = cfg["rlr"]
    try:
        report = rlr_report(
            corpus,
            gram_sizes=tuple(section["gram_sizes"]),
            min_count=int(section["min_count"]),
            max_selected=int(section["max_selected"]),
        )
    except (RLRError, EffectsError) as e:
        raise CliError(1, str(e))
    out = _out_dir(args)
    survivors = set(report.survivors)
    selected_path = out / "rlr_selected.tsv"
    write_tsv(
        selected_path,
        ["gram", "weight", "corpus_count", "survived"],
        [
            [" ".join(s.gram), s.weight, s.corpus_count, s.gram in survivors]
            for s in report.selected
        ],
    )
    effects_path = out / "rlr_effects.tsv"
    rows = [["intercept", report.ols.intercept]]
    rows += [
        [" ".join(g), report.ols.coefficients[j]]
        for j, g in enumerate(report.survivors)
    ]
    write_tsv(effects_path, ["term", "coefficient"], rows)
    summary = {
        "vocab_size": report.vocab_size,
        "lambda": report.lam,
        "n_selected": len(report.selected),
        "n_dropped_collinear": len(report.dropped),
        "train_accuracy": report.accuracy,
        "r2": report.ols.r2,
        "converged": report.logistic.converged,
        "separated": report.logistic.separated,
    }
    write_manifest(
        out, "rlr", args, cfg, {"input": Path(args.input)},
        [selected_path, effects_path], summary,
    )
    print(
        f"rlr: {len(report.selected)} grams at lambda {report.lam:.6g}, "
        f"accuracy {report.accuracy:.4f}"
    )
    return 0


def cmd_gradcheck(args, cfg) -> int:
    section = cfg["gradcheck"]
    dim = cfg["corpus"]["embedding_dim"] or 8
    model_config = model_config_from(cfg, int(dim))
    weights = loss_weights_from(cfg)
    lo, hi = section["doc_length_range"]
    n_samples = int(section["n_samples"])
    tolerance = float(section["tolerance"])
    rows = []
    worst = 0.0
    for i in range(int(section["n_instances"])):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, i]))
        lengths = rng.integers(int(lo), int(hi) + 1, n_samples)
        embeddings = [rng.standard_normal((int(u), int(dim))) for u in lengths]
        y = np.arange(n_samples) % 2  # both classes, exactly balanced
        if weights.class_weights is None:
            weights_i = LossWeights(
                weights.conv_l2, weights.activity, weights.out_l1,
                balanced_class_weights(y),
            )
        else:
            weights_i = weights
        params = init_params(model_config, rng)
        report = fd_check(
            model_config, params, embeddings, y, weights_i,
            h=float(section["h"]),
            floor=float(section["floor"]),
            tie_tolerance=float(section["tie_tolerance"]),
        )
        live = np.where(~report.flagged, report.rel_errors, -1.0)
        worst_name = report.names[int(np.argmax(live))] if live.size else ""
        rows.append(
            [i, len(report.rel_errors), report.n_flagged,
             report.max_rel_error, worst_name]
        )
        worst = max(worst, report.max_rel_error)
    out = _out_dir(args)
    check_path = out / "gradcheck.tsv"
    write_tsv(
        check_path,
        ["instance", "n_coordinates", "n_flagged", "max_rel_error",
         "worst_coordinate"],
        rows,
    )
    passed = worst <= tolerance
    summary = {"max_rel_error": worst, "tolerance": tolerance, "passed": passed}
    write_manifest(out, "gradcheck", args, cfg, {}, [check_path], summary)
    print(
        f"gradcheck: max relative error {worst:.3e} over "
        f"{len(rows)} instances ({'ok' if passed else 'FAILED'})"
    )
    return 0 if passed else 1


def cmd_evaluate(args, cfg) -> int:
    corpus = _load_corpus(args.input)
    params, model_config, _ = _load_model(args.model)
    if model_config.embedding_dim != corpus.embedding_dim:
        raise CliError(
            1,
            f"model dim {model_config.embedding_dim} != corpus dim "
            f"{corpus.embedding_dim}",
        )
    ev = evaluate_model(params, corpus)
    out = _out_dir(args)
    eval_path = out / "evaluation.tsv"
    write_tsv(
        eval_path,
        ["n", "accuracy", "precision", "recall", "f1", "bce"],
        [[ev.n, ev.accuracy, ev.precision, ev.recall, ev.f1, ev.bce]],
    )
    summary = {"accuracy": ev.accuracy, "f1": ev.f1, "n": ev.n}
    write_manifest(
        out, "evaluate", args, cfg,
        {"input": Path(args.input), "model": Path(args.model)},
        [eval_path], summary,
    )
    print(f"evaluate: accuracy {ev.accuracy:.4f}, f1 {ev.f1:.4f} on {ev.n} samples")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(sp, with_input=False, with_model=False):
    sp.add_argument("--config", help="YAML config path or bundled profile name")
    sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    sp.add_argument("--threads", type=int, default=1, help="worker threads")
    sp.add_argument("--out", default=".", help="output directory (default .)")
    sp.add_argument(
        "--set", action="append", dest="overrides", metavar="KEY=VALUE",
        help="override a config value, e.g. --set loss.activity=1.5",
    )
    if with_input:
        sp.add_argument("--input", required=True, help="input corpus (.embt)")
    if with_model:
        sp.add_argument("--model", help="trained model checkpoint (.json)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="texttreat",
        description="Discover influential phrase features and estimate their effects.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic corpus with planted phrases")
    _add_common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("split", help="partition a corpus into train and test")
    _add_common(sp, with_input=True)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("tune", help="grid-search hyperparameters by k-fold CV")
    _add_common(sp, with_input=True)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("train", help="train the convolutional model")
    _add_common(sp, with_input=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("interpret", help="report filters, phrases, correlations")
    _add_common(sp, with_input=True, with_model=True)
    sp.set_defaults(func=cmd_interpret)

    sp = sub.add_parser("effects", help="estimate treatment effects with bootstrap")
    _add_common(sp, with_input=True, with_model=True)
    sp.add_argument(
        "--mode", choices=["fixed", "retrain"], default="fixed",
        help="hold the model fixed (default) or retrain per resample",
    )
    sp.add_argument("--test", help="held-out corpus (.embt)")
    sp.set_defaults(func=cmd_effects)

    sp = sub.add_parser("rlr", help="n-gram logistic regression benchmark")
    _add_common(sp, with_input=True)
    sp.set_defaults(func=cmd_rlr)

    sp = sub.add_parser("gradcheck", help="verify gradients by central differences")
    _add_common(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("evaluate", help="classification metrics on a corpus")
    _add_common(sp, with_input=True, with_model=True)
    sp.set_defaults(func=cmd_evaluate)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 1
    try:
        cfg = effective_config(args)
        return args.func(args, cfg)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (TrainError, EffectsError, RLRError, SplitError, InvariantError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

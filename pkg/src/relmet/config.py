"""Run configuration: JSON file loading, defaults, overrides, validation.

A run config is a single JSON object; unknown keys are rejected and every
value is validated before any work starts.  Command-line flags override file
keys.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .data import SamplerConfig
from .encoder import EncoderConfig
from .metric_loss import LossConfig
from .trainer import TrainConfig
from .vat import VatConfig


class ConfigError(ValueError):
    """Raised when a run configuration is missing or malformed; the message
    names the offending key."""


DEFAULTS = {
    "corpus": None,
    "out_dir": None,
    "markers": True,
    "min_freq": 1,
    "checkpoint_in": None,
    "vocab_in": None,
    "split": {
        "train_labels": None,
        "novel_labels": None,
        "num_novel": None,
        "seed": 0,
    },
    "encoder": {
        "word_dim": 64,
        "position_dim": 8,
        "num_filters": 64,
        "kernel_width": 3,
        "hidden_dim": 64,
        "max_len": 20,
        "max_offset": 20,
    },
    "train": {
        "learning_rate": 0.003,
        "num_steps": 1000,
        "eval_every": 500,
        "seed": 0,
        "sampler": {"num_classes": 24, "instances_per_class": 10, "seed": 0},
        "loss": {"alpha_p": 0.8, "alpha_n": 1.2, "lambda": 0.5, "temperature": 10.0},
        "vat": {"epsilon": 0.02, "beta": 1.0, "probe_scale": 0.02},
    },
    "clustering": {
        "algorithm": "kmeans",
        "k": 16,
        "restarts": 8,
        "seed": 0,
        "quantile": 0.3,
        "max_iter": 300,
    },
}

_SCHEMA = {
    "corpus": str,
    "out_dir": str,
    "markers": bool,
    "min_freq": int,
    "checkpoint_in": str,
    "vocab_in": str,
    "split": {
        "train_labels": list,
        "novel_labels": list,
        "num_novel": int,
        "seed": int,
    },
    "encoder": {
        "word_dim": int,
        "position_dim": int,
        "num_filters": int,
        "kernel_width": int,
        "hidden_dim": int,
        "max_len": int,
        "max_offset": int,
    },
    "train": {
        "learning_rate": float,
        "num_steps": int,
        "eval_every": int,
        "seed": int,
        "sampler": {"num_classes": int, "instances_per_class": int, "seed": int},
        "loss": {"alpha_p": float, "alpha_n": float, "lambda": float, "temperature": float},
        "vat": {"epsilon": float, "beta": float, "probe_scale": float},
    },
    "clustering": {
        "algorithm": str,
        "k": int,
        "restarts": int,
        "seed": int,
        "quantile": float,
        "max_iter": int,
    },
}

# Sections that may be set to null as a whole (null "vat" disables VAT).
_NULLABLE_SECTIONS = {"train.vat", "split"}


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file: top level must be a JSON object")
    return raw


def _merge(base: dict, override: dict, prefix="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{path}: unknown key")
        if isinstance(base[key], dict):
            if value is None:
                if path in _NULLABLE_SECTIONS:
                    out[key] = None
                    continue
                raise ConfigError(f"{path}: section cannot be null")
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            out[key] = _merge(base[key], value, prefix=f"{path}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_types(resolved: dict, schema: dict, prefix=""):
    for key, expected in schema.items():
        path = f"{prefix}{key}"
        value = resolved.get(key)
        if value is None:
            continue
        if isinstance(expected, dict):
            _check_types(value, expected, prefix=f"{path}.")
        elif expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}: expected a number, got {value!r}")
        elif expected is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}: expected an integer, got {value!r}")
        elif not isinstance(value, expected):
            raise ConfigError(f"{path}: expected {expected.__name__}, got {value!r}")


def apply_overrides(resolved: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides (e.g. {"train.num_steps": 50}) in place."""
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = resolved
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"{dotted}: unknown key")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"{dotted}: unknown key")
        node[parts[-1]] = value
    return resolved


def resolve_config(file_cfg: dict, overrides: dict | None = None) -> dict:
    """Defaults <- file <- flag overrides, with structural validation."""
    resolved = _merge(DEFAULTS, file_cfg)
    if overrides:
        apply_overrides(resolved, overrides)
    _check_types(resolved, _SCHEMA)
    if resolved["min_freq"] < 1:
        raise ConfigError("min_freq: must be >= 1")
    split = resolved["split"]
    if split is not None:
        explicit = split["train_labels"] is not None or split["novel_labels"] is not None
        if explicit and (split["train_labels"] is None or split["novel_labels"] is None):
            raise ConfigError("split: train_labels and novel_labels must be given together")
        if explicit and split["num_novel"] is not None:
            raise ConfigError("split.num_novel: cannot combine with explicit label lists")
        for key in ("train_labels", "novel_labels"):
            labels = split[key]
            if labels is not None and not all(isinstance(x, str) for x in labels):
                raise ConfigError(f"split.{key}: must be a list of strings")
        if split["num_novel"] is not None and split["num_novel"] < 2:
            raise ConfigError("split.num_novel: must be >= 2")
    cl = resolved["clustering"]
    if cl["algorithm"] not in ("kmeans", "meanshift"):
        raise ConfigError(f"clustering.algorithm: must be 'kmeans' or 'meanshift', got {cl['algorithm']!r}")
    if (resolved["checkpoint_in"] is None) != (resolved["vocab_in"] is None):
        raise ConfigError("checkpoint_in: requires vocab_in (and vice versa)")
    # Exercise the typed constructors so range errors surface now, with keys.
    build_train_config(resolved)
    build_encoder_config(resolved, vocab_size=2)
    return resolved


def _typed(section: str, ctor, **kwargs):
    try:
        return ctor(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def build_encoder_config(resolved: dict, vocab_size: int) -> EncoderConfig:
    return _typed("encoder", EncoderConfig, vocab_size=vocab_size, **resolved["encoder"])


def build_train_config(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    sampler = _typed("train.sampler", SamplerConfig, **t["sampler"])
    loss_kw = dict(t["loss"])
    loss_kw["lam"] = loss_kw.pop("lambda")
    loss = _typed("train.loss", LossConfig, **loss_kw)
    vat = None if t["vat"] is None else _typed("train.vat", VatConfig, **t["vat"])
    return _typed(
        "train",
        TrainConfig,
        learning_rate=t["learning_rate"],
        num_steps=t["num_steps"],
        eval_every=t["eval_every"],
        seed=t["seed"],
        sampler=sampler,
        loss=loss,
        vat=vat,
    )


def resolve_split(resolved: dict, corpus_labels) -> tuple[list[str], list[str]]:
    """Resolve the train/novel label split against the corpus label set.

    Explicit lists are validated; num_novel derives a deterministic random
    split from split.seed.  Train and novel sets are always disjoint.
    """
    labels = sorted(corpus_labels)
    split = resolved["split"]
    if split is None or (split["train_labels"] is None and split["num_novel"] is None):
        raise ConfigError("split: a label split is required (explicit lists or num_novel)")
    if split["train_labels"] is not None:
        train_labels = list(split["train_labels"])
        novel_labels = list(split["novel_labels"])
        overlap = set(train_labels) & set(novel_labels)
        if overlap:
            raise ConfigError(f"split: train and novel labels overlap: {sorted(overlap)}")
        unknown = (set(train_labels) | set(novel_labels)) - set(labels)
        if unknown:
            raise ConfigError(f"split: labels not present in corpus: {sorted(unknown)}")
    else:
        num_novel = split["num_novel"]
        if num_novel >= len(labels):
            raise ConfigError(
                f"split.num_novel: {num_novel} leaves no training classes (corpus has {len(labels)})"
            )
        perm = np.random.default_rng(split["seed"]).permutation(len(labels))
        novel_labels = sorted(labels[i] for i in perm[:num_novel])
        train_labels = sorted(set(labels) - set(novel_labels))
    if not train_labels:
        raise ConfigError("split: train label set is empty")
    if len(set(novel_labels)) < 2:
        raise ConfigError("split: need at least 2 novel classes to score a clustering")
    return train_labels, novel_labels

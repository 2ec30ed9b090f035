"""Run configuration: one INI-style text file with named blocks.

Schema (version 1)::

    [meta]      version, name
    [dataset]   source = idx | raw | synthetic
                images, labels          (idx)   paths, gzip allowed
                manifest                (raw)   path to '<file>\\t<label>' list
                classes, samples, size  (synthetic)
                per_class  (0 keeps every sample), resize = HxW, noise, seed
    [model]     variant = odsc | dsc-u | dsc-o, fusion = concat | add,
                under / over / decoder = comma list of kernel:channels
    [train]     pretrain_epochs, finetune_epochs, lr, lambda1..3, seed, freeze_conv, chunk
    [spectral]  k (0 = number of labelled classes), keep_fraction, restarts, seed, laplacian
    [output]    dir

Relative paths resolve against the config file's directory; ``$VARS`` are expanded.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .model import VARIANTS, LayerSpec

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    images: str = ""
    labels: str = ""
    manifest: str = ""
    classes: int = 3
    samples: int = 10
    size: tuple[int, int] = (12, 12)
    per_class: int = 0
    resize: tuple[int, int] | None = None
    noise: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "odsc"
    fusion: str = "concat"
    under: tuple[tuple[int, int], ...] = ()
    over: tuple[tuple[int, int], ...] = ()
    decoder: tuple[tuple[int, int], ...] = ()

    def layer_specs(self):
        return (
            tuple(LayerSpec("encoder-U", k, c) for k, c in self.under),
            tuple(LayerSpec("encoder-O", k, c) for k, c in self.over),
            tuple(LayerSpec("decoder", k, c) for k, c in self.decoder),
        )


@dataclass(frozen=True)
class TrainBlock:
    pretrain_epochs: int = 100
    finetune_epochs: int = 100
    lr: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    seed: int = 0
    freeze_conv: bool = False
    chunk: int = 256


@dataclass(frozen=True)
class SpectralConfig:
    k: int = 0
    keep_fraction: float = 1.0
    restarts: int = 20
    seed: int = 0
    laplacian: str = "sym"


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainBlock = field(default_factory=TrainBlock)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    out_dir: str = "runs/default"
    name: str = "run"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed),
                       spectral=replace(self.spectral, seed=seed))

    def canonical(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Identity of everything a checkpoint depends on: data, architecture, init seed."""
        key = {"version": SCHEMA_VERSION, "dataset": asdict(self.dataset), "model": asdict(self.model),
               "train_seed": self.train.seed}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def _layers(text: str, what: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in (t.strip() for t in text.split(",")):
        if not item:
            continue
        try:
            k, c = item.split(":")
            out.append((int(k), int(c)))
        except ValueError:
            raise ConfigError(f"[model] {what}: expected 'kernel:channels', got {item!r}") from None
    return tuple(out)


def _hw(text: str, what: str) -> tuple[int, int] | None:
    text = text.strip().lower()
    if not text or text == "none":
        return None
    try:
        h, w = text.split("x")
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f"{what}: expected 'HxW', got {text!r}") from None


def _path(text: str, base: Path) -> str:
    if not text:
        return ""
    p = Path(os.path.expandvars(os.path.expanduser(text)))
    return str(p if p.is_absolute() else (base / p))


_KNOWN = {
    "meta": {"version", "name"},
    "dataset": {"source", "images", "labels", "manifest", "classes", "samples", "size", "per_class",
                "resize", "noise", "seed"},
    "model": {"variant", "fusion", "under", "over", "decoder"},
    "train": {"pretrain_epochs", "finetune_epochs", "lr", "lambda1", "lambda2", "lambda3", "seed",
              "freeze_conv", "chunk"},
    "spectral": {"k", "keep_fraction", "restarts", "seed", "laplacian"},
    "output": {"dir"},
}


def parse_config(text: str, base_dir=".") -> RunConfig:
    base = Path(base_dir)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown config block [{section}]")
        extra = set(cp[section]) - _KNOWN[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")

    def get(section, key, conv, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None

    def boolean(s):
        s = s.strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(s)

    version = get("meta", "version", int, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    d = DatasetConfig()
    dataset = DatasetConfig(
        source=get("dataset", "source", str.strip, d.source),
        images=_path(get("dataset", "images", str.strip, ""), base),
        labels=_path(get("dataset", "labels", str.strip, ""), base),
        manifest=_path(get("dataset", "manifest", str.strip, ""), base),
        classes=get("dataset", "classes", int, d.classes),
        samples=get("dataset", "samples", int, d.samples),
        size=_hw(get("dataset", "size", str, "12x12"), "[dataset] size") or d.size,
        per_class=get("dataset", "per_class", int, 0),
        resize=_hw(get("dataset", "resize", str, ""), "[dataset] resize"),
        noise=get("dataset", "noise", float, 0.0),
        seed=get("dataset", "seed", int, 0),
    )
    if dataset.source not in ("idx", "raw", "synthetic"):
        raise ConfigError(f"[dataset] source must be idx, raw or synthetic, got {dataset.source!r}")
    if dataset.source == "idx" and not (dataset.images and dataset.labels):
        raise ConfigError("[dataset] source=idx needs 'images' and 'labels'")
    if dataset.source == "raw" and not dataset.manifest:
        raise ConfigError("[dataset] source=raw needs 'manifest'")
    if not 0.0 <= dataset.noise <= 1.0:
        raise ConfigError(f"[dataset] noise must lie in [0, 1], got {dataset.noise}")

    model = ModelConfig(
        variant=get("model", "variant", str.strip, "odsc"),
        fusion=get("model", "fusion", str.strip, "concat"),
        under=_layers(get("model", "under", str, ""), "under"),
        over=_layers(get("model", "over", str, ""), "over"),
        decoder=_layers(get("model", "decoder", str, ""), "decoder"),
    )
    if model.variant not in VARIANTS:
        raise ConfigError(f"[model] variant must be one of {VARIANTS}, got {model.variant!r}")
    t = TrainBlock()
    train = TrainBlock(
        pretrain_epochs=get("train", "pretrain_epochs", int, t.pretrain_epochs),
        finetune_epochs=get("train", "finetune_epochs", int, t.finetune_epochs),
        lr=get("train", "lr", float, t.lr),
        lambda1=get("train", "lambda1", float, t.lambda1),
        lambda2=get("train", "lambda2", float, t.lambda2),
        lambda3=get("train", "lambda3", float, t.lambda3),
        seed=get("train", "seed", int, t.seed),
        freeze_conv=get("train", "freeze_conv", boolean, False),
        chunk=get("train", "chunk", int, t.chunk),
    )
    if train.pretrain_epochs < 0 or train.finetune_epochs < 0:
        raise ConfigError("[train] epochs must be non-negative")
    if not train.lr > 0:
        raise ConfigError("[train] lr must be positive")
    s = SpectralConfig()
    spectral = SpectralConfig(
        k=get("spectral", "k", int, s.k),
        keep_fraction=get("spectral", "keep_fraction", float, s.keep_fraction),
        restarts=get("spectral", "restarts", int, s.restarts),
        seed=get("spectral", "seed", int, s.seed),
        laplacian=get("spectral", "laplacian", str.strip, s.laplacian),
    )
    if not 0.0 < spectral.keep_fraction <= 1.0:
        raise ConfigError("[spectral] keep_fraction must lie in (0, 1]")
    if spectral.laplacian not in ("sym", "unnormalized"):
        raise ConfigError("[spectral] laplacian must be 'sym' or 'unnormalized'")
    out_dir = _path(get("output", "dir", str.strip, "runs/default"), base)
    return RunConfig(dataset, model, train, spectral, out_dir, get("meta", "name", str.strip, "run"))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)

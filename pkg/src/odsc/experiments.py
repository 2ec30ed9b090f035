"""End-to-end runs: data -> pretrain -> finetune -> affinity -> spectral -> score,
plus the noise / pretrain-epoch sweeps and the DSC-U / DSC-O / ODSC ablation."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .config import RunConfig
from .datasets import (LabeledDataset, add_noise, load_idx, load_raw_folder, resize_dataset,
                       subset_per_class, subspace_images)
from .errors import CheckpointMismatch, DataError
from .model import Network, NetworkSpec, build_network
from .rng import Rng
from .spectral import ClusteringResult, build_affinity, clustering_error, spectral_clustering
from .training import TrainConfig, finetune, pretrain

log = logging.getLogger(__name__)


@dataclass
class ReportRow:
    run_id: str
    variant: str
    dataset: str
    noise_level: float
    pretrain_epochs: int
    error_percent: float
    wall_time: float

    def __post_init__(self):
        if not 0.0 <= self.error_percent <= 100.0:
            raise ValueError(f"error_percent out of range: {self.error_percent}")


REPORT_FIELDS = list(ReportRow.__dataclass_fields__)


# ---------------------------------------------------------------- data/model

def load_dataset(cfg: RunConfig) -> LabeledDataset:
    d = cfg.dataset
    if d.source == "idx":
        ds = load_idx(d.images, d.labels)
    elif d.source == "raw":
        ds = load_raw_folder(d.manifest)
    else:
        ds = subspace_images(n_classes=d.classes, per_class=d.samples, size=d.size, seed=d.seed)
    if d.per_class:
        ds = subset_per_class(ds, d.per_class, seed=d.seed)
    if d.resize is not None:
        ds = resize_dataset(ds, *d.resize)
    if d.noise:
        ds = add_noise(ds, d.noise, seed=d.seed + 1)
    if ds.n_classes < 2:
        raise DataError("dataset needs at least two classes")
    return ds


def network_spec(cfg: RunConfig, ds: LabeledDataset, variant: str | None = None) -> NetworkSpec:
    under, over, dec = cfg.model.layer_specs()
    spec = NetworkSpec(
        input_hw=ds.hw, under=under, over=over, decoder=dec, n_samples=len(ds),
        fusion=cfg.model.fusion, lambda1=cfg.train.lambda1, lambda2=cfg.train.lambda2,
        lambda3=cfg.train.lambda3, pretrain_epochs=cfg.train.pretrain_epochs,
        finetune_epochs=cfg.train.finetune_epochs,
    )
    return spec.with_variant(variant or cfg.model.variant)


def make_network(cfg: RunConfig, ds: LabeledDataset, variant: str | None = None) -> Network:
    net = build_network(network_spec(cfg, ds, variant), Rng(cfg.train.seed))
    net.chunk = cfg.train.chunk
    return net


def checkpoint_hash(cfg: RunConfig, variant: str | None = None) -> str:
    v = variant or cfg.model.variant
    return cfg.hash() if v == cfg.model.variant else f"{cfg.hash()}-{v}"


def train_config(cfg: RunConfig, stage: str, variant: str | None = None) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        stage=stage, epochs=t.pretrain_epochs if stage == "pretrain" else t.finetune_epochs,
        lr=t.lr, seed=t.seed, lambda1=t.lambda1, lambda2=t.lambda2, lambda3=t.lambda3,
        freeze_conv=t.freeze_conv if stage == "finetune" else False,
        config_hash=checkpoint_hash(cfg, variant),
    )


def restore(net: Network, ck: ckpt_io.Checkpoint, expected_hash: str) -> None:
    if ck.config_hash != expected_hash:
        raise CheckpointMismatch(f"checkpoint was written for config {ck.config_hash!r}, "
                                 f"current config hashes to {expected_hash!r}")
    missing = set(net.params) - set(ck.params)
    if missing:
        raise CheckpointMismatch(f"checkpoint lacks parameters {sorted(missing)}")
    for k, v in ck.params.items():
        if k not in net.params or net.params[k].shape != v.shape:
            raise CheckpointMismatch(f"parameter {k!r} does not fit the configured network")
        net.params[k] = v.copy()


# --------------------------------------------------------------- clustering

def cluster_coefficients(C: np.ndarray, truth: np.ndarray, cfg: RunConfig) -> ClusteringResult:
    s = cfg.spectral
    k = s.k or len(np.unique(truth))
    W = build_affinity(C, s.keep_fraction)
    labels = spectral_clustering(W, k, seed=s.seed, restarts=s.restarts, laplacian=s.laplacian)
    err = clustering_error(labels, truth)
    prov = {"keep_fraction": s.keep_fraction, "restarts": s.restarts, "spectral_seed": s.seed,
            "laplacian": s.laplacian, "k": k}
    return ClusteringResult(labels=labels, error_percent=err, affinity=W, provenance=prov)


@dataclass
class RunOutcome:
    result: ClusteringResult
    row: ReportRow
    net: Network
    pretrain_trace: list
    finetune_trace: list
    dataset_fingerprint: str


def run_full(cfg: RunConfig, variant: str | None = None, ds: LabeledDataset | None = None,
             pretrained: ckpt_io.Checkpoint | None = None) -> RunOutcome:
    """Pretrain (unless ``pretrained`` is given), finetune and cluster."""
    start = time.perf_counter()
    variant = variant or cfg.model.variant
    ds = ds if ds is not None else load_dataset(cfg)
    net = make_network(cfg, ds, variant)
    ptrace: list = []
    if pretrained is not None:
        restore(net, pretrained, checkpoint_hash(cfg, variant))
    else:
        _, ptrace = pretrain(net, ds.images, train_config(cfg, "pretrain", variant))
    fck, ftrace = finetune(net, ds.images, train_config(cfg, "finetune", variant))
    result = cluster_coefficients(fck.params["C"], ds.labels, cfg)
    result.provenance.update(config_hash=cfg.hash(), variant=variant,
                             dataset_fingerprint=ds.fingerprint())
    row = ReportRow(run_id=f"{cfg.name}-{variant}-{cfg.hash()[:8]}", variant=variant,
                    dataset=cfg.name, noise_level=cfg.dataset.noise,
                    pretrain_epochs=cfg.train.pretrain_epochs if pretrained is None else pretrained.epoch,
                    error_percent=result.error_percent, wall_time=time.perf_counter() - start)
    log.info("%s: error %.2f%% (%.1fs)", row.run_id, row.error_percent, row.wall_time)
    return RunOutcome(result, row, net, ptrace, ftrace, ds.fingerprint())


def sweep(cfg: RunConfig, axis: str, values) -> list[ReportRow]:
    """One full run per value of ``noise`` or ``pretrain_epochs``, ordered by value."""
    if axis not in ("noise", "pretrain_epochs"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for v in sorted(values):
        if axis == "noise":
            point = replace(cfg, dataset=replace(cfg.dataset, noise=float(v)))
        else:
            point = replace(cfg, train=replace(cfg.train, pretrain_epochs=int(v)))
        rows.append(run_full(point).row)
    return rows


def ablate(cfg: RunConfig) -> tuple[list[ReportRow], list[str]]:
    """DSC-U, DSC-O and ODSC on the same data subset and seeds."""
    ds = load_dataset(cfg)
    rows, prints = [], []
    for variant in ("dsc-u", "dsc-o", "odsc"):
        out = run_full(cfg, variant=variant, ds=ds)
        rows.append(out.row)
        prints.append(out.dataset_fingerprint)
    return rows, prints


# ---------------------------------------------------------------------- CSV

def provenance_lines(cfg: RunConfig, extra: dict | None = None) -> list[str]:
    lines = [
        f"# odsc {__version__}",
        f"# config_hash={cfg.hash()}",
        f"# seeds: dataset={cfg.dataset.seed} train={cfg.train.seed} spectral={cfg.spectral.seed}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}={v}")
    return lines


def write_csv(path, header: list[str], rows, provenance: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for line in provenance:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def report_rows(rows: list[ReportRow]) -> list[list]:
    return [[getattr(r, f) if not isinstance(getattr(r, f), float) else repr(getattr(r, f))
             for f in REPORT_FIELDS] for r in rows]


def write_report(path, cfg: RunConfig, rows: list[ReportRow], extra: dict | None = None) -> None:
    write_csv(path, REPORT_FIELDS, report_rows(rows), provenance_lines(cfg, extra))


def write_trace(path, cfg: RunConfig, trace, stage: str) -> None:
    write_csv(path, ["epoch", "loss"], [[i + 1, repr(float(v))] for i, v in enumerate(trace)],
              provenance_lines(cfg, {"stage": stage}))

"""Command-line front end.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence,
5 checkpoint/config mismatch.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, load_config
from .datasets import encode_pgm
from .errors import ConfigError, OdscError
from .experiments import (ReportRow, ablate, checkpoint_hash, cluster_coefficients, load_dataset,
                          make_network, provenance_lines, restore, sweep, train_config, write_csv,
                          write_report, write_trace)
from .training import finetune, pretrain

log = logging.getLogger("odsc")


def _load(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _checkpoint_path(args, out: Path, default: str) -> Path:
    return Path(args.checkpoint) if args.checkpoint else out / default


def cmd_pretrain(args) -> int:
    cfg, out = _load(args)
    ds = load_dataset(cfg)
    net = make_network(cfg, ds)
    ck, trace = pretrain(net, ds.images, train_config(cfg, "pretrain"))
    ckpt_io.save(ck, out / "pretrain.ckpt")
    write_trace(out / "pretrain_trace.csv", cfg, trace, "pretrain")
    print(f"pretrained {len(trace)} epochs -> {out / 'pretrain.ckpt'}")
    return 0


def cmd_finetune(args) -> int:
    cfg, out = _load(args)
    ds = load_dataset(cfg)
    net = make_network(cfg, ds)
    ck = ckpt_io.load(_checkpoint_path(args, out, "pretrain.ckpt"))
    restore(net, ck, checkpoint_hash(cfg))
    fck, trace = finetune(net, ds.images, train_config(cfg, "finetune"),
                          resume=ck if ck.stage == "finetune" else None)
    ckpt_io.save(fck, out / "finetune.ckpt")
    write_trace(out / "finetune_trace.csv", cfg, trace, "finetune")
    print(f"finetuned {len(trace)} epochs -> {out / 'finetune.ckpt'}")
    return 0


def cmd_cluster(args) -> int:
    cfg, out = _load(args)
    start = time.perf_counter()
    ds = load_dataset(cfg)
    net = make_network(cfg, ds)
    ck = ckpt_io.load(_checkpoint_path(args, out, "pretrain.ckpt"))
    restore(net, ck, checkpoint_hash(cfg))
    if ck.stage == "finetune":
        C = ck.params["C"]
    else:
        fck, trace = finetune(net, ds.images, train_config(cfg, "finetune"))
        ckpt_io.save(fck, out / "finetune.ckpt")
        write_trace(out / "finetune_trace.csv", cfg, trace, "finetune")
        C = fck.params["C"]
    result = cluster_coefficients(C, ds.labels, cfg)
    prov = provenance_lines(cfg, {**result.provenance, "dataset_fingerprint": ds.fingerprint()})
    row = ReportRow(run_id=f"{cfg.name}-{cfg.model.variant}-{cfg.hash()[:8]}", variant=cfg.model.variant,
                    dataset=cfg.name, noise_level=cfg.dataset.noise,
                    pretrain_epochs=ck.epoch if ck.stage == "pretrain" else cfg.train.pretrain_epochs,
                    error_percent=result.error_percent, wall_time=time.perf_counter() - start)
    write_report(out / "report.csv", cfg, [row], result.provenance)
    write_csv(out / "labels.csv", ["index", "label", "truth"],
              [[i, int(a), int(b)] for i, (a, b) in enumerate(zip(result.labels, ds.labels))], prov)
    W = result.affinity
    write_csv(out / "affinity.csv", [f"s{j}" for j in range(len(W))],
              [[repr(float(v)) for v in r] for r in W], prov)
    print(f"clustering error {result.error_percent:.2f}% -> {out / 'report.csv'}")
    return 0


def _values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {text!r}") from None
    if not vals:
        raise ConfigError("sweep needs at least one value")
    return vals


def cmd_sweep(args) -> int:
    if args.axis not in ("noise", "pretrain_epochs"):
        raise ConfigError(f"unknown sweep axis {args.axis!r}; use 'noise' or 'pretrain_epochs'")
    values = _values(args.values)
    if args.axis == "noise" and any(not 0.0 <= v <= 1.0 for v in values):
        raise ConfigError("noise levels must lie in [0, 1]")
    if args.axis == "pretrain_epochs" and any(v < 0 or v != int(v) for v in values):
        raise ConfigError("pretrain epochs must be non-negative integers")
    cfg, out = _load(args)
    rows = sweep(cfg, args.axis, values)
    path = out / f"sweep_{args.axis}.csv"
    write_report(path, cfg, rows, {"axis": args.axis})
    for r in rows:
        print(f"{args.axis}={r.noise_level if args.axis == 'noise' else r.pretrain_epochs}: "
              f"{r.error_percent:.2f}%")
    return 0


def cmd_ablate(args) -> int:
    cfg, out = _load(args)
    rows, prints = ablate(cfg)
    write_report(out / "ablation.csv", cfg, rows, {"dataset_fingerprint": prints[0]})
    for r in rows:
        print(f"{r.variant}: {r.error_percent:.2f}%")
    return 0


def _to_byte_image(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def cmd_dump(args) -> int:
    cfg, out = _load(args)
    ds = load_dataset(cfg)
    net = make_network(cfg, ds)
    ck = ckpt_io.load(_checkpoint_path(args, out, "pretrain.ckpt"))
    restore(net, ck, checkpoint_hash(cfg))
    n = min(args.samples, len(ds))
    dest = out / "dump" / args.what
    dest.mkdir(parents=True, exist_ok=True)
    written = 0
    if args.what == "reconstructions":
        if ck.stage == "finetune":
            recon = net.reconstruct(ds.images, self_expressive=True)[:n]
        else:
            recon = net.reconstruct(ds.images[:n])
        for s in range(n):
            (dest / f"s{s:04d}_recon_c00.pgm").write_bytes(encode_pgm(_to_byte_image(recon[s, 0])))
            written += 1
    else:
        names = net.layer_names()
        wanted = names if args.layer is None else [args.layer]
        for name in wanted:
            if name not in names:
                raise ConfigError(f"unknown layer {name!r}; valid layers: {', '.join(names)}")
        maps = net.feature_maps(ds.images[:n])
        for name in wanted:
            fm = maps[name]
            for s in range(n):
                for c in range(fm.shape[1]):
                    fn = dest / f"s{s:04d}_{name}_c{c:02d}.pgm"
                    fn.write_bytes(encode_pgm(_to_byte_image(fm[s, c])))
                    written += 1
    print(f"wrote {written} PGM files to {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odsc", description="Overcomplete deep subspace clustering")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        sp.add_argument("--checkpoint", default=None)
        sp.add_argument("--seed", type=int, default=None, help="override training and spectral seeds")
        return sp

    common(sub.add_parser("pretrain", help="reconstruction pretraining")).set_defaults(func=cmd_pretrain)
    common(sub.add_parser("finetune", help="joint fine-tuning from a pretrained checkpoint")).set_defaults(
        func=cmd_finetune)
    common(sub.add_parser("cluster", help="finetune, then cluster and score")).set_defaults(func=cmd_cluster)
    sp = common(sub.add_parser("sweep", help="noise or pretrain-epoch sweep"))
    sp.add_argument("--axis", required=True)
    sp.add_argument("--values", required=True, help="comma separated, e.g. 0,0.1,0.2")
    sp.set_defaults(func=cmd_sweep)
    common(sub.add_parser("ablate", help="DSC-U vs DSC-O vs ODSC")).set_defaults(func=cmd_ablate)
    sp = common(sub.add_parser("dump", help="write reconstructions or feature maps as PGM"))
    sp.add_argument("--what", choices=("reconstructions", "featuremaps"), required=True)
    sp.add_argument("--layer", default=None)
    sp.add_argument("--samples", type=int, default=8)
    sp.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OdscError as exc:
        print(f"odsc: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"odsc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

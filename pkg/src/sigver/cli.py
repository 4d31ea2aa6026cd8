"""Command-line interface: synth -> preprocess -> train -> eval, plus gradcheck.

All commands are driven by one flat config file (see ``config``) and one
seed; every output is reproducible byte-for-byte from those two inputs.
CSV outputs come with rendered PNG figures where a picture helps (training
curves, ROC).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import plots
from .config import LOSS_KINDS, ConfigFileError, RunConfig, load_config, save_config
from .imageprep import build_cache, load_cache, read_manifest, write_manifest
from .ndgrad import Tensor, load_tensors
from .ndgrad.gradcheck import grad_check
from .network import NetConfig, forward_batch, init_params
from .rng import substream
from .synth import generate_dataset, split_writers
from .training import (
    TrainingDiverged,
    embed_rows,
    train_model,
    write_training_log,
)
from .tupletloss import (
    LossConfig,
    SamplingError,
    TrainIndex,
    build_batch,
    total_loss,
    triplet_total_loss,
)
from .verifier import (
    DegenerateEvaluationError,
    evaluate,
    make_test_pairs,
    pair_distances,
    write_report_csv,
    write_roc_csv,
)

BRANCH_NAMES = ("global", "region1", "region2", "region3",
                "region4", "region5", "region6")


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.loss is not None:
        overrides["loss"] = args.loss
    if args.out is not None:
        # synth and preprocess produce data artifacts; the rest produce run
        # artifacts, so --out points at whichever directory the command writes
        if args.command in ("synth", "preprocess"):
            overrides["data_dir"] = str(args.out)
        else:
            overrides["out_dir"] = str(args.out)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _manifest_path(cfg: RunConfig) -> Path:
    return Path(cfg.data_dir) / "manifest.csv"


def _cache_path(cfg: RunConfig) -> Path:
    return Path(cfg.data_dir) / "cache.bin"


def cmd_synth(cfg: RunConfig) -> int:
    rows = generate_dataset(cfg.synth, cfg.data_dir, cfg.seed)
    genuine = sum(r.label == "genuine" for r in rows)
    print(f"wrote {len(rows)} images ({genuine} genuine, "
          f"{len(rows) - genuine} forged) for {cfg.synth.identities} "
          f"identities to {cfg.data_dir}")
    print(f"manifest: {_manifest_path(cfg)}")
    return 0


def cmd_preprocess(cfg: RunConfig) -> int:
    manifest = _manifest_path(cfg)
    cache = _cache_path(cfg)
    count = build_cache(manifest, cfg.prep_config(), cache)
    print(f"cached {count} preprocessed images "
          f"({cfg.net.input_h}x{cfg.net.input_w}) to {cache}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    rows = read_manifest(_manifest_path(cfg))
    cache = load_cache(_cache_path(cfg), rows)
    fractions = (cfg.train_frac, cfg.val_frac, cfg.test_frac)
    train_rows, val_rows, test_rows = split_writers(
        rows, fractions, substream(cfg.seed, "split"))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "train_manifest.csv", train_rows)
    write_manifest(out / "val_manifest.csv", val_rows)
    write_manifest(out / "test_manifest.csv", test_rows)
    save_config(out / "run_config.txt", cfg)
    print(f"split: {len(train_rows)} train / {len(val_rows)} val / "
          f"{len(test_rows)} test images ({cfg.loss} loss, seed {cfg.seed})")
    result = train_model(cfg, train_rows, val_rows, cache, out_dir=out)
    write_training_log(out / "training_log.csv", result.log_rows)
    plots.save_training_curves(out / "training_curves.png", result.log_rows)
    print(f"best val_eer {result.best_val_eer:.2f}% at epoch {result.best_epoch}"
          + (" (early stop)" if result.stopped_early else ""))
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    print(f"log: {out / 'training_log.csv'}  "
          f"curves: {out / 'training_curves.png'}")
    return 0


def _load_checkpoint(cfg: RunConfig):
    path = Path(cfg.out_dir) / "checkpoint.bin"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params = init_params(cfg.net, substream(cfg.seed, "init"),
                         dtype=np.float32)
    params.load_arrays(load_tensors(path))
    return params


def _write_embeddings_csv(path, rows, embeddings: dict, emb_dim: int) -> None:
    header = "image_id,branch," + ",".join(f"dim_{i}" for i in range(emb_dim))
    lines = [header]
    for row in rows:
        vec = embeddings[row.path]
        for b, branch in enumerate(BRANCH_NAMES):
            part = vec[b * emb_dim:(b + 1) * emb_dim]
            values = ",".join(format(float(v), ".10g") for v in part)
            lines.append(f"{row.path},{branch},{values}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_eval(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    rows = read_manifest(out / "test_manifest.csv")
    cache = load_cache(_cache_path(cfg), rows)
    params = _load_checkpoint(cfg)
    pairs = make_test_pairs(rows, substream(cfg.seed, "pairs-test"))
    embeddings = embed_rows(rows, cache, params, cfg.net)
    distances = pair_distances(embeddings, pairs)
    labels = np.array([p.positive for p in pairs])
    report = evaluate(distances, labels)
    write_report_csv(report, out / "report.csv")
    write_roc_csv(report, out / "roc.csv")
    plots.save_roc(out / "roc.png", report.roc, report.eer, report.auc)
    _write_embeddings_csv(out / "embeddings.csv", rows, embeddings,
                          cfg.net.embedding_dim)
    print(f"pairs: {report.n_positive} positive / {report.n_negative} negative")
    print(f"threshold {report.threshold:.6g}  frr {report.frr:.2f}%  "
          f"far {report.far:.2f}%")
    print(f"eer {report.eer:.2f}%  auc {report.auc:.2f}%")
    print(f"report: {out / 'report.csv'}  roc: {out / 'roc.csv'}  "
          f"figure: {out / 'roc.png'}")
    return 0


def _gradcheck_fixture(cfg: RunConfig):
    """Tiny end-to-end fixture: fabricated manifest, random images.

    The mining slack is pinned wide open so both mined sets stay full and
    every embedding head receives gradient; boundary behavior of the mining
    rule has its own dedicated tests.
    """
    from .imageprep import ManifestRow

    loss_cfg = LossConfig(k=2, w=2, delta=10.0,
                          regional_weight=1.0, triplet_margin=1.0)
    rows = []
    for ident in ("ga", "gb"):
        for j in range(loss_cfg.k + 1):
            rows.append(ManifestRow(f"{ident}_g{j}", ident, "genuine"))
        for j in range(loss_cfg.k):
            rows.append(ManifestRow(f"{ident}_f{j}", ident, "forged"))
    net = NetConfig.tiny()
    images = {}
    for i, row in enumerate(rows):
        rng = substream(cfg.seed, "gradcheck", i)
        images[row.path] = rng.uniform(0.0, 1.0,
                                       size=(1, net.input_h, net.input_w))
    return net, loss_cfg, TrainIndex(rows), images


def cmd_gradcheck(cfg: RunConfig) -> int:
    net, loss_cfg, index, images = _gradcheck_fixture(cfg)
    params = init_params(net, substream(cfg.seed, "init"), dtype=np.float64)
    batch = build_batch(index, loss_cfg, substream(cfg.seed, "gradcheck", 999))
    x = Tensor(np.stack([images[p] for p in batch.sample_ids]))
    loss_fn = total_loss if cfg.loss == "cotuplet" else triplet_total_loss

    def rebuild():
        streams = forward_batch(x, params, net, training=True)
        return loss_fn(streams, batch, loss_cfg)

    print(f"checking {params.parameter_count()} scalar parameters in "
          f"{len(params.trainable_names())} tensors ({cfg.loss} loss) ...")
    # The composed loss is piecewise smooth (relu, max-pool, hardest-example
    # selection); a small step keeps the central difference inside one piece
    # while float64 keeps its roundoff near 1e-10, and kink-straddling
    # elements are re-probed at smaller steps inside grad_check.
    result = grad_check(rebuild, params, h=1e-5, tolerance=1e-4)
    if result.retried:
        print(f"  re-probed {result.retried} kink-straddling element(s) "
              f"at smaller steps")
    width = max(len(n) for n in result.per_param)
    for name, err in sorted(result.per_param.items(),
                            key=lambda kv: -kv[1]):
        verdict = "ok  " if err < result.tolerance else "FAIL"
        print(f"  {verdict} {name:<{width}}  max rel err {err:.3e}")
    worst_name, worst_err = result.worst
    if result.passed:
        print(f"PASS: all gradients within {result.tolerance:g} "
              f"(worst {worst_name}: {worst_err:.3e})")
        return 0
    print(f"FAIL: worst offender {worst_name}: {worst_err:.3e} "
          f">= {result.tolerance:g}")
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sigver",
        description="Signature-verification workbench: synthesize a corpus, "
                    "preprocess it, train the two-branch embedding network, "
                    "and evaluate verification error rates.")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "synth": "generate a synthetic signature corpus and manifest",
        "preprocess": "binarize, crop, resize and cache all manifest images",
        "train": "train the embedding network with tuplet batches",
        "eval": "score a trained checkpoint on the held-out test identities",
        "gradcheck": "verify analytic gradients end to end on a tiny network",
    }
    for name, help_text in descriptions.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="PATH",
                       help="flat key = value config file (defaults built in)")
        p.add_argument("--seed", type=int, metavar="N",
                       help="override the config seed")
        p.add_argument("--loss", choices=LOSS_KINDS,
                       help="override the training loss")
        p.add_argument("--out", metavar="DIR",
                       help="override the command's output directory")
    args = parser.parse_args(argv)
    try:
        cfg = _load_run_config(args)
        handler = {
            "synth": cmd_synth,
            "preprocess": cmd_preprocess,
            "train": cmd_train,
            "eval": cmd_eval,
            "gradcheck": cmd_gradcheck,
        }[args.command]
        return handler(cfg)
    except (ConfigFileError, FileNotFoundError, SamplingError,
            TrainingDiverged, DegenerateEvaluationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

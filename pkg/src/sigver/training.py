"""Training loop: tuplet batches, Adam, validation-EER early stopping.

One integer seed drives everything through labeled substreams:
``init`` for parameters, ``batch`` (with epoch and step labels) for
sampling, ``pairs-val`` for the validation pair protocol.  Repeating a
run with the same seed and config therefore reproduces the loss
trajectory exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .ndgrad import Tensor, no_grad, save_tensors
from .ndgrad.optim import ParameterStore, adam_update
from .network import NetConfig, forward_batch, init_params
from .rng import substream
from .tupletloss import Batch, TrainIndex, build_batch, total_loss, triplet_total_loss
from .verifier import evaluate, make_test_pairs, pair_distances

EMBED_CHUNK = 32


class TrainingDiverged(RuntimeError):
    """Raised when the loss leaves the finite range during training."""


@dataclass
class TrainResult:
    log_rows: list            # (epoch, train_loss or None, val_eer)
    best_epoch: int
    best_val_eer: float
    stopped_early: bool
    params: ParameterStore    # weights of the best epoch


def _np_dtype(name: str):
    return np.float32 if name == "float32" else np.float64


def batch_array(batch: Batch, cache: dict, dtype) -> np.ndarray:
    """Stack cached image tensors in the batch's sample order: [N,1,H,W]."""
    return np.stack([cache[path] for path in batch.sample_ids]).astype(
        dtype, copy=False)


def embed_rows(rows, cache: dict, params: ParameterStore, cfg: NetConfig,
               dtype=np.float32, chunk: int = EMBED_CHUNK) -> dict:
    """Eval-mode final embeddings (global ++ six regions) keyed by path."""
    out: dict = {}
    with no_grad():
        for lo in range(0, len(rows), chunk):
            part = rows[lo:lo + chunk]
            x = Tensor(np.stack([cache[r.path] for r in part]).astype(
                dtype, copy=False))
            streams = forward_batch(x, params, cfg, training=False)
            stacked = np.concatenate([s.data for s in streams], axis=1)
            for i, row in enumerate(part):
                out[row.path] = stacked[i]
    return out


def eer_on_pairs(rows, pairs, cache, params, cfg: NetConfig,
                 dtype=np.float32) -> float:
    embeddings = embed_rows(rows, cache, params, cfg, dtype)
    distances = pair_distances(embeddings, pairs)
    labels = np.array([p.positive for p in pairs])
    return evaluate(distances, labels).eer


def _auto_steps(index: TrainIndex, w: int) -> int:
    """One epoch visits roughly every genuine image once as an anchor."""
    return max(1, -(-len(index.anchor_pool) // w))


def train_model(run: RunConfig, train_rows, val_rows, cache: dict,
                out_dir=None, log=print) -> TrainResult:
    """Train from scratch; returns the best-validation-EER weights.

    If ``out_dir`` is given, writes ``checkpoint.bin`` there whenever the
    validation EER improves.
    """
    dtype = _np_dtype(run.train_dtype)
    params = init_params(run.net, substream(run.seed, "init"), dtype=dtype)
    index = TrainIndex(train_rows)
    steps = run.steps_per_epoch or _auto_steps(index, run.tuplets.w)
    loss_fn = total_loss if run.loss == "cotuplet" else triplet_total_loss
    pairs = make_test_pairs(val_rows, substream(run.seed, "pairs-val"))

    eer0 = eer_on_pairs(val_rows, pairs, cache, params, run.net, dtype)
    log_rows: list = [(0, None, eer0)]
    log(f"epoch   0  untrained         val_eer {eer0:6.2f}%")

    def snapshot():
        # state_arrays returns live views; the optimizer mutates them in place
        return {n: a.copy() for n, a in params.state_arrays().items()}

    best_eer, best_epoch = eer0, 0
    best_state = snapshot()
    checkpoint_path = Path(out_dir) / "checkpoint.bin" if out_dir else None
    if checkpoint_path is not None:
        save_tensors(checkpoint_path, best_state, dtype="float32")
    stopped_early = False

    for epoch in range(1, run.epochs + 1):
        losses = []
        for step in range(1, steps + 1):
            batch = build_batch(index, run.tuplets,
                                substream(run.seed, "batch", epoch, step))
            x = Tensor(batch_array(batch, cache, dtype))
            streams = forward_batch(x, params, run.net, training=True)
            loss = loss_fn(streams, batch, run.tuplets)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, step {step} "
                    f"(lr {run.adam.lr}, loss {run.loss})")
            params.zero_grad()
            loss.backward()
            # a branch that mines empty sets this step contributes a constant
            # zero loss, so its head parameters legitimately have no gradient
            adam_update(params, run.adam, epoch, allow_missing=True)
            losses.append(value)
        train_loss = float(np.mean(losses))
        eer = eer_on_pairs(val_rows, pairs, cache, params, run.net, dtype)
        log_rows.append((epoch, train_loss, eer))
        log(f"epoch {epoch:3d}  loss {train_loss:10.5f}  val_eer {eer:6.2f}%")
        if eer < best_eer:
            best_eer, best_epoch = eer, epoch
            best_state = snapshot()
            if checkpoint_path is not None:
                save_tensors(checkpoint_path, best_state, dtype="float32")
        elif epoch - best_epoch >= run.patience:
            stopped_early = True
            log(f"early stop: no val_eer improvement for {run.patience} epochs")
            break

    best_params = ParameterStore()
    for name in params.names():
        best_params.add(name, best_state[name],
                        trainable=params.is_trainable(name))
    return TrainResult(log_rows, best_epoch, best_eer, stopped_early, best_params)


def write_training_log(path, log_rows) -> None:
    """CSV ``epoch,train_loss,val_eer``; the untrained row has empty loss."""
    lines = ["epoch,train_loss,val_eer"]
    for epoch, train_loss, eer in log_rows:
        loss_text = "" if train_loss is None else format(train_loss, ".10g")
        lines.append(f"{epoch},{loss_text},{format(eer, '.10g')}")
    Path(path).write_text("\n".join(lines) + "\n")

"""Co-tuplet metric loss, batch construction, and the triplet baseline.

A tuplet is one genuine anchor plus k genuine positives and k forged
negatives of the same identity.  The co-tuplet loss pushes selected
positive distances below the hardest (closest) negative and selected
negative distances above the hardest (furthest) positive, with selection
controlled by a margin.  Selection masks are recomputed from current
distances each step and held fixed during differentiation; the hardest
distances themselves stay differentiable through their arg elements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndgrad import Tensor, concat, log1p_sum_exp


class SamplingError(ValueError):
    """Raised when an identity lacks the samples a tuplet needs."""


@dataclass
class LossConfig:
    """Tuplet geometry and loss weights.

    k positives and k negatives per anchor; w anchors per batch; delta is
    the mining margin; regional_weight scales the six regional losses
    against the global one; triplet_margin is used only by the baseline.
    """

    k: int = 5
    w: int = 18
    delta: float = 0.3
    regional_weight: float = 1.0
    triplet_margin: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.w < 1:
            raise ValueError("w must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.regional_weight < 0:
            raise ValueError("regional_weight must be >= 0")
        if self.triplet_margin <= 0:
            raise ValueError("triplet_margin must be > 0")

    def batch_images(self) -> int:
        return self.w * (2 * self.k + 1)


@dataclass(frozen=True)
class Tuplet:
    """Sample ids of one anchor, its positives, and its negatives."""

    anchor: str
    positives: tuple
    negatives: tuple

    def __post_init__(self):
        if len(self.positives) != len(self.negatives):
            raise ValueError("positives and negatives must have equal counts")
        if self.anchor in self.positives:
            raise ValueError("anchor may not appear among its positives")
        if len(set(self.positives)) != len(self.positives):
            raise ValueError("duplicate positive ids")
        if len(set(self.negatives)) != len(self.negatives):
            raise ValueError("duplicate negative ids")


@dataclass
class Batch:
    """w tuplets flattened to a sample-id list for one forward pass.

    Slot layout per tuplet: anchor, k positives, k negatives.  Slot index
    helpers map tuplets back into the batch embedding matrix rows.
    """

    tuplets: list
    k: int

    def __post_init__(self):
        self.sample_ids = []
        for t in self.tuplets:
            if len(t.positives) != self.k:
                raise ValueError(f"tuplet has {len(t.positives)} positives, "
                                 f"expected {self.k}")
            self.sample_ids.append(t.anchor)
            self.sample_ids.extend(t.positives)
            self.sample_ids.extend(t.negatives)

    def __len__(self) -> int:
        return len(self.sample_ids)

    def anchor_slot(self, i: int) -> int:
        return i * (2 * self.k + 1)

    def positive_slots(self, i: int) -> np.ndarray:
        base = self.anchor_slot(i)
        return np.arange(base + 1, base + 1 + self.k)

    def negative_slots(self, i: int) -> np.ndarray:
        base = self.anchor_slot(i)
        return np.arange(base + 1 + self.k, base + 1 + 2 * self.k)


class TrainIndex:
    """Per-identity genuine/forged sample ids from manifest rows."""

    def __init__(self, rows):
        self.genuine: dict[str, list[str]] = {}
        self.forged: dict[str, list[str]] = {}
        for row in rows:
            bucket = self.genuine if row.label == "genuine" else self.forged
            bucket.setdefault(row.identity, []).append(row.path)
        self.identities = sorted(set(self.genuine) | set(self.forged))
        # (identity, sample) pairs for all genuine images, in a fixed order.
        self.anchor_pool = [(ident, path) for ident in sorted(self.genuine)
                            for path in self.genuine[ident]]


def build_batch(index: TrainIndex, cfg: LossConfig,
                rng: np.random.Generator) -> Batch:
    """Sample w tuplets: anchors without replacement across the genuine pool.

    Positives are distinct other genuine samples of the anchor's identity;
    negatives are distinct forged samples of the same identity.
    """
    pool = index.anchor_pool
    if len(pool) < cfg.w:
        raise SamplingError(
            f"need {cfg.w} anchors but only {len(pool)} genuine samples exist"
        )
    anchor_idx = rng.choice(len(pool), size=cfg.w, replace=False)
    tuplets = []
    for ai in anchor_idx:
        identity, anchor = pool[ai]
        genuine = index.genuine.get(identity, [])
        forged = index.forged.get(identity, [])
        others = [p for p in genuine if p != anchor]
        if len(others) < cfg.k:
            raise SamplingError(
                f"identity {identity!r} has {len(genuine)} genuine samples; "
                f"tuplets need at least {cfg.k + 1}"
            )
        if len(forged) < cfg.k:
            raise SamplingError(
                f"identity {identity!r} has {len(forged)} forged samples; "
                f"tuplets need at least {cfg.k}"
            )
        pos = [others[i] for i in rng.choice(len(others), size=cfg.k, replace=False)]
        neg = [forged[i] for i in rng.choice(len(forged), size=cfg.k, replace=False)]
        tuplets.append(Tuplet(anchor, tuple(pos), tuple(neg)))
    return Batch(tuplets, cfg.k)


# ---------------------------------------------------------------------------
# distances, mining, losses
# ---------------------------------------------------------------------------


def tuplet_distances(anchor_emb: Tensor, pos_embs: Tensor, neg_embs: Tensor):
    """Squared Euclidean distances anchor->positives and anchor->negatives.

    anchor_emb is [dim]; pos_embs and neg_embs are [k, dim].  Output order
    follows input order.
    """
    if anchor_emb.ndim != 1 or pos_embs.ndim != 2 or neg_embs.ndim != 2:
        raise ValueError("expected anchor [dim] and stacks [k, dim]")
    dim = anchor_emb.shape[0]
    if pos_embs.shape[1] != dim or neg_embs.shape[1] != dim:
        raise ValueError(
            f"embedding dims differ: anchor {dim}, positives {pos_embs.shape[1]}, "
            f"negatives {neg_embs.shape[1]}"
        )
    dp = pos_embs - anchor_emb
    dn = neg_embs - anchor_emb
    return (dp * dp).sum(axis=1), (dn * dn).sum(axis=1)


def hardest(dplus: Tensor, dminus: Tensor):
    """Furthest positive and closest negative distances (ties -> lowest index).

    Returns (dplus_h, dminus_h, (argmax, argmin)) with the scalars still
    attached to the graph through their selected elements.
    """
    if dplus.size == 0 or dminus.size == 0:
        raise ValueError("hardest requires nonempty distance vectors")
    return dplus.max(), dminus.min(), (int(np.argmax(dplus.data)),
                                       int(np.argmin(dminus.data)))


def mine(dplus, dminus, delta: float):
    """Indices of informative examples.

    SP keeps positives with distance >= (hardest negative - delta); SN
    keeps negatives with distance <= (hardest positive + delta).  Accepts
    tensors or arrays; uses values only.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    dp = dplus.data if isinstance(dplus, Tensor) else np.asarray(dplus)
    dm = dminus.data if isinstance(dminus, Tensor) else np.asarray(dminus)
    dminus_h = dm.min()
    dplus_h = dp.max()
    sp = [int(i) for i in np.flatnonzero(dp >= dminus_h - delta)]
    sn = [int(j) for j in np.flatnonzero(dm <= dplus_h + delta)]
    return sp, sn


def cotuplet_loss(dplus: Tensor, dminus: Tensor, delta: float) -> Tensor:
    """log(1 + sum_SP exp(d+_i - d-_h) + sum_SN exp(d+_h - d-_j)).

    Mining sets are constants of the step; d+_h and d-_h differentiate
    through their argmax/argmin elements.  Returns exactly 0 when both
    mining sets are empty.
    """
    if dplus.ndim != 1 or dminus.ndim != 1:
        raise ValueError("distance vectors must be 1-D")
    sp, sn = mine(dplus, dminus, delta)
    dplus_h, dminus_h, _ = hardest(dplus, dminus)
    parts = []
    if sp:
        parts.append(dplus[np.asarray(sp)] - dminus_h)
    if sn:
        parts.append(dplus_h - dminus[np.asarray(sn)])
    if not parts:
        return log1p_sum_exp(Tensor(np.zeros(0, dtype=dplus.dtype)))
    return log1p_sum_exp(concat(parts))


def triplet_loss(dplus: Tensor, dminus: Tensor, margin: float) -> Tensor:
    """Hinge max(0, d+ - d- + margin) on a scalar distance pair."""
    if margin <= 0:
        raise ValueError("margin must be > 0")
    return (dplus - dminus + margin).relu()


def _branch_tuplet_losses(embs: Tensor, batch: Batch, per_tuplet) -> Tensor:
    """Mean of per_tuplet(dplus, dminus) over the batch's tuplets."""
    losses = []
    for i in range(len(batch.tuplets)):
        anchor = embs[batch.anchor_slot(i)]
        pos = embs[batch.positive_slots(i)]
        neg = embs[batch.negative_slots(i)]
        dplus, dminus = tuplet_distances(anchor, pos, neg)
        losses.append(per_tuplet(dplus, dminus).reshape(1))
    return concat(losses).mean()


def _aggregate(branch_embs, batch: Batch, cfg: LossConfig, per_tuplet) -> Tensor:
    if len(branch_embs) != 7:
        raise ValueError(f"expected 7 embedding streams, got {len(branch_embs)}")
    expected = batch.k * 2 + 1
    for embs in branch_embs:
        if embs.shape[0] != len(batch.tuplets) * expected:
            raise ValueError(
                f"embedding rows {embs.shape[0]} do not match batch size "
                f"{len(batch.tuplets) * expected}"
            )
    total = _branch_tuplet_losses(branch_embs[0], batch, per_tuplet)
    regional = None
    for embs in branch_embs[1:]:
        term = _branch_tuplet_losses(embs, batch, per_tuplet)
        regional = term if regional is None else regional + term
    return total + cfg.regional_weight * regional


def total_loss(branch_embs, batch: Batch, cfg: LossConfig) -> Tensor:
    """Co-tuplet objective: global branch plus weighted regional branches.

    branch_embs holds seven [batch_images, dim] tensors (global first).
    Each branch contributes the mean co-tuplet loss over the w tuplets.
    """
    return _aggregate(branch_embs, batch, cfg,
                      lambda dp, dm: cotuplet_loss(dp, dm, cfg.delta))


def triplet_total_loss(branch_embs, batch: Batch, cfg: LossConfig) -> Tensor:
    """Baseline objective: same aggregation, index-paired hinge triplets.

    Positive i is paired with negative i; each tuplet contributes the mean
    hinge over its k pairs.  No hard mining.
    """
    margin = cfg.triplet_margin

    def per_tuplet(dplus, dminus):
        return (dplus - dminus + margin).relu().mean()

    return _aggregate(branch_embs, batch, cfg, per_tuplet)

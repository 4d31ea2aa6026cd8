"""Verification decisions, test-pair protocol, and FRR/FAR/EER/AUC metrics.

A questioned signature is accepted when its squared Euclidean embedding
distance to the reference is at or below a threshold.  Evaluation sweeps
every achievable threshold (midpoints between consecutive distinct
distances plus sentinels), reports the best-accuracy operating point,
interpolates the equal error rate, and integrates the ROC for AUC.  All
rates are percentages, pooled over the whole pair set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndgrad import Tensor, concat
from .network import EmbeddingSet


class DegenerateEvaluationError(ValueError):
    """Raised when evaluation input lacks a positive or a negative pair."""


class PairProtocolError(ValueError):
    """Raised when an identity cannot produce a balanced pair set."""


@dataclass(frozen=True)
class Pair:
    reference: str      # genuine sample id
    questioned: str     # genuine (positive pair) or forged (negative pair)
    positive: bool      # ground truth


@dataclass
class VerificationReport:
    """Metrics in percent plus the ROC trace ordered by threshold."""

    threshold: float    # best-accuracy squared-distance threshold
    frr: float          # false reject rate at that threshold
    far: float          # false accept rate at that threshold
    eer: float
    auc: float
    roc: list = field(default_factory=list)   # (threshold, far, frr, tpr)
    n_positive: int = 0
    n_negative: int = 0


def final_embedding(e: EmbeddingSet) -> Tensor:
    """Concatenate global then regional embeddings into one vector."""
    return concat(e.all_embeddings())


def decide(ref_emb, q_emb, d_thr: float) -> bool:
    """Accept (True) iff squared distance <= d_thr; boundary accepts."""
    if d_thr < 0:
        raise ValueError("threshold must be >= 0")
    ref = ref_emb.data if isinstance(ref_emb, Tensor) else np.asarray(ref_emb)
    q = q_emb.data if isinstance(q_emb, Tensor) else np.asarray(q_emb)
    if ref.shape != q.shape:
        raise ValueError(f"embedding shapes differ: {ref.shape} vs {q.shape}")
    diff = ref - q
    return float(diff @ diff) <= d_thr


def make_test_pairs(rows, rng: np.random.Generator) -> list[Pair]:
    """Balanced per-identity pair set.

    Positives: every unordered genuine-genuine pair, n(n-1)/2 of them.
    Negatives: genuine-reference x forged-questioned combinations,
    subsampled without replacement to the positive count.
    """
    genuine: dict[str, list[str]] = {}
    forged: dict[str, list[str]] = {}
    for row in rows:
        bucket = genuine if row.label == "genuine" else forged
        bucket.setdefault(row.identity, []).append(row.path)
    pairs: list[Pair] = []
    for identity in sorted(set(genuine) | set(forged)):
        g = genuine.get(identity, [])
        f = forged.get(identity, [])
        n = len(g)
        if n < 2:
            raise PairProtocolError(
                f"identity {identity!r} has {n} genuine samples; need >= 2"
            )
        target = n * (n - 1) // 2
        for i in range(n):
            for j in range(i + 1, n):
                pairs.append(Pair(g[i], g[j], True))
        pool = [(ref, q) for ref in g for q in f]
        if len(pool) < target:
            raise PairProtocolError(
                f"identity {identity!r} has {len(pool)} negative combinations "
                f"but needs {target} for balance"
            )
        chosen = np.sort(rng.choice(len(pool), size=target, replace=False))
        for idx in chosen:
            ref, q = pool[idx]
            pairs.append(Pair(ref, q, False))
    return pairs


def pair_distances(embeddings: dict[str, np.ndarray], pairs) -> np.ndarray:
    """Squared Euclidean distance per pair, in pair order."""
    out = np.empty(len(pairs))
    for i, pair in enumerate(pairs):
        diff = embeddings[pair.reference] - embeddings[pair.questioned]
        out[i] = diff @ diff
    return out


def evaluate(distances, labels) -> VerificationReport:
    """Sweep thresholds over the distances and summarize the operating points.

    labels is a boolean array, True for positive (genuine-genuine) pairs.
    """
    distances = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if distances.shape != labels.shape or distances.ndim != 1:
        raise ValueError("distances and labels must be matching 1-D arrays")
    if not np.all(np.isfinite(distances)):
        raise ValueError("distances must be finite")
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateEvaluationError(
            f"need both pair classes, got {n_pos} positive / {n_neg} negative"
        )

    distinct = np.unique(distances)
    thresholds = np.concatenate([
        [distinct[0] - 1.0],
        (distinct[:-1] + distinct[1:]) / 2.0,
        [distinct[-1] + 1.0],
    ])
    pos_sorted = np.sort(distances[labels])
    neg_sorted = np.sort(distances[~labels])
    accepted_pos = np.searchsorted(pos_sorted, thresholds, side="right")
    accepted_neg = np.searchsorted(neg_sorted, thresholds, side="right")
    frr = (n_pos - accepted_pos) / n_pos * 100.0
    far = accepted_neg / n_neg * 100.0
    tpr = 100.0 - frr

    accuracy = (accepted_pos + (n_neg - accepted_neg)) / (n_pos + n_neg)
    best = int(np.argmax(accuracy))          # ties -> lowest threshold

    # EER: walk to the first point where FRR falls to or below FAR, then
    # interpolate linearly between the bracketing operating points.
    diff = frr - far
    cross = int(np.argmax(diff <= 0.0))
    if diff[cross] == 0.0:
        eer = frr[cross]
    else:
        d0, d1 = diff[cross - 1], diff[cross]
        alpha = d0 / (d0 - d1)
        eer = frr[cross - 1] + alpha * (frr[cross] - frr[cross - 1])

    auc = float(np.trapezoid(tpr, far) / 100.0)
    roc = [(float(t), float(fa), float(fr), float(tp))
           for t, fa, fr, tp in zip(thresholds, far, frr, tpr)]
    return VerificationReport(
        threshold=float(thresholds[best]),
        frr=float(frr[best]),
        far=float(far[best]),
        eer=float(eer),
        auc=auc,
        roc=roc,
        n_positive=n_pos,
        n_negative=n_neg,
    )


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".10g")


def write_report_csv(report: VerificationReport, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("metric,value\n")
        f.write(f"threshold,{_fmt(report.threshold)}\n")
        f.write(f"frr,{_fmt(report.frr)}\n")
        f.write(f"far,{_fmt(report.far)}\n")
        f.write(f"eer,{_fmt(report.eer)}\n")
        f.write(f"auc,{_fmt(report.auc)}\n")
        f.write(f"n_positive,{report.n_positive}\n")
        f.write(f"n_negative,{report.n_negative}\n")


def write_roc_csv(report: VerificationReport, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("threshold,far,frr,tpr\n")
        for t, fa, fr, tp in report.roc:
            f.write(f"{_fmt(t)},{_fmt(fa)},{_fmt(fr)},{_fmt(tp)}\n")

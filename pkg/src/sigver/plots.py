"""Figure rendering for training logs and evaluation reports.

Uses the Agg backend unconditionally: figures are written to files, never
shown, so the package works on headless machines.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_training_curves(path, log_rows) -> None:
    """Loss and validation-EER curves from ``(epoch, train_loss, val_eer)`` rows.

    ``train_loss`` may be None on the untrained row (epoch 0); that point
    appears only on the EER curve.
    """
    epochs = [row[0] for row in log_rows]
    losses = [(row[0], row[1]) for row in log_rows if row[1] is not None]
    eers = [row[2] for row in log_rows]
    fig, ax_loss = plt.subplots(figsize=(7, 4.5))
    if losses:
        ax_loss.plot([e for e, _ in losses], [v for _, v in losses],
                     color="tab:blue", marker="o", label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="tab:blue")
    ax_loss.tick_params(axis="y", labelcolor="tab:blue")
    ax_eer = ax_loss.twinx()
    ax_eer.plot(epochs, eers, color="tab:red", marker="s", label="val EER")
    ax_eer.set_ylabel("validation EER (%)", color="tab:red")
    ax_eer.tick_params(axis="y", labelcolor="tab:red")
    ax_eer.set_ylim(bottom=0)
    ax_loss.set_title("training progress")
    ax_loss.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_roc(path, roc_points, eer: float, auc: float) -> None:
    """ROC curve (TPR against FAR, both percentages) with the EER point."""
    far = [p[1] for p in roc_points]
    tpr = [p[3] for p in roc_points]
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.plot(far, tpr, color="tab:blue",
            label=f"ROC (AUC {auc:.2f}%)")
    ax.plot([0, 100], [0, 100], color="gray", linestyle="--", linewidth=1,
            label="chance")
    ax.plot([eer], [100.0 - eer], marker="o", color="tab:red", linestyle="",
            label=f"EER {eer:.2f}%")
    ax.set_xlabel("false acceptance rate (%)")
    ax.set_ylabel("true positive rate (%)")
    ax.set_xlim(-2, 102)
    ax.set_ylim(-2, 102)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    ax.set_title("verification ROC")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

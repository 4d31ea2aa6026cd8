"""Named parameter storage and the Adam update with stepped learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class AdamConfig:
    """Adam hyperparameters plus a halving schedule over training epochs.

    The effective rate for a 1-based epoch e is
    ``lr * decay ** (e // decay_every)``: with the defaults, epochs 1..14
    use the base rate, epoch 15 starts the first halved block, epoch 30
    the second, and so on.
    """

    lr: float = 1e-3
    decay: float = 0.5
    decay_every: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must lie in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")


def learning_rate(config: AdamConfig, epoch: int) -> float:
    """Effective learning rate for a 1-based epoch index."""
    if epoch < 1:
        raise ValueError(f"epoch is 1-based, got {epoch}")
    return config.lr * config.decay ** (epoch // config.decay_every)


class ParameterStore:
    """Ordered mapping of names to tensors with per-parameter Adam state.

    Trainable entries participate in ``adam_update``; non-trainable entries
    (batch-norm running statistics) ride along for checkpointing only.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._step: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, copy=True), requires_grad=trainable)
        self._entries[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable_names(self) -> list[str]:
        return [n for n, t in self._trainable.items() if t]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def parameter_count(self) -> int:
        """Total number of trainable scalar parameters."""
        return sum(self._entries[n].size for n in self.trainable_names())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Values of every entry (trainable and not), for checkpointing."""
        return {n: t.data for n, t in self._entries.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite entry values in place from a checkpoint mapping."""
        missing = set(self._entries) - set(arrays)
        extra = set(arrays) - set(self._entries)
        if missing or extra:
            raise ValueError(
                f"checkpoint mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, t in self._entries.items():
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}"
                )
            t.data[...] = arr

    def reset_optimizer(self) -> None:
        self._m.clear()
        self._v.clear()
        self._step.clear()


def adam_update(store: ParameterStore, config: AdamConfig, epoch: int,
                allow_missing: bool = False) -> float:
    """Apply one Adam step to every trainable parameter in the store.

    By default a missing gradient raises, catching training-loop bugs.
    With ``allow_missing`` parameters without a gradient are skipped for
    this step (their moments and step counts stay frozen); losses with
    example mining legitimately leave a parameter untouched when its
    branch mines an empty set.  Returns the learning rate applied.
    """
    lr = learning_rate(config, epoch)
    for name in store.trainable_names():
        t = store[name]
        if t.grad is None:
            if allow_missing:
                continue
            raise ValueError(f"parameter {name!r} has no gradient")
        if t.grad.shape != t.data.shape:
            raise ValueError(
                f"gradient shape {t.grad.shape} does not match {name!r} {t.data.shape}"
            )
        m = store._m.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            store._m[name] = m
            store._v[name] = np.zeros_like(t.data)
            store._step[name] = 0
        v = store._v[name]
        step = store._step[name] + 1
        store._step[name] = step
        g = t.grad
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        mhat = m / (1.0 - config.beta1 ** step)
        vhat = v / (1.0 - config.beta2 ** step)
        t.data -= lr * mhat / (np.sqrt(vhat) + config.eps)
    return lr

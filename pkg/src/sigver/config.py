"""Run configuration: one flat ``key = value`` text file drives every command.

The file is a flat namespace -- no sections -- validated against a fixed
schema.  Unknown and duplicate keys are rejected.  Missing keys take their
defaults, so a config file only needs the values it overrides.  Emission is
canonical (fixed key order, shortest round-trip float formatting), which
makes parse -> emit byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .imageprep import PrepConfig
from .ndgrad.optim import AdamConfig
from .network import NetConfig
from .synth import SynthConfig
from .tupletloss import LossConfig

LOSS_KINDS = ("cotuplet", "triplet")
TRAIN_DTYPES = ("float32", "float64")
MAX_EPOCHS = 80


class ConfigFileError(ValueError):
    """Raised for malformed config text or invalid key combinations."""


@dataclass
class RunConfig:
    """Everything a command needs, CPU-sized by default.

    The library-level ``NetConfig()`` default is the full-size operating
    point; the run-level default here is the desk profile (64x100 inputs,
    128-d embeddings, 42-image batches) so that training on a laptop CPU
    finishes in minutes.
    """

    seed: int = 0
    loss: str = "cotuplet"
    epochs: int = 40
    patience: int = 8
    steps_per_epoch: int = 0          # 0 = one pass worth of anchors, derived
    train_dtype: str = "float32"
    train_frac: float = 0.75
    val_frac: float = 0.125
    test_frac: float = 0.125
    data_dir: str = "data"
    out_dir: str = "out"
    net: NetConfig = field(default_factory=NetConfig.desk)
    tuplets: LossConfig = field(default_factory=lambda: LossConfig(k=3, w=6))
    adam: AdamConfig = field(default_factory=AdamConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ConfigFileError(
                f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if not 1 <= self.epochs <= MAX_EPOCHS:
            raise ConfigFileError(
                f"epochs must lie in [1, {MAX_EPOCHS}], got {self.epochs}")
        if self.patience < 1:
            raise ConfigFileError(f"patience must be >= 1, got {self.patience}")
        if self.steps_per_epoch < 0:
            raise ConfigFileError(
                f"steps_per_epoch must be >= 0, got {self.steps_per_epoch}")
        if self.train_dtype not in TRAIN_DTYPES:
            raise ConfigFileError(
                f"train_dtype must be one of {TRAIN_DTYPES}, got {self.train_dtype!r}")
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) <= 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigFileError(
                f"split fractions must be positive and sum to 1, got {fracs}")
        # The sampler draws k positives and k negatives around each genuine
        # anchor, so the corpus must be able to supply them for any anchor.
        if self.synth.genuine_per_identity < self.tuplets.k + 1:
            raise ConfigFileError(
                f"genuine_per_identity ({self.synth.genuine_per_identity}) "
                f"must be >= k + 1 ({self.tuplets.k + 1})")
        if self.synth.forged_per_identity < self.tuplets.k:
            raise ConfigFileError(
                f"forged_per_identity ({self.synth.forged_per_identity}) "
                f"must be >= k ({self.tuplets.k})")

    def prep_config(self) -> PrepConfig:
        """Preprocessing target size always matches the network input."""
        return PrepConfig(target_h=self.net.input_h, target_w=self.net.input_w)


# ---------------------------------------------------------------------------
# schema: flat key -> (owning section, attribute, value kind)
# ---------------------------------------------------------------------------

_RUN, _NET, _LOSS, _ADAM, _SYNTH = "run", "net", "tuplets", "adam", "synth"

_SCHEMA = (
    # run-level
    ("seed", _RUN, "seed", "int"),
    ("loss", _RUN, "loss", "str"),
    ("epochs", _RUN, "epochs", "int"),
    ("patience", _RUN, "patience", "int"),
    ("steps_per_epoch", _RUN, "steps_per_epoch", "int"),
    ("train_dtype", _RUN, "train_dtype", "str"),
    ("train_frac", _RUN, "train_frac", "float"),
    ("val_frac", _RUN, "val_frac", "float"),
    ("test_frac", _RUN, "test_frac", "float"),
    ("data_dir", _RUN, "data_dir", "str"),
    ("out_dir", _RUN, "out_dir", "str"),
    # network
    ("input_h", _NET, "input_h", "int"),
    ("input_w", _NET, "input_w", "int"),
    ("stage_channels", _NET, "stage_channels", "ints"),
    ("branch_channels", _NET, "branch_channels", "int"),
    ("attention_dim", _NET, "attention_dim", "int"),
    ("embedding_dim", _NET, "embedding_dim", "int"),
    ("region_w", _NET, "region_w", "int"),
    ("region_w_overlap", _NET, "region_w_overlap", "int"),
    ("region_h", _NET, "region_h", "int"),
    ("region_h_overlap", _NET, "region_h_overlap", "int"),
    ("fusion", _NET, "fusion", "str"),
    # tuplet loss / sampler
    ("k", _LOSS, "k", "int"),
    ("w", _LOSS, "w", "int"),
    ("delta", _LOSS, "delta", "float"),
    ("lambda", _LOSS, "regional_weight", "float"),
    ("triplet_margin", _LOSS, "triplet_margin", "float"),
    # optimizer
    ("lr", _ADAM, "lr", "float"),
    ("lr_decay", _ADAM, "decay", "float"),
    ("lr_decay_every", _ADAM, "decay_every", "int"),
    ("beta1", _ADAM, "beta1", "float"),
    ("beta2", _ADAM, "beta2", "float"),
    ("adam_eps", _ADAM, "eps", "float"),
    # synthesis
    ("identities", _SYNTH, "identities", "int"),
    ("genuine_per_identity", _SYNTH, "genuine_per_identity", "int"),
    ("forged_per_identity", _SYNTH, "forged_per_identity", "int"),
    ("raw_h", _SYNTH, "raw_h", "int"),
    ("raw_w", _SYNTH, "raw_w", "int"),
    ("jitter", _SYNTH, "jitter", "float"),
    ("distortion", _SYNTH, "distortion", "float"),
)

_KEYS = {row[0]: row for row in _SCHEMA}

_SECTION_BANNERS = {
    "seed": "run",
    "input_h": "network",
    "k": "tuplet loss",
    "lr": "optimizer",
    "identities": "synthesis",
}


def _parse_value(key: str, kind: str, text: str):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "ints":
            return tuple(int(part.strip()) for part in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigFileError(f"bad value for {key!r}: {text!r} ({exc})") from exc


def _format_value(kind: str, value) -> str:
    if kind == "ints":
        return ",".join(str(v) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def parse_config(text: str) -> dict:
    """Raw ``key = value`` lines -> string mapping; structure errors only."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigFileError(
                f"line {lineno}: expected 'key = value', got {raw.rstrip()!r}")
        if key in values:
            raise ConfigFileError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def loads(text: str) -> RunConfig:
    """Parse config text into a validated RunConfig.

    Missing keys keep the RunConfig defaults (desk profile), so partial
    files only need the values they override.
    """
    values = parse_config(text)
    unknown = sorted(set(values) - set(_KEYS))
    if unknown:
        raise ConfigFileError(f"unknown config keys: {', '.join(unknown)}")
    base = RunConfig()
    section_defaults = {_NET: base.net, _LOSS: base.tuplets,
                        _ADAM: base.adam, _SYNTH: base.synth}
    kwargs: dict = {name: {} for name in section_defaults}
    for key, section, attr, _ in _SCHEMA:
        if section != _RUN:
            kwargs[section][attr] = getattr(section_defaults[section], attr)
    run_kwargs: dict = {}
    for key, text_value in values.items():
        _, section, attr, kind = _KEYS[key]
        parsed = _parse_value(key, kind, text_value)
        if section == _RUN:
            run_kwargs[attr] = parsed
        else:
            kwargs[section][attr] = parsed
    try:
        return RunConfig(**run_kwargs,
                         net=NetConfig(**kwargs[_NET]),
                         tuplets=LossConfig(**kwargs[_LOSS]),
                         adam=AdamConfig(**kwargs[_ADAM]),
                         synth=SynthConfig(**kwargs[_SYNTH]))
    except ConfigFileError:
        raise
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from exc


def dumps(cfg: RunConfig) -> str:
    """Canonical emission: fixed order, one key per line, section banners."""
    lines = []
    sections = {_RUN: cfg, _NET: cfg.net, _LOSS: cfg.tuplets,
                _ADAM: cfg.adam, _SYNTH: cfg.synth}
    for key, section, attr, kind in _SCHEMA:
        if key in _SECTION_BANNERS:
            if lines:
                lines.append("")
            lines.append(f"# {_SECTION_BANNERS[key]}")
        lines.append(f"{key} = {_format_value(kind, getattr(sections[section], attr))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return loads(path.read_text())


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(dumps(cfg))

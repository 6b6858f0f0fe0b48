"""Model and run configuration.

Defaults mirror the tuned operating point: dropout 0.5, LeakyReLU, batch
size 8, a 64-neuron fully connected head, Adam, binary crossentropy. Run
configs load from a flat ``key = value`` file; command-line flags override
file values, file values override defaults, and unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .nn import ACTIVATION_KINDS, LOSS_KINDS, OPTIMIZER_KINDS

WEIGHTS_MODES = ("uniform", "valderived", "learned")
PROVIDERS = ("pseudo", "file")

FEATURE_NAMES = (
    "subjectivity",
    "polarity",
    "sentiment",
    "followers",
    "likes",
    "replies",
    "retweets",
)

# the one-axis-at-a-time sweep values around the tuned operating point
ABLATION_GRID = {
    "dropout": (0.5, 0.6, 0.7, 0.8),
    "activation": ("linear", "prelu", "leaky_relu", "tanh", "elu"),
    "batch_size": (8, 32, 64, 128),
    "fc_width": (64, 128, 256, 512),
    "optimizer": ("adam", "nadam", "sgd", "rmsprop"),
    "loss": LOSS_KINDS,
}


@dataclass
class ModelConfig:
    dropout: float = 0.5
    activation: str = "leaky_relu"
    batch_size: int = 8
    fc_width: int = 64
    optimizer: str = "adam"
    loss: str = "binary_crossentropy"
    learning_rate: float = 1e-3
    n_text_layers: int = 4
    d_model: int = 32
    d_repr: int = 32
    heads: int = 4
    d_emb: int = 32
    max_seq_len: int = 64
    ffn_mult: int = 4
    ela_reduction: int = 4
    ela_corrected_mean: bool = False
    pe_base: float = 1000.0
    feature_encoder_depth: int = 2
    probsparse_factor: float = 5.0
    feature_mask: tuple = FEATURE_NAMES
    lag_window: int = 0  # 0 means "whole feature vector"
    n_in: int = 1
    n_out: int = 0
    weights_mode: str = "valderived"
    ensemble_temperature: float = 0.1
    patience: int = 10
    early_stop_min_delta: float = 1e-4
    max_epochs: int = 200
    threshold: float = 0.5
    seed: int = 0

    @property
    def feature_count(self) -> int:
        return len(self.feature_mask)

    def validate(self, grid_guard: bool = True) -> list[str]:
        """Return every constraint violation (empty list when valid)."""
        errs = []
        if self.activation not in ACTIVATION_KINDS:
            errs.append(f"activation must be one of {ACTIVATION_KINDS}, got {self.activation!r}")
        if self.loss not in LOSS_KINDS:
            errs.append(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.optimizer not in OPTIMIZER_KINDS:
            errs.append(f"optimizer must be one of {OPTIMIZER_KINDS}, got {self.optimizer!r}")
        if not 0.0 <= self.dropout < 1.0:
            errs.append(f"dropout must be in [0, 1), got {self.dropout}")
        elif grid_guard and not (0.5 <= self.dropout <= 0.8):
            errs.append(
                f"dropout {self.dropout} outside the studied range [0.5, 0.8] "
                "(disable the grid guard to allow it)"
            )
        if self.weights_mode not in WEIGHTS_MODES:
            errs.append(f"weights_mode must be one of {WEIGHTS_MODES}, got {self.weights_mode!r}")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.fc_width < 1:
            errs.append("fc_width must be >= 1")
        if self.learning_rate <= 0:
            errs.append("learning_rate must be positive")
        if self.d_model % 2 != 0:
            errs.append("d_model must be even (sin/cos pairing)")
        if self.heads < 1 or self.d_model % self.heads != 0:
            errs.append(f"heads must divide d_model ({self.heads} vs {self.d_model})")
        if self.ela_reduction < 1 or self.d_model % self.ela_reduction != 0:
            errs.append(f"ela_reduction must divide d_model ({self.ela_reduction} vs {self.d_model})")
        if self.n_text_layers < 1:
            errs.append("n_text_layers must be >= 1")
        if self.feature_encoder_depth < 1:
            errs.append("feature_encoder_depth must be >= 1")
        if self.probsparse_factor <= 0:
            errs.append("probsparse_factor must be positive")
        if self.ensemble_temperature <= 0:
            errs.append("ensemble_temperature must be positive")
        if not 0.0 < self.threshold < 1.0:
            errs.append("threshold must be in (0, 1)")
        if self.max_epochs < 1:
            errs.append("max_epochs must be >= 1")
        if self.patience < 0:
            errs.append("patience must be >= 0")
        if self.early_stop_min_delta < 0:
            errs.append("early_stop_min_delta must be >= 0")
        if self.max_seq_len < 1:
            errs.append("max_seq_len must be >= 1")
        unknown = [f for f in self.feature_mask if f not in FEATURE_NAMES]
        if unknown:
            errs.append(f"unknown feature names {unknown}; choose from {FEATURE_NAMES}")
        if not self.feature_mask:
            errs.append("feature_mask must keep at least one feature")
        if self.n_in < 0 or self.n_out < 0:
            errs.append("n_in and n_out must be nonnegative")
        if self.lag_window < 0:
            errs.append("lag_window must be nonnegative (0 = whole vector)")
        return errs

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown config keys: {unknown}")
        kwargs = dict(d)
        if "feature_mask" in kwargs:
            kwargs["feature_mask"] = tuple(kwargs["feature_mask"])
        return cls(**kwargs)


@dataclass
class RunConfig:
    """Model config plus the data-plumbing knobs a command needs."""

    model: ModelConfig = field(default_factory=ModelConfig)
    input_path: str = ""
    keywords_path: str = ""
    lexicon_path: str = ""
    out_dir: str = "wet-out"
    provider: str = "pseudo"
    embeddings_path: str = ""
    grid_guard: bool = True

    def validate(self) -> list[str]:
        errs = self.model.validate(grid_guard=self.grid_guard)
        if self.provider not in PROVIDERS:
            errs.append(f"provider must be one of {PROVIDERS}, got {self.provider!r}")
        if self.provider == "file" and not self.embeddings_path:
            errs.append("provider 'file' requires embeddings_path")
        return errs

    def to_dict(self) -> dict:
        out = dict(self.model.to_dict())
        for name in ("input_path", "keywords_path", "lexicon_path", "out_dir",
                     "provider", "embeddings_path", "grid_guard"):
            out[name] = getattr(self, name)
        return out


_RUN_ONLY_KEYS = (
    "input_path",
    "keywords_path",
    "lexicon_path",
    "out_dir",
    "provider",
    "embeddings_path",
    "grid_guard",
)


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip('"')


def parse_config_text(text: str) -> dict:
    """Parse the flat ``key = value`` config format (# starts a comment)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno} is not 'key = value': {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = _parse_value(value)
    return out


def load_run_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig with precedence: overrides > file > defaults."""
    data = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            data.update(parse_config_text(fh.read()))
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})

    model_keys = {f.name for f in fields(ModelConfig)}
    unknown = sorted(k for k in data if k not in model_keys and k not in _RUN_ONLY_KEYS)
    if unknown:
        raise KeyError(f"unknown config keys: {unknown}")

    model = ModelConfig.from_dict({k: v for k, v in data.items() if k in model_keys})
    run_kwargs = {k: v for k, v in data.items() if k in _RUN_ONLY_KEYS}
    return RunConfig(model=model, **run_kwargs)


def save_config_text(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"

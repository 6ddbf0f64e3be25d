"""Training hyperparameters."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

EMBED_MODES = ("concat", "text_only")


@dataclass
class TrainConfig:
    """All knobs of a training run.

    Defaults follow the published settings where they exist (d = 200 split
    evenly, H = 4, alphas 1/1/0.3/0.3, one negative sample); the remaining
    values are conventional choices.
    """

    d_s: int = 100
    d_t: int = 100
    hops: int = 4
    lambda_decay: float = 0.5
    alpha_tt: float = 1.0
    alpha_ss: float = 1.0
    alpha_st: float = 0.3
    alpha_ts: float = 0.3
    negatives: int = 1
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    nonlinearity: str = "tanh"
    embed_mode: str = "concat"
    init_std: float = 0.1
    min_count: int = 1
    reject_true_target: bool = False
    max_row_entries: int | None = None

    def __post_init__(self):
        self.validate()

    @property
    def alphas(self) -> tuple[float, float, float, float]:
        """Weights in term order ``(tt, ss, st, ts)``."""
        return (self.alpha_tt, self.alpha_ss, self.alpha_st, self.alpha_ts)

    @property
    def dim(self) -> int:
        return self.d_s + self.d_t

    def validate(self) -> None:
        if self.d_s != self.d_t:
            raise ConfigError(f"d_s ({self.d_s}) must equal d_t ({self.d_t})")
        if self.d_s < 1:
            raise ConfigError("embedding dimensions must be positive")
        if self.hops < 1:
            raise ConfigError("hops must be >= 1")
        if not 0 < self.lambda_decay < 1:
            raise ConfigError("lambda_decay must lie in (0, 1)")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if any(a < 0 for a in self.alphas) or not any(a > 0 for a in self.alphas):
            raise ConfigError("alphas must be non-negative with at least one positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.embed_mode not in EMBED_MODES:
            raise ConfigError(f"embed_mode must be one of {EMBED_MODES}")
        if self.init_std <= 0:
            raise ConfigError("init_std must be positive")
        if self.max_row_entries is not None and self.max_row_entries < 1:
            raise ConfigError("max_row_entries must be positive")
        from .text import NONLINEARITIES

        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"nonlinearity must be one of {sorted(NONLINEARITIES)}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

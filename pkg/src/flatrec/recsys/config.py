from __future__ import annotations

from dataclasses import asdict, dataclass, replace

BIASEDMF = "biasedmf"
SVDPP = "svdpp"
USERKNN = "userknn"
ITEMKNN = "itemknn"
ALGORITHMS = (BIASEDMF, SVDPP, USERKNN, ITEMKNN)

_ALIASES = {
    "biasedmf": BIASEDMF,
    "mf": BIASEDMF,
    "svdpp": SVDPP,
    "svd++": SVDPP,
    "userknn": USERKNN,
    "itemknn": ITEMKNN,
}


class ConfigError(ValueError):
    pass


def parse_algorithm(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}") from None


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters shared by every model; fields a model does not use are ignored."""

    algorithm: str = BIASEDMF
    factors: int = 10
    iterations: int = 30
    learning_rate: float = 0.01
    reg_bias: float = 0.01
    reg_factors: float = 0.01
    neighbors: int = 50
    seed: int = 0
    init_scale: float = 0.1
    learning_rate_implicit: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", parse_algorithm(self.algorithm))

    def validate(self) -> "ModelConfig":
        if self.algorithm in (BIASEDMF, SVDPP):
            if self.factors < 1:
                raise ConfigError("factors must be >= 1")
            if self.iterations < 1:
                raise ConfigError("iterations must be >= 1")
            if self.learning_rate <= 0:
                raise ConfigError("learning_rate must be > 0")
            if self.learning_rate_implicit is not None and self.learning_rate_implicit < 0:
                raise ConfigError("learning_rate_implicit must be >= 0")
            if self.reg_bias < 0 or self.reg_factors < 0:
                raise ConfigError("regularisation must be >= 0")
            if self.init_scale < 0:
                raise ConfigError("init_scale must be >= 0")
        elif self.neighbors < 1:
            raise ConfigError("neighbors must be >= 1")
        return self

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def label(self) -> str:
        if self.algorithm in (USERKNN, ITEMKNN):
            return f"{self.algorithm}(k={self.neighbors})"
        return (
            f"{self.algorithm}(f={self.factors},it={self.iterations},lr={self.learning_rate:g},"
            f"rb={self.reg_bias:g},rf={self.reg_factors:g},seed={self.seed})"
        )

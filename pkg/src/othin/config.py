"""Engine configuration shared by the tree, the engine, the service and the CLI."""

import json
import math
from dataclasses import asdict, dataclass, fields


@dataclass
class EngineConfig:
    """Knobs for one thinning engine instance.

    tau, tol, gamma and noise_var may be left unset (None); the engine
    resolves them from the training sample when the initial model is fit:
    tau from a high quantile of training scores, tol from the 90th score
    percentile rescaled to the cumulative-error steady state, gamma as
    0.1 * tol and noise_var as the residual-eigenvalue estimate.
    """

    alpha: float = 0.9
    tau: float | None = None
    tol: float | None = None
    gamma: float | None = None
    rank: int = 10
    noise_var: float | None = None
    k_max: int = 32
    subsample_rate: float = 1.0
    seed: int = 0
    init_depth: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tau is not None and math.isnan(self.tau):
            raise ValueError("tau must not be NaN")
        if self.tol is not None and not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.rank < 1:
            raise ValueError(f"rank must be at least 1, got {self.rank}")
        if self.noise_var is not None and not self.noise_var > 0:
            raise ValueError(f"noise_var must be positive, got {self.noise_var}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be at least 1, got {self.k_max}")
        if not 0.0 < self.subsample_rate <= 1.0:
            raise ValueError(
                f"subsample_rate must lie in (0, 1], got {self.subsample_rate}"
            )
        if self.init_depth < 0:
            raise ValueError(f"init_depth must be non-negative, got {self.init_depth}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

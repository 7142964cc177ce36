"""Per-run records shared by every algorithm."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["PhaseRecord", "RunMetrics"]


@dataclass
class PhaseRecord:
    phase: int
    T_l: int          # nominal phase length
    rounds: int       # rounds actually played (the last phase may be cut by the horizon)
    U_l: int          # participants
    H_l: int          # batches scheduled
    actions: int      # distinct actions, i.e. scalars sent per participant
    active: int       # active-set size at phase start
    cost: int
    sigma_n: float = 0.0

    def as_dict(self):
        return asdict(self)


@dataclass
class RunMetrics:
    algorithm: str
    actions: np.ndarray       # action index played at each round
    inst_regret: np.ndarray
    phases: list[PhaseRecord]
    wall_clock: float
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.actions)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def total_regret(self) -> float:
        return float(np.sum(self.inst_regret))

    @property
    def total_cost(self) -> int:
        return int(sum(p.cost for p in self.phases))

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "T": self.T,
            "total_regret": self.total_regret,
            "total_cost": self.total_cost,
            "wall_clock": self.wall_clock,
            **self.extra,
        }

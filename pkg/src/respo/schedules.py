"""Step-size schedules for the four learning timescales.

Timescale 1 drives the critics, 2 the policy, 3 the REF and 4 the multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POLYNOMIAL = "polynomial"
LINEAR = "linear"


@dataclass(frozen=True)
class Schedule:
    """``c / (1 + k / k0)^rho`` (polynomial) or ``c * max(0, 1 - k / K)`` (linear)."""

    law: str = POLYNOMIAL
    c: float = 1.0
    rho: float = 1.0
    K: int = 1
    k0: float = 1.0

    def __post_init__(self):
        if self.law not in (POLYNOMIAL, LINEAR):
            raise ValueError(f"unknown schedule law {self.law!r}")
        if self.c <= 0:
            raise ValueError("schedule constant must be positive")
        if self.law == LINEAR and self.K < 1:
            raise ValueError("linear decay needs K >= 1")
        if self.k0 <= 0:
            raise ValueError("k0 must be positive")

    def __call__(self, k):
        k = np.asarray(k, dtype=np.float64)
        if np.any(k < 0):
            raise ValueError("k must be non-negative")
        if self.law == POLYNOMIAL:
            out = self.c / (1.0 + k / self.k0) ** self.rho
        else:
            out = self.c * np.maximum(0.0, 1.0 - k / self.K)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScheduleSet:
    critic: Schedule = field(default_factory=lambda: Schedule(rho=0.55))
    policy: Schedule = field(default_factory=lambda: Schedule(rho=0.65))
    ref: Schedule = field(default_factory=lambda: Schedule(rho=0.80))
    multiplier: Schedule = field(default_factory=lambda: Schedule(rho=1.00))

    def __getitem__(self, i: int) -> Schedule:
        return (self.critic, self.policy, self.ref, self.multiplier)[i - 1]

    @property
    def practical(self) -> bool:
        return all(self[i].law == LINEAR for i in range(1, 5))

    def table(self, ks) -> np.ndarray:
        """``[len(ks), 4]`` array of step sizes."""
        ks = np.asarray(ks, dtype=np.float64)
        return np.stack([np.atleast_1d(self[i](ks)) for i in range(1, 5)], axis=1)

    def violations(self) -> list[str]:
        """Assumption A1 problems for polynomial sets (empty when satisfied).

        Checked from the exponents: each rho in (0.5, 1] gives a divergent sum with
        a convergent sum of squares, and strictly increasing rho makes every
        timescale o() of the previous one.
        """
        problems = []
        scheds = [self[i] for i in range(1, 5)]
        if any(s.law != POLYNOMIAL for s in scheds):
            if not self.practical:
                problems.append("mixed schedule laws")
            return problems
        for i, s in enumerate(scheds, 1):
            if not 0.5 < s.rho <= 1.0:
                problems.append(f"rho{i}={s.rho} outside (0.5, 1]")
        for i in range(1, 4):
            if not scheds[i - 1].rho < scheds[i].rho:
                problems.append(f"rho{i}={scheds[i - 1].rho} !< rho{i + 1}={scheds[i].rho}")
        return problems

    def satisfies_a1(self) -> bool:
        return not self.violations() and not self.practical


def zeta(schedules: ScheduleSet, i: int, k) -> float:
    """Step size of timescale ``i`` (1..4) at iteration ``k``."""
    if i not in (1, 2, 3, 4):
        raise ValueError("timescale index must be 1..4")
    return schedules[i](k)


def polynomial_set(c=(1.0, 1.0, 1.0, 1.0), rho=(0.55, 0.65, 0.80, 1.00), k0: float = 1.0) -> ScheduleSet:
    return ScheduleSet(*(Schedule(POLYNOMIAL, float(ci), float(r), k0=k0) for ci, r in zip(c, rho)))


def practical_set(K: int, c=(1e-3, 3e-4, 1e-4, 5e-5)) -> ScheduleSet:
    """Linear decays to zero over ``K`` iterations (the large-scale preset)."""
    return ScheduleSet(*(Schedule(LINEAR, float(ci), K=int(K)) for ci in c))

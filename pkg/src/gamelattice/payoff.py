"""Lower/upper discounted payoffs on piecewise-constant grid paths.

Prices here are discounted.  A payoff is evaluated at grid time ``k*dt`` from
the current price and a running statistic that summarises the prefix
``P_0, ..., P_{k-1}``:

* ``russian``: accrued running maximum ``max(M, max_{i<k} e^{r(i+1)dt} P_i)``.
  Segment ``i`` has fully elapsed by time ``k*dt`` so it accrues to its right
  endpoint; the live price accrues only to ``k*dt``.
* ``asian``: left-endpoint integral ``sum_{i<k} e^{r i dt} P_i dt`` of the
  accrued price; the payoff is the discounted running average.
* ``put`` / ``call``: no statistic.

The upper payoff is always ``lower + delta * price``.

All evaluation functions accept numpy arrays as well as scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError

KINDS = ("russian", "put", "call", "asian")


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    delta: float
    r: float
    M: float | None = None
    K: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"payoff kind must be one of {KINDS}, got {self.kind!r}", "kind")
        if not (isinstance(self.delta, (int, float)) and math.isfinite(self.delta)) or self.delta < 0:
            raise ConfigError("delta must be a finite non-negative number", "delta")
        if self.kind == "russian" and (self.M is None or not self.M > 0):
            raise ConfigError("russian payoff needs a positive floor M", "M")
        if self.kind in ("put", "call") and (self.K is None or not self.K > 0):
            raise ConfigError(f"{self.kind} payoff needs a positive strike K", "K")

    @classmethod
    def russian(cls, M: float, delta: float, r: float) -> "PayoffSpec":
        return cls("russian", delta=delta, r=r, M=M)

    @classmethod
    def put(cls, K: float, delta: float, r: float) -> "PayoffSpec":
        return cls("put", delta=delta, r=r, K=K)

    @classmethod
    def call(cls, K: float, delta: float, r: float) -> "PayoffSpec":
        return cls("call", delta=delta, r=r, K=K)

    @classmethod
    def asian(cls, delta: float, r: float) -> "PayoffSpec":
        return cls("asian", delta=delta, r=r)

    def replace(self, **changes) -> "PayoffSpec":
        fields = dict(kind=self.kind, delta=self.delta, r=self.r, M=self.M, K=self.K)
        fields.update(changes)
        return PayoffSpec(**fields)

    @property
    def has_statistic(self) -> bool:
        return self.kind in ("russian", "asian")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "delta": self.delta}
        if self.M is not None:
            out["M"] = self.M
        if self.K is not None:
            out["K"] = self.K
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any], r: float) -> "PayoffSpec":
        if not isinstance(data, dict):
            raise ConfigError("payoff must be a JSON object", "payoff")
        if "kind" not in data:
            raise ConfigError("payoff is missing 'kind'", "kind")
        if "delta" not in data:
            raise ConfigError("payoff is missing 'delta'", "delta")
        kind = data["kind"]
        return cls(kind=kind, delta=data["delta"], r=r, M=data.get("M"), K=data.get("K"))


def statistic_init(spec: PayoffSpec):
    if spec.kind == "russian":
        return spec.M
    if spec.kind == "asian":
        return 0.0
    return None


def statistic_step(spec: PayoffSpec, stat, k: int, price, dt: float):
    """Fold the price of segment ``k`` into the statistic once it has elapsed."""
    if spec.kind == "russian":
        return np.maximum(stat, math.exp(spec.r * (k + 1) * dt) * price)
    if spec.kind == "asian":
        return stat + price * math.exp(spec.r * k * dt) * dt
    return stat


def eval_lower(spec: PayoffSpec, k: int, stat, price, dt: float):
    """Discounted exercise payoff at time ``k*dt``."""
    growth = math.exp(spec.r * k * dt)
    disc = math.exp(-spec.r * k * dt)
    if spec.kind == "russian":
        return disc * np.maximum(stat, growth * price)
    if spec.kind == "put":
        return disc * np.maximum(spec.K - growth * price, 0.0)
    if spec.kind == "call":
        return disc * np.maximum(growth * price - spec.K, 0.0)
    if k == 0:
        return price * 1.0
    return disc * stat / (k * dt)


def eval_upper(spec: PayoffSpec, k: int, stat, price, dt: float):
    """Discounted cancellation payoff: lower payoff plus ``delta * price``."""
    return eval_lower(spec, k, stat, price, dt) + spec.delta * price


def path_payoffs(spec: PayoffSpec, prices, dt: float):
    """Lower and upper payoffs along whole paths.

    ``prices`` has shape ``(..., n+1)``; returns two arrays of the same shape
    with the payoff at every grid time.
    """
    prices = np.asarray(prices, dtype=float)
    lower = np.empty_like(prices)
    stat = statistic_init(spec)
    if stat is not None:
        stat = np.full(prices.shape[:-1], stat, dtype=float)
    for k in range(prices.shape[-1]):
        lower[..., k] = eval_lower(spec, k, stat, prices[..., k], dt)
        stat = statistic_step(spec, stat, k, prices[..., k], dt)
    return lower, lower + spec.delta * prices

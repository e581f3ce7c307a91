"""Merton model parameters and the n-step discrete approximation.

The discrete model moves the discounted log-price by ``+-a`` (a Rademacher
step with ``a = sigma * sqrt(T/n)``) and, independently, adds a log-jump
``y_j`` with probability ``jump_prob * q_j``.  Branch probabilities are
calibrated so the discounted price is an exact one-step martingale.
"""

from __future__ import annotations

import json
import math
import operator
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .errors import ConfigError, StepTooCoarse

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class JumpLaw:
    """Finite-support law of the log jump multiplier ``y = ln(1 + U)``.

    ``atoms`` is a tuple of ``(y_j, q_j)`` pairs.
    """

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(y), float(q)) for y, q in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ConfigError("jump law needs at least one atom", "jump_law")
        for y, q in atoms:
            if not math.isfinite(y):
                raise ConfigError(f"jump log-size {y} is not finite", "jump_law")
            if not q > 0.0:
                raise ConfigError(f"jump atom probability {q} must be positive", "jump_law")
        total = math.fsum(q for _, q in atoms)
        if abs(total - 1.0) > _PROB_TOL:
            raise ConfigError(f"jump atom probabilities sum to {total!r}, not 1", "jump_law")

    @classmethod
    def point(cls, u: float) -> "JumpLaw":
        """Single jump of relative size ``u`` (multiplier ``1 + u``)."""
        return cls(((math.log1p(u), 1.0),))

    @classmethod
    def from_relative(cls, sizes: Sequence[float], probs: Sequence[float]) -> "JumpLaw":
        return cls(tuple((math.log1p(u), q) for u, q in zip(sizes, probs)))

    @property
    def log_sizes(self) -> tuple[float, ...]:
        return tuple(y for y, _ in self.atoms)

    @property
    def probs(self) -> tuple[float, ...]:
        return tuple(q for _, q in self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def to_json(self) -> list[list[float]]:
        return [[y, q] for y, q in self.atoms]

    @classmethod
    def from_json(cls, data: Iterable[Sequence[float]]) -> "JumpLaw":
        try:
            atoms = tuple((float(y), float(q)) for y, q in data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"jump_law must be a list of [y, q] pairs: {exc}", "jump_law") from None
        return cls(atoms)


NO_JUMPS = JumpLaw(((0.0, 1.0),))


@dataclass(frozen=True)
class MertonParams:
    """Continuous Merton model, all prices discounted.

    The drift ``-lambda * E[U]`` is implied by the martingale condition and
    is not stored.
    """

    s0: float
    sigma: float
    r: float
    lam: float
    T: float
    jump_law: JumpLaw = NO_JUMPS

    def __post_init__(self):
        for name in ("s0", "sigma", "r", "lam", "T"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"{_json_name(name)} must be a finite number, got {v!r}", _json_name(name))
            object.__setattr__(self, name, float(v))
        if self.s0 <= 0:
            raise ConfigError("s0 must be positive", "s0")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive", "sigma")
        if self.r <= 0:
            raise ConfigError("r must be positive", "r")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative", "lambda")
        if self.T <= 0:
            raise ConfigError("T must be positive", "T")

    def replace(self, **changes) -> "MertonParams":
        fields = dict(s0=self.s0, sigma=self.sigma, r=self.r, lam=self.lam, T=self.T, jump_law=self.jump_law)
        fields.update(changes)
        return MertonParams(**fields)

    def to_json(self) -> dict[str, Any]:
        return {
            "s0": self.s0,
            "sigma": self.sigma,
            "r": self.r,
            "lambda": self.lam,
            "T": self.T,
            "jump_law": self.jump_law.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "MertonParams":
        if not isinstance(data, dict):
            raise ConfigError("model must be a JSON object", "model")
        for key in ("s0", "sigma", "r", "lambda", "T"):
            if key not in data:
                raise ConfigError(f"model is missing required field '{key}'", key)
        law = JumpLaw.from_json(data["jump_law"]) if "jump_law" in data else NO_JUMPS
        return cls(
            s0=data["s0"],
            sigma=data["sigma"],
            r=data["r"],
            lam=data["lambda"],
            T=data["T"],
            jump_law=law,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _json_name(attr: str) -> str:
    return "lambda" if attr == "lam" else attr


@dataclass(frozen=True)
class StepParams:
    n: int
    dt: float
    a: float
    p_up: float
    jump_prob: float


def mean_jump(jump_law: JumpLaw) -> float:
    """Mean relative jump size ``E[U] = sum q_j (e^{y_j} - 1)``."""
    return math.fsum(q * math.expm1(y) for y, q in jump_law.atoms)


def _raw_step(params: MertonParams, n: int, legacy_target: bool) -> StepParams:
    dt = params.T / n
    a = params.sigma * math.sqrt(dt)
    jump_prob = params.lam * dt
    eu = mean_jump(params.jump_law)
    if legacy_target:
        mu = -params.lam * eu
        denom = n + mu * params.lam * params.T
    else:
        denom = n + params.lam * params.T * eu
    target = n / denom if denom > 0 else math.inf
    # e^a - e^-a = 2 sinh(a) avoids cancellation for tiny a
    p_up = (target - math.exp(-a)) / (2.0 * math.sinh(a))
    return StepParams(n=n, dt=dt, a=a, p_up=p_up, jump_prob=jump_prob)


def _is_valid(step: StepParams) -> bool:
    return 0.0 <= step.p_up <= 1.0 and 0.0 <= step.jump_prob <= 1.0


def _min_valid_n(params: MertonParams, n: int, legacy_target: bool) -> int | None:
    hi = max(2 * n, 2)
    while not _is_valid(_raw_step(params, hi, legacy_target)):
        hi *= 2
        if hi > 1 << 40:
            return None
    lo = n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _is_valid(_raw_step(params, mid, legacy_target)):
            hi = mid
        else:
            lo = mid
    return hi


def step_params(params: MertonParams, n: int, *, legacy_target: bool = False) -> StepParams:
    """Calibrate the n-step model.

    ``p_up`` solves ``p e^a + (1-p) e^{-a} = n / (n + lambda T E[U])`` so that
    the one-step mean factor is exactly one.  ``legacy_target=True`` uses the
    target ``n / (n + mu lambda T)`` with ``mu = -lambda E[U]`` instead; it is
    kept for comparison only and is not a martingale when ``lambda > 0``.

    Raises:
        StepTooCoarse: if ``p_up`` or ``jump_prob`` falls outside [0, 1].
    """
    try:
        n = operator.index(n)
    except TypeError:
        raise ConfigError(f"step count must be an integer, got {n!r}", "n") from None
    if n < 1:
        raise ConfigError(f"step count must be positive, got {n}", "n")
    step = _raw_step(params, n, legacy_target)
    if not _is_valid(step):
        best = _min_valid_n(params, n, legacy_target)
        hint = f"; smallest valid n is {best}" if best is not None else ""
        raise StepTooCoarse(
            f"n={n} gives p_up={step.p_up:.6g}, jump_prob={step.jump_prob:.6g}{hint}",
            n=n,
            min_valid_n=best,
        )
    return step


def one_step_mean_factor(step: StepParams, jump_law: JumpLaw) -> float:
    """``E[e^{a rho}] * E[(1+U)^xi]``; equals one for calibrated steps."""
    diffusion = step.p_up * math.exp(step.a) + (1.0 - step.p_up) * math.exp(-step.a)
    return diffusion * (1.0 + step.jump_prob * mean_jump(jump_law))


def branch_table(step: StepParams, jump_law: JumpLaw) -> tuple[list[int], list[int], list[float]]:
    """One-step branches in canonical order.

    Returns parallel lists ``(rho, atom, prob)`` where ``atom`` is -1 for the
    no-jump branch.  Order: rho=+1 then rho=-1; within each, no jump first,
    then atoms in law order.  Zero-probability branches are dropped.
    """
    rhos, atoms, probs = [], [], []
    for rho, pr in ((1, step.p_up), (-1, 1.0 - step.p_up)):
        cand = [(-1, pr * (1.0 - step.jump_prob))]
        cand += [(j, pr * step.jump_prob * q) for j, (_, q) in enumerate(jump_law.atoms)]
        for atom, prob in cand:
            if prob > 0.0:
                rhos.append(rho)
                atoms.append(atom)
                probs.append(prob)
    return rhos, atoms, probs

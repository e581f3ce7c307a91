"""Value sequences across step counts and their diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import __version__
from .dynkin import solve
from .errors import CapacityError, ConfigError, InsufficientRows, StepTooCoarse
from .lattice import EXACT_N_CAP, build_lattice
from .model import MertonParams, branch_table, step_params
from .oracle import McConfig, _gather, _mean_se, _workers, simulate_block
from .payoff import PayoffSpec

CSV_COLUMNS = ["n", "value", "delta_prev", "engine", "states", "wall_ms"]
BOUND_COLUMNS = ["term1", "term2", "term3_proxy", "total"]


@dataclass
class Row:
    n: int
    value: float | None
    engine: str
    states: int
    wall_ms: float
    lower_root: float | None = None
    upper_root: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)
    error: str | None = None
    bound: dict[str, float] | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ConvergenceTable:
    rows: list[Row]

    def __post_init__(self):
        self.rows.sort(key=lambda r: r.n)

    def values(self) -> dict[int, float]:
        return {r.n: r.value for r in self.rows if r.ok}

    def deltas(self) -> dict[int, float]:
        """``|V_{2n} - V_n|`` for every ``n`` whose double is also present."""
        vals = self.values()
        return {n: abs(vals[2 * n] - vals[n]) for n in sorted(vals) if 2 * n in vals}

    def delta_prev(self) -> list[float | None]:
        out, prev = [], None
        for r in self.rows:
            if not r.ok:
                out.append(None)
                continue
            out.append(None if prev is None else abs(r.value - prev))
            prev = r.value
        return out

    def to_csv(self, timing: bool = False, bounds: bool = False) -> str:
        """CSV text; ``wall_ms`` is left blank unless ``timing`` is set."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = CSV_COLUMNS + (BOUND_COLUMNS if bounds else [])
        writer.writerow(cols)
        for r, dp in zip(self.rows, self.delta_prev()):
            line = [
                r.n,
                _fmt(r.value) if r.ok else "",
                _fmt(dp),
                r.engine if r.ok else f"{r.engine}:failed",
                r.states,
                f"{r.wall_ms:.1f}" if timing else "",
            ]
            if bounds:
                line += [_fmt((r.bound or {}).get(c)) for c in BOUND_COLUMNS]
            writer.writerow(line)
        return buf.getvalue()

    def to_json(self, timing: bool = False) -> dict[str, Any]:
        rows = []
        for r, dp in zip(self.rows, self.delta_prev()):
            rows.append(
                {
                    "n": r.n,
                    "value": r.value,
                    "delta_prev": dp,
                    "engine": r.engine,
                    "states": r.states,
                    "wall_ms": r.wall_ms if timing else None,
                    "lower_root": r.lower_root,
                    "upper_root": r.upper_root,
                    "meta": r.meta,
                    "error": r.error,
                    "bound": r.bound,
                }
            )
        return {"rows": rows, "deltas": {str(k): v for k, v in self.deltas().items()}}


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _engine_name(engine: str, n: int, exact_cap: int) -> str:
    if engine == "auto":
        return "exact" if n <= exact_cap else "quantized"
    return engine


def _row(params, payoff, n, engine, q, eps_tail, exact_cap) -> Row:
    name = _engine_name(engine, n, exact_cap)
    t0 = time.perf_counter()
    try:
        lattice = build_lattice(params, payoff, n, name, q=q, eps_tail=eps_tail, exact_cap=exact_cap)
        V = float(solve(lattice).V)
    except (StepTooCoarse, CapacityError) as exc:
        return Row(n, None, name, 0, 1e3 * (time.perf_counter() - t0), error=f"{type(exc).__name__}: {exc}")
    meta = {}
    if "grid" in lattice.meta:
        g = lattice.meta["grid"]
        meta = {"q": g["q"], "h": g["h"], "j_max": g["j_max"], "tail_mass": g["tail_mass"],
                "jump_residuals": list(g["residuals"])}
    root = lattice.layers[0]
    return Row(
        n=n,
        value=V,
        engine=name,
        states=lattice.num_nodes,
        wall_ms=1e3 * (time.perf_counter() - t0),
        lower_root=float(root.lower[0]),
        upper_root=float(root.upper[0]),
        meta=meta,
    )


def value_sequence(
    params: MertonParams,
    payoff: PayoffSpec,
    n_list: Sequence[int],
    engine: str = "auto",
    *,
    q: int = 4,
    eps_tail: float = 1e-9,
    exact_cap: int = EXACT_N_CAP,
) -> ConvergenceTable:
    """One row per ``n``.  Engine failures mark the row instead of aborting."""
    if engine not in ("auto", "exact", "quantized"):
        raise ConfigError(f"unknown engine {engine!r}", "engine")
    ns = sorted(set(int(n) for n in n_list))
    if not ns or ns[0] < 1:
        raise ConfigError("n_list must hold positive step counts", "n_list")
    workers = _workers()
    args = [(params, payoff, n, engine, q, eps_tail, exact_cap) for n in ns]
    if workers == 1:
        rows = [_row(*a) for a in args]
    else:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda a: _row(*a), args))
    return ConvergenceTable(rows)


@dataclass
class Extrapolation:
    limit: float
    ratios: list[float | None]
    exact: bool


def richardson(table: ConvergenceTable) -> Extrapolation:
    """Aitken extrapolation over the last three rows at doubling ``n``.

    ``ratios`` holds ``Delta_{2n} / Delta_n`` along the doubling chain
    (``None`` where ``Delta_n`` is zero).  ``exact`` is set when the last
    differences vanish and the sequence has already settled.

    Raises:
        InsufficientRows: if fewer than three rows form a doubling chain.
    """
    vals = table.values()
    chain: list[int] = []
    for n in sorted(vals, reverse=True):
        if not chain or chain[-1] == 2 * n:
            chain.append(n)
    chain.reverse()
    if len(chain) < 3:
        raise InsufficientRows(f"need three doubling rows, found chain {chain}")
    v = [vals[n] for n in chain]
    d = [v[i + 1] - v[i] for i in range(len(v) - 1)]
    ratios = [None if d[i] == 0 else abs(d[i + 1]) / abs(d[i]) for i in range(len(d) - 1)]
    d1, d2 = d[-2], d[-1]
    if d2 == 0:
        return Extrapolation(v[-1], ratios, True)
    denom = d2 - d1
    if denom == 0:
        return Extrapolation(v[-1], ratios, False)
    return Extrapolation(v[-1] - d2 * d2 / denom, ratios, False)


def grid_gap_bound(params: MertonParams, payoff: PayoffSpec, n: int, cfg: McConfig = McConfig()) -> dict[str, Any]:
    """Computable terms of the bound on ``|V_n - Gamma(S^(n))|``.

    ``term1 = 2 (rT/n) (M + E sup_t e^{rt} S_t)`` and
    ``term2 = 2 e^{rT} (rT/n) E sup_t S_t`` use Monte Carlo expectations over
    the piecewise-constant path.  The supremum over stopping times in the
    last term is replaced by deterministic times:
    ``term3_proxy = (delta + 2 e^{rT}) max_k E|S_{k+1} - S_k|``, which is
    ``S_0 E|R - 1|`` for the one-step ratio ``R`` and is exact (no
    simulation).  The proxy is heuristic and flagged as such.
    """
    step = step_params(params, n)
    r, T = payoff.r, params.T
    dt = step.dt
    growth = np.exp(r * dt * np.arange(1, n + 2))
    growth[-1] = math.exp(r * T)

    def sups(b, size):
        prices = simulate_block(params, n, cfg, b, size).prices
        accrued = prices * growth[None, :]  # segment k accrues to its right end
        return np.stack([accrued.max(axis=1), prices.max(axis=1)], axis=1)

    samples = _gather(sups, cfg)
    e_acc, se_acc = _mean_se(samples[:, 0], cfg.antithetic)
    e_sup, se_sup = _mean_se(samples[:, 1], cfg.antithetic)
    M = payoff.M if payoff.M is not None else 0.0
    term1 = 2 * r * T / n * (M + e_acc)
    term2 = 2 * math.exp(r * T) * r * T / n * e_sup
    rhos, atoms, probs = branch_table(step, params.jump_law)
    ys = params.jump_law.log_sizes
    abs_move = math.fsum(
        p * abs(math.expm1(rho * step.a + (ys[at] if at >= 0 else 0.0))) for rho, at, p in zip(rhos, atoms, probs)
    )
    term3 = (payoff.delta + 2 * math.exp(r * T)) * params.s0 * abs_move
    return {
        "n": n,
        "term1": term1,
        "term2": term2,
        "term3_proxy": term3,
        "total": term1 + term2 + term3,
        "term3_heuristic": True,
        "e_sup_accrued": e_acc,
        "e_sup_accrued_se": se_acc,
        "e_sup": e_sup,
        "e_sup_se": se_sup,
        "mc": cfg.to_json(),
    }


def table_metadata(params: MertonParams, payoff: PayoffSpec, engine: str, extra: dict | None = None) -> dict[str, Any]:
    meta = {"version": __version__, "model": params.to_json(), "payoff": payoff.to_json(), "engine": engine}
    meta.update(extra or {})
    return meta

"""Lattice construction for the n-step Merton approximation.

Two engines build a :class:`~gamelattice.dynkin.FilteredLattice`:

``build_exact``
    Memoised forward enumeration over exact keys.  A node is identified by
    its net Rademacher displacement, per-atom jump counts and an exact key
    for the payoff statistic.  For the Russian payoff the running maximum is
    keyed by the prefix term that attains it, written as integer
    coefficients on ``r*dt``, ``a`` and the ``y_j``.  Exact but
    combinatorial, so limited to small ``n``.

``build_quantized``
    Markov lattice over integer indices on a log grid of step ``h = a/q``:
    log-price index, statistic index (rounded up) and total jump count.
    Jump sizes are snapped to the grid and jump counts are capped at
    ``j_max``; the capped jump mass is sent down the no-jump branch.

Children of engine-built nodes are stored in the canonical branch order of
:func:`gamelattice.model.branch_table`, so a simulated ``(rho, atom)`` draw
maps to a child column directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .dynkin import FilteredLattice, Layer
from .errors import ConfigError, ExactCapExceeded, GridOverflow
from .model import JumpLaw, MertonParams, StepParams, branch_table, step_params
from .payoff import PayoffSpec, eval_lower, statistic_init, statistic_step

EXACT_N_CAP = 14
EXACT_STATE_BUDGET = 2_000_000
QUANT_STATE_BUDGET = 40_000_000
NO_STAT = np.iinfo(np.int64).min // 4
_ROUND_TOL = 1e-9


# --------------------------------------------------------------------------
# exact engine
# --------------------------------------------------------------------------


def _atom_slots(law: JumpLaw) -> tuple[list[int], list[float]]:
    """Map atoms to slots of distinct non-zero log sizes (``-1``: no effect)."""
    slots, sizes = [], []
    for y, _ in law.atoms:
        if y == 0.0:
            slots.append(-1)
        elif y in sizes:
            slots.append(sizes.index(y))
        else:
            slots.append(len(sizes))
            sizes.append(y)
    return slots, sizes


def build_exact(
    params: MertonParams,
    payoff: PayoffSpec,
    n: int,
    *,
    n_cap: int = EXACT_N_CAP,
    state_budget: int = EXACT_STATE_BUDGET,
) -> FilteredLattice:
    """Exact recombining lattice for small ``n``.

    Raises:
        StepTooCoarse: from :func:`step_params`.
        ExactCapExceeded: if ``n > n_cap`` or the state count passes the budget.
    """
    step = step_params(params, n)
    if n > n_cap:
        raise ExactCapExceeded(f"exact engine is capped at n={n_cap}, got n={n}")
    rhos, atoms, probs = branch_table(step, params.jump_law)
    slots, sizes = _atom_slots(params.jump_law)
    a, dt, s0, r = step.a, step.dt, params.s0, payoff.r
    M = payoff.M
    zero_counts = (0,) * len(sizes)

    def log_price(i: int, counts: tuple[int, ...]) -> float:
        return i * a + math.fsum(c * y for c, y in zip(counts, sizes))

    def russian_term(key) -> float:
        kk, i, counts = key
        return s0 * math.exp(kk * r * dt + log_price(i, counts))

    def child_stat(k, i, counts, st, stat_val, price, parent_index):
        if payoff.kind == "russian":
            kk = k + 1 if r != 0.0 else 0
            cand = (kk, i, counts)
            cand_val = russian_term(cand)
            cur_val = M if st is None else stat_val
            if cand_val > cur_val:
                return cand, cand_val
            return st, stat_val
        if payoff.kind == "asian":
            return parent_index, statistic_step(payoff, stat_val, k, price, dt)
        return None, None

    # per layer: keys list, key -> index, stat values, prices
    keys = [(0, zero_counts, None)]
    stat_vals = [statistic_init(payoff)]
    prices = [s0 * math.exp(log_price(0, zero_counts))]
    layers: list[Layer] = []
    total = 1
    for k in range(n + 1):
        lower = np.array([eval_lower(payoff, k, sv, pr, dt) for sv, pr in zip(stat_vals, prices)], dtype=float)
        price_arr = np.array(prices, dtype=float)
        upper = lower + payoff.delta * price_arr
        key_arr = {
            "i": np.array([key[0] for key in keys], dtype=np.int64),
            "jumps": np.array([sum(key[1]) for key in keys], dtype=np.int64),
            "stat": np.array([np.nan if sv is None else sv for sv in stat_vals], dtype=float),
        }
        if k == n:
            layers.append(Layer(lower, upper, price=price_arr, keys=key_arr))
            break
        nxt_index: dict = {}
        nxt_keys, nxt_stats, nxt_prices = [], [], []
        children = np.empty((len(keys), len(rhos)), dtype=np.int64)
        for idx, (i, counts, st) in enumerate(keys):
            price = prices[idx]
            new_st, new_val = child_stat(k, i, counts, st, stat_vals[idx], price, idx)
            for b, (rho, atom) in enumerate(zip(rhos, atoms)):
                ci = i + rho
                cc = counts
                if atom >= 0 and slots[atom] >= 0:
                    lst = list(counts)
                    lst[slots[atom]] += 1
                    cc = tuple(lst)
                ckey = (ci, cc, new_st)
                j = nxt_index.get(ckey)
                if j is None:
                    j = len(nxt_keys)
                    nxt_index[ckey] = j
                    nxt_keys.append(ckey)
                    nxt_stats.append(new_val if payoff.has_statistic else None)
                    nxt_prices.append(s0 * math.exp(log_price(ci, cc)))
                children[idx, b] = j
        total += len(nxt_keys)
        if total > state_budget:
            raise ExactCapExceeded(f"exact engine state count passed the budget of {state_budget} at step {k + 1}")
        pr = np.broadcast_to(np.array(probs, dtype=float), children.shape)
        layers.append(Layer(lower, upper, children, pr, price=price_arr, keys=key_arr))
        keys, stat_vals, prices = nxt_keys, nxt_stats, nxt_prices

    meta = {
        "engine": "exact",
        "n": n,
        "states": sum(len(layer) for layer in layers),
        "step": asdict(step),
        "branches": list(zip(rhos, atoms)),
        "branch_probs": list(probs),
    }
    return FilteredLattice(layers, meta=meta)


# --------------------------------------------------------------------------
# quantized engine
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantGrid:
    a: float
    q: int
    h: float
    jump_steps: tuple[int, ...]
    residuals: tuple[float, ...]
    j_max: int
    eps_tail: float
    tail_mass: float

    def to_json(self) -> dict:
        return asdict(self)


def binomial_tail(n: int, p: float, c: int) -> float:
    """``P(Binomial(n, p) > c)`` summed term by term from the upper side."""
    if p <= 0.0 or c >= n:
        return 0.0
    if p >= 1.0:
        return 1.0
    lp, lq = math.log(p), math.log1p(-p)
    terms = [math.exp(math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1) + j * lp + (n - j) * lq)
             for j in range(c + 1, n + 1)]
    return math.fsum(terms)


def make_quant_grid(
    params: MertonParams,
    n: int,
    q: int = 4,
    eps_tail: float = 1e-9,
    j_max: int | None = None,
) -> QuantGrid:
    """Grid for :func:`build_quantized`.

    ``j_max`` defaults to the smallest jump count whose binomial tail is at
    most ``eps_tail``.
    """
    if not isinstance(q, int) or q < 1:
        raise ConfigError(f"quantization factor q must be an integer >= 1, got {q!r}", "q")
    if not eps_tail >= 0:
        raise ConfigError("eps_tail must be non-negative", "eps_tail")
    step = step_params(params, n)
    h = step.a / q
    jump_steps = tuple(int(math.floor(y / h + 0.5)) for y in params.jump_law.log_sizes)
    residuals = tuple(y - s * h for y, s in zip(params.jump_law.log_sizes, jump_steps))
    if j_max is None:
        j_max = 0
        if step.jump_prob > 0:
            while j_max < n and binomial_tail(n, step.jump_prob, j_max) > eps_tail:
                j_max += 1
    tail = binomial_tail(n, step.jump_prob, j_max)
    return QuantGrid(step.a, q, h, jump_steps, residuals, int(j_max), float(eps_tail), tail)


def _quant_stat_value(payoff: PayoffSpec, s: np.ndarray, s0: float, h: float, dt: float) -> np.ndarray | None:
    none = s == NO_STAT
    if payoff.kind == "russian":
        return np.where(none, payoff.M, np.maximum(payoff.M, s0 * np.exp(np.where(none, 0, s) * h)))
    if payoff.kind == "asian":
        return np.where(none, 0.0, s0 * dt * np.exp(np.where(none, 0, s) * h))
    return None


def _quant_next_stat(payoff: PayoffSpec, k: int, p: np.ndarray, s: np.ndarray, s0: float, h: float, dt: float) -> np.ndarray:
    if payoff.kind == "russian":
        off = math.ceil(payoff.r * (k + 1) * dt / h - _ROUND_TOL)
        cand = p + off
        out = np.where(s == NO_STAT, cand, np.maximum(s, cand))
        out[s0 * np.exp(out * h) <= payoff.M] = NO_STAT
        return out
    if payoff.kind == "asian":
        integral = np.where(s == NO_STAT, 0.0, np.exp(np.where(s == NO_STAT, 0, s) * h))
        integral = integral + np.exp(p * h + payoff.r * k * dt)
        return np.ceil(np.log(integral) / h - _ROUND_TOL).astype(np.int64)
    return s


def build_quantized(
    params: MertonParams,
    payoff: PayoffSpec,
    n: int,
    grid: QuantGrid | None = None,
    *,
    state_budget: int = QUANT_STATE_BUDGET,
) -> FilteredLattice:
    """Quantized Markov lattice over ``(price index, statistic index, jumps)``.

    Raises:
        StepTooCoarse: from :func:`step_params`.
        GridOverflow: if the state count passes ``state_budget``.
    """
    step = step_params(params, n)
    if grid is None:
        grid = make_quant_grid(params, n)
    if grid.a != step.a:
        raise ConfigError("grid was built for a different step size", "grid")
    rhos, atoms, probs = branch_table(step, params.jump_law)
    nb = len(rhos)
    q, h, dt, s0 = grid.q, grid.h, step.dt, params.s0
    move = np.array([rho * q + (grid.jump_steps[at] if at >= 0 else 0) for rho, at in zip(rhos, atoms)], dtype=np.int64)
    jumped = np.array([at >= 0 for at in atoms], dtype=bool)
    # capped nodes send jump branches down the no-jump branch of the same rho
    fallback = np.array([rhos.index(rho) if at >= 0 else b for b, (rho, at) in enumerate(zip(rhos, atoms))])
    move_capped = move[fallback]
    jumped_capped = jumped[fallback]
    branch_p = np.array(probs, dtype=float)

    p = np.zeros(1, dtype=np.int64)
    s = np.full(1, NO_STAT, dtype=np.int64)
    c = np.zeros(1, dtype=np.int64)
    reach = np.ones(1)
    layers: list[Layer] = []
    reach_mass, truncated = [1.0], [0.0]
    total = 1
    for k in range(n + 1):
        price = s0 * np.exp(p * h)
        stat_val = _quant_stat_value(payoff, s, s0, h, dt)
        lower = np.asarray(eval_lower(payoff, k, stat_val, price, dt), dtype=float)
        upper = lower + payoff.delta * price
        keys = {"p": p, "s": s, "jumps": c, "stat": stat_val if stat_val is not None else np.full(len(p), np.nan)}
        if k == n:
            layers.append(Layer(lower, upper, price=price, keys=keys))
            break
        capped = (c >= grid.j_max)[:, None]
        mv = np.where(capped, move_capped[None, :], move[None, :])
        jp = np.where(capped, jumped_capped[None, :], jumped[None, :])
        cp = p[:, None] + mv
        cc = c[:, None] + jp
        cs = np.broadcast_to(_quant_next_stat(payoff, k, p, s, s0, h, dt)[:, None], cp.shape)
        flat_p, flat_s, flat_c = cp.ravel(), cs.ravel(), cc.ravel()
        order = np.lexsort((flat_c, flat_s, flat_p))
        sp, ss, sc = flat_p[order], flat_s[order], flat_c[order]
        new = np.ones(len(order), dtype=bool)
        new[1:] = (sp[1:] != sp[:-1]) | (ss[1:] != ss[:-1]) | (sc[1:] != sc[:-1])
        rank = np.cumsum(new) - 1
        inverse = np.empty(len(order), dtype=np.int64)
        inverse[order] = rank
        children = inverse.reshape(cp.shape).astype(np.int32 if len(order) < 2**31 else np.int64)
        m_next = int(rank[-1]) + 1
        total += m_next
        if total > state_budget:
            raise GridOverflow(f"quantized engine reached {total} states by step {k + 1} (budget {state_budget})")
        weights = reach[:, None] * branch_p[None, :]
        # mass whose true jump count has passed j_max by step k + 1
        truncated.append(binomial_tail(k + 1, step.jump_prob, grid.j_max))
        reach = np.bincount(children.ravel(), weights=weights.ravel(), minlength=m_next)
        reach_mass.append(float(reach.sum()))
        pr = np.broadcast_to(branch_p, children.shape)
        layers.append(Layer(lower, upper, children, pr, price=price, keys=keys))
        p, s, c = sp[new], ss[new], sc[new]

    meta = {
        "engine": "quantized",
        "n": n,
        "states": total,
        "step": asdict(step),
        "grid": grid.to_json(),
        "branches": list(zip(rhos, atoms)),
        "branch_probs": list(probs),
        "reach_mass": reach_mass,
        "truncated_mass": truncated,
    }
    return FilteredLattice(layers, meta=meta)


def build_lattice(
    params: MertonParams,
    payoff: PayoffSpec,
    n: int,
    engine: str = "auto",
    *,
    q: int = 4,
    eps_tail: float = 1e-9,
    exact_cap: int = EXACT_N_CAP,
) -> FilteredLattice:
    """Dispatch to an engine; ``auto`` picks exact for ``n <= exact_cap``."""
    if engine == "auto":
        engine = "exact" if n <= exact_cap else "quantized"
    if engine == "exact":
        return build_exact(params, payoff, n, n_cap=exact_cap)
    if engine == "quantized":
        return build_quantized(params, payoff, n, make_quant_grid(params, n, q=q, eps_tail=eps_tail))
    raise ConfigError(f"unknown engine {engine!r}", "engine")

"""Independent checks of the backward-induction solver.

* :func:`enumerate_game_value` evaluates every pair of pure stopping rules
  on a small lattice and returns both the inf-sup and the sup-inf.
* :func:`snell_value` is a node-by-node American backward induction.
* :func:`mc_price` and :func:`saddle_check` simulate the discrete model and
  play stopping rules read off a lattice.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .dynkin import DPResult, FilteredLattice, StoppingRule, extract_strategies, from_nodes
from .errors import ConfigError, EnumerationCapExceeded
from .model import MertonParams, step_params
from .payoff import PayoffSpec, path_payoffs

ENUMERATION_CAP = 2**20
BLOCK = 4096
WORKERS_ENV = "GAMELATTICE_WORKERS"
# float noise allowance for zero-variance estimates
_ABS_SLACK = 1e-12


# --------------------------------------------------------------------------
# exhaustive enumeration
# --------------------------------------------------------------------------


def _paths(lattice: FilteredLattice) -> tuple[list[tuple[int, ...]], list]:
    paths, probs = [], []
    n = lattice.n

    def walk(k, path, prob):
        if k == n:
            paths.append(tuple(path))
            probs.append(prob)
            return
        layer = lattice.layers[k]
        i = path[-1]
        for c, p in zip(layer.children[i], layer.probs[i]):
            if c >= 0:
                walk(k + 1, path + [int(c)], prob * p)

    walk(0, [0], 1)
    return paths, probs


def stopping_rules(lattice: FilteredLattice, cap: int | None = None) -> list[list[frozenset]]:
    """All effectively distinct pure stopping rules.

    A rule is a list of per-layer stop sets, restricted to nodes that can be
    reached without having stopped earlier.
    """
    n = lattice.n
    rules: list[list[frozenset]] = []

    def rec(k, alive: tuple[int, ...], acc):
        if k == n:
            rules.append(acc + [frozenset(alive)])
            if cap is not None and len(rules) > cap:
                raise EnumerationCapExceeded(f"more than {cap} stopping rules")
            return
        layer = lattice.layers[k]
        for mask in range(1 << len(alive)):
            stop = frozenset(a for b, a in enumerate(alive) if mask >> b & 1)
            nxt = sorted({int(c) for a in alive if a not in stop for c in layer.children[a] if c >= 0})
            rec(k + 1, tuple(nxt), acc + [stop])

    rec(0, (0,), [])
    return rules


def _stop_times(rules, paths) -> np.ndarray:
    out = np.empty((len(rules), len(paths)), dtype=np.int64)
    for a, rule in enumerate(rules):
        for j, path in enumerate(paths):
            out[a, j] = next(k for k, i in enumerate(path) if i in rule[k])
    return out


def enumerate_game_value(lattice: FilteredLattice, kernel: str = "J", cap: int = ENUMERATION_CAP):
    """Brute-force ``(inf_sigma sup_tau, sup_tau inf_sigma)`` of ``E[kernel]``.

    Kernel ``H`` pays the upper payoff at ``sigma`` if ``sigma < tau`` and the
    lower payoff at ``tau`` otherwise.  Kernel ``J`` pays the lower payoff
    when both stop at the horizon, the upper payoff at ``sigma`` if
    ``sigma <= tau`` before the horizon, and the lower payoff at ``tau`` if
    ``tau < sigma``.

    Raises:
        EnumerationCapExceeded: if the number of rule pairs exceeds ``cap``.
    """
    if kernel not in ("H", "J"):
        raise ConfigError(f"kernel must be 'H' or 'J', got {kernel!r}", "kernel")
    rules = stopping_rules(lattice, cap=math.isqrt(cap))
    if len(rules) ** 2 > cap:
        raise EnumerationCapExceeded(f"{len(rules)}^2 rule pairs exceed the cap {cap}")
    paths, probs = _paths(lattice)
    n = lattice.n
    X = np.array([[lattice.layers[k].upper[i] for k, i in enumerate(p)] for p in paths])
    Y = np.array([[lattice.layers[k].lower[i] for k, i in enumerate(p)] for p in paths])
    w = np.array(probs)
    times = _stop_times(rules, paths)
    cols = np.arange(len(paths))
    Xs = X[cols, times]  # (rules, paths): upper payoff at the rule's stop
    Ys = Y[cols, times]
    values = np.empty((len(rules), len(rules)), dtype=X.dtype)
    for a in range(len(rules)):
        sig = times[a][None, :]
        tau = times
        if kernel == "H":
            pay = np.where(sig < tau, Xs[a][None, :], Ys)
        else:
            pay = np.where(
                np.minimum(sig, tau) == n,
                Y[:, n][None, :],
                np.where(sig <= tau, Xs[a][None, :], Ys),
            )
        values[a] = (pay * w[None, :]).sum(axis=1)
    infsup = values.max(axis=1).min()
    supinf = values.min(axis=0).max()
    return infsup, supinf


def snell_value(lattice: FilteredLattice):
    """American value of the lower payoff, one node at a time."""
    n = lattice.n
    nxt = [v for v in lattice.layers[n].lower]
    for k in range(n - 1, -1, -1):
        layer = lattice.layers[k]
        cur = []
        for i in range(len(layer)):
            cont = 0
            for c, p in zip(layer.children[i], layer.probs[i]):
                if c >= 0:
                    cont = cont + p * nxt[c]
            cur.append(max(layer.lower[i], cont))
        nxt = cur
    return nxt[0]


def random_lattice(rng: np.random.Generator, n_max: int = 3, branching_max: int = 3, recombine: bool | None = None,
                   rational: bool = False) -> FilteredLattice:
    """Random lattice with ``0 <= lower <= upper`` for oracle tests.

    Trees by default; with ``recombine`` children are drawn from a shared
    next layer so the graph is a DAG.
    """
    from fractions import Fraction

    n = int(rng.integers(0, n_max + 1))
    if recombine is None:
        recombine = bool(rng.integers(0, 2))

    def num(x):
        return Fraction(int(round(x * 64)), 64) if rational else float(x)

    nodes = [{"id": 0, "k": 0}]
    layer_ids = [[0]]
    next_id = 1
    for k in range(n):
        cur = layer_ids[-1]
        if recombine:
            width = int(rng.integers(1, branching_max * len(cur) + 1))
            width = min(width, 6)
            nxt = list(range(next_id, next_id + width))
            next_id += width
            for nid in cur:
                b = int(rng.integers(1, min(branching_max, width) + 1))
                kids = sorted(rng.choice(width, size=b, replace=False).tolist())
                nodes[nid]["kids"] = [nxt[j] for j in kids]
        else:
            nxt = []
            for nid in cur:
                b = int(rng.integers(1, branching_max + 1))
                kids = list(range(next_id, next_id + b))
                next_id += b
                nodes[nid]["kids"] = kids
                nxt.extend(kids)
        for nid in nxt:
            nodes.append({"id": nid, "k": k + 1})
        layer_ids.append(nxt)
    for node in nodes:
        lo = num(rng.uniform(0, 2))
        node["lower"] = lo
        node["upper"] = lo + num(rng.uniform(0, 1)) * int(rng.integers(0, 4) > 0)
        kids = node.pop("kids", [])
        if kids:
            if rational:
                raw = [Fraction(int(x), 1) for x in rng.integers(1, 9, size=len(kids))]
                tot = sum(raw)
                ps = [x / tot for x in raw]
            else:
                raw = rng.uniform(0.05, 1.0, size=len(kids))
                ps = (raw / raw.sum()).tolist()
                ps[-1] = 1.0 - math.fsum(ps[:-1])
            node["children"] = [[c, p] for c, p in zip(kids, ps)]
    return from_nodes(nodes, 0, dtype=object if rational else float)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    seed: int = 20240601
    antithetic: bool = False

    def __post_init__(self):
        if not isinstance(self.n_paths, int) or self.n_paths < 100:
            raise ConfigError("mc.n_paths must be an integer >= 100", "n_paths")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("mc.seed must be an unsigned 64-bit integer", "seed")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError("antithetic sampling needs an even n_paths", "n_paths")

    def to_json(self) -> dict:
        return {"n_paths": self.n_paths, "seed": self.seed, "antithetic": self.antithetic}

    @classmethod
    def from_json(cls, data: dict | None, seed: int | None = None) -> "McConfig":
        data = dict(data or {})
        if seed is not None:
            data["seed"] = seed
        unknown = set(data) - {"n_paths", "seed", "antithetic"}
        if unknown:
            raise ConfigError(f"unknown mc field(s): {sorted(unknown)}", sorted(unknown)[0])
        return cls(**data)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _block_uniforms(seed: int, block: int, size: int, n: int, antithetic: bool) -> np.ndarray:
    # Philox is counter based: block b of a run always sees the same stream
    bitgen = np.random.Philox(key=np.array([seed, block], dtype=np.uint64))
    rng = np.random.Generator(bitgen)
    if antithetic:
        half = rng.random((size // 2, n, 3))
        return np.concatenate([half, 1.0 - half])
    return rng.random((size, n, 3))


@dataclass
class PathBlock:
    prices: np.ndarray  # (paths, n+1) discounted prices
    rho: np.ndarray  # (paths, n) +-1
    atom: np.ndarray  # (paths, n) jump atom index or -1


def simulate_block(params: MertonParams, n: int, cfg: McConfig, block: int, size: int) -> PathBlock:
    """Simulate ``size`` paths of the n-step model for one RNG block."""
    step = step_params(params, n)
    u = _block_uniforms(cfg.seed, block, size, n, cfg.antithetic)
    rho = np.where(u[..., 0] < step.p_up, 1, -1).astype(np.int8)
    jump = u[..., 1] < step.jump_prob
    cum_q = np.cumsum(params.jump_law.probs)
    which = np.minimum(np.searchsorted(cum_q, u[..., 2], side="right"), len(cum_q) - 1)
    atom = np.where(jump, which, -1)
    ys = np.asarray(params.jump_law.log_sizes)
    incr = step.a * rho + np.where(jump, ys[which], 0.0)
    logp = np.zeros((size, n + 1))
    np.cumsum(incr, axis=1, out=logp[:, 1:])
    return PathBlock(params.s0 * np.exp(logp), rho, atom)


def _blocks(cfg: McConfig) -> list[tuple[int, int]]:
    out, left, b = [], cfg.n_paths, 0
    while left > 0:
        size = min(BLOCK, left)
        out.append((b, size))
        left -= size
        b += 1
    return out


def _map_blocks(fn, cfg: McConfig) -> list:
    blocks = _blocks(cfg)
    workers = _workers()
    if workers == 1:
        return [fn(b, size) for b, size in blocks]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda bs: fn(*bs), blocks))


def _mean_se(samples: np.ndarray, antithetic: bool) -> tuple[float, float]:
    """Mean and standard error; antithetic halves are averaged pairwise."""
    x = np.asarray(samples, dtype=float)
    if antithetic:
        half = len(x) // 2
        x = 0.5 * (x[:half] + x[half:])
    shift = x[0]
    d = x - shift
    mean = shift + math.fsum(d) / len(d)
    if len(d) < 2:
        return float(mean), 0.0
    var = math.fsum((d - (mean - shift)) ** 2) / (len(d) - 1)
    return float(mean), math.sqrt(var / len(d))


def _gather(fn, cfg: McConfig) -> np.ndarray:
    """Run ``fn(block_index, size)`` over all blocks, preserving block order.

    With antithetic sampling every block holds its own pairs, so the pairs
    are re-ordered into one first half and one second half.
    """
    parts = _map_blocks(fn, cfg)
    if not cfg.antithetic:
        return np.concatenate(parts)
    firsts = [p[: len(p) // 2] for p in parts]
    seconds = [p[len(p) // 2:] for p in parts]
    return np.concatenate(firsts + seconds)


def mc_terminal_mean(params: MertonParams, n: int, cfg: McConfig) -> tuple[float, float]:
    """Estimate ``E[S_T]`` of the discrete model (martingale check)."""
    samples = _gather(lambda b, size: simulate_block(params, n, cfg, b, size).prices[:, -1], cfg)
    return _mean_se(samples, cfg.antithetic)


def _branch_lookup(lattice: FilteredLattice, n_atoms: int) -> np.ndarray:
    """Table ``[rho_index, atom + 1] -> child column`` (rho_index 0 is +1)."""
    table = np.full((2, n_atoms + 1), -1, dtype=np.int64)
    for col, (rho, atom) in enumerate(lattice.meta["branches"]):
        table[0 if rho == 1 else 1, atom + 1] = col
    return table


def node_paths(lattice: FilteredLattice, block: PathBlock, n_atoms: int) -> np.ndarray:
    """Lattice node index at every step of every simulated path."""
    if "branches" not in lattice.meta:
        raise ConfigError("Monte Carlo needs an engine-built lattice", "lattice")
    lookup = _branch_lookup(lattice, n_atoms)
    cols = lookup[np.where(block.rho == 1, 0, 1), block.atom + 1]
    if np.any(cols < 0):
        raise AssertionError("simulated a branch the lattice does not carry")
    idx = np.zeros((len(cols), lattice.n + 1), dtype=np.int64)
    for k in range(lattice.n):
        idx[:, k + 1] = lattice.layers[k].children[idx[:, k], cols[:, k]]
    return idx


def _first_true(flags: np.ndarray) -> np.ndarray:
    return np.argmax(flags, axis=1)


def kernel_payoff(kernel: str, sigma: np.ndarray, tau: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Per-path payoff of a stopping pair; ``lower``/``upper`` are ``(paths, n+1)``."""
    rows = np.arange(len(sigma))
    n = lower.shape[1] - 1
    x_sig = upper[rows, sigma]
    y_tau = lower[rows, tau]
    if kernel == "H":
        return np.where(sigma < tau, x_sig, y_tau)
    if kernel == "J":
        both_end = np.minimum(sigma, tau) == n
        return np.where(both_end, lower[:, n], np.where(sigma <= tau, x_sig, y_tau))
    raise ConfigError(f"kernel must be 'H' or 'J', got {kernel!r}", "kernel")


def _rule_times(rule: StoppingRule, idx: np.ndarray) -> np.ndarray:
    flags = np.stack([rule.flags[k][idx[:, k]] for k in range(idx.shape[1])], axis=1)
    return _first_true(flags)


def mc_price(
    params: MertonParams,
    payoff: PayoffSpec,
    lattice: FilteredLattice,
    rules: tuple[StoppingRule, StoppingRule],
    kernel: str = "H",
    cfg: McConfig = McConfig(),
) -> tuple[float, float]:
    """Monte Carlo value of playing ``rules = (seller_rule, buyer_rule)``.

    Paths are simulated from the model itself; the rules are read at the
    lattice node each path visits and payoffs come from the simulated path.
    """
    return _mc_many(params, payoff, lattice, [rules], kernel, cfg)[0]


def _mc_many(params, payoff, lattice, pairs, kernel, cfg) -> list[tuple[float, float]]:
    n = lattice.n
    dt = params.T / n
    n_atoms = len(params.jump_law)

    def run(b, size):
        block = simulate_block(params, n, cfg, b, size)
        idx = node_paths(lattice, block, n_atoms)
        lower, upper = path_payoffs(payoff, block.prices, dt)
        out = np.empty((len(pairs), size))
        for j, (seller, buyer) in enumerate(pairs):
            out[j] = kernel_payoff(kernel, _rule_times(seller, idx), _rule_times(buyer, idx), lower, upper)
        return out

    parts = _map_blocks(run, cfg)
    results = []
    for j in range(len(pairs)):
        rows = [p[j] for p in parts]
        if cfg.antithetic:
            rows = [r[: len(r) // 2] for r in rows] + [r[len(r) // 2:] for r in rows]
        results.append(_mean_se(np.concatenate(rows), cfg.antithetic))
    return results


def random_deviation(rule: StoppingRule, rng: np.random.Generator, flip: float = 0.3) -> StoppingRule:
    """Flip every node's stop flag with probability ``flip``; terminals stay stopped."""
    flags = [np.where(rng.random(len(f)) < flip, ~f, f) for f in rule.flags]
    return StoppingRule(flags)


def saddle_check(
    params: MertonParams,
    payoff: PayoffSpec,
    lattice: FilteredLattice,
    result: DPResult,
    cfg: McConfig = McConfig(),
    n_deviations: int = 20,
    kernel: str = "H",
    include_optimal: bool = True,
) -> dict:
    """Check the extracted strategies against random adapted deviations.

    For each buyer deviation ``tau'`` the estimate of ``E[k(sigma*, tau')]``
    must not exceed ``V + 3 SE``; for each seller deviation ``sigma'`` the
    estimate of ``E[k(sigma', tau*)]`` must not fall below ``V - 3 SE``.
    Deviations come from a Philox stream keyed by ``(seed, 2**63)``.
    """
    V = float(result.V)
    buyer, seller = extract_strategies(result)
    rng = np.random.Generator(np.random.Philox(key=np.array([cfg.seed, 2**63], dtype=np.uint64)))
    pairs, labels = [], []
    if include_optimal:
        pairs.append((seller, buyer))
        labels.append(("optimal", -1))
    for j in range(n_deviations):
        pairs.append((seller, random_deviation(buyer, rng)))
        labels.append(("buyer", j))
    for j in range(n_deviations):
        pairs.append((random_deviation(seller, rng), buyer))
        labels.append(("seller", j))
    estimates = _mc_many(params, payoff, lattice, pairs, kernel, cfg)
    entries = []
    violations = 0
    for (side, j), (est, se) in zip(labels, estimates):
        slack = 3 * se + _ABS_SLACK
        if side == "buyer":
            ok = est <= V + slack
        elif side == "seller":
            ok = est >= V - slack
        else:
            ok = abs(est - V) <= slack
        violations += not ok
        entries.append({"side": side, "index": j, "estimate": est, "std_error": se, "ok": bool(ok)})
    return {
        "value": V,
        "kernel": kernel,
        "n": lattice.n,
        "mc": cfg.to_json(),
        "deviations": entries,
        "violations": violations,
        "passed": violations == 0,
    }

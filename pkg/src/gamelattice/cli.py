"""Command-line front end.

    gamelattice price    --config run.json [--tree lattice.json]
    gamelattice converge --config run.json [--timing]
    gamelattice verify   --config run.json
    gamelattice bound    --config run.json

Exit codes: 0 ok, 1 configuration error, 2 engine capacity error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .converge import ConvergenceTable, grid_gap_bound, table_metadata, value_sequence
from .dynkin import FilteredLattice, reach_probabilities, solve
from .errors import CapacityError, ConfigError, MalformedLattice, StepTooCoarse
from .lattice import EXACT_N_CAP, build_exact, build_lattice
from .model import MertonParams, one_step_mean_factor, step_params
from .oracle import McConfig, enumerate_game_value, mc_terminal_mean, random_lattice, saddle_check
from .payoff import PayoffSpec

COMMANDS = ("price", "converge", "verify", "bound")
DEFAULT_SEED = 20240601
EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_VERIFY = 0, 1, 2, 3


@dataclass
class EngineSpec:
    kind: str = "auto"
    q: int = 4
    eps_tail: float = 1e-9
    exact_cap: int = EXACT_N_CAP

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "q": self.q, "eps_tail": self.eps_tail, "exact_cap": self.exact_cap}

    @classmethod
    def from_json(cls, data) -> "EngineSpec":
        if data is None:
            return cls()
        if isinstance(data, str):
            data = {"kind": data}
        if not isinstance(data, dict):
            raise ConfigError("engine must be a string or an object", "engine")
        unknown = set(data) - {"kind", "q", "eps_tail", "exact_cap"}
        if unknown:
            raise ConfigError(f"unknown engine field(s) {sorted(unknown)}", "engine")
        spec = cls(**data)
        if spec.kind not in ("auto", "exact", "quantized"):
            raise ConfigError(f"engine kind must be auto, exact or quantized, got {spec.kind!r}", "engine")
        return spec


@dataclass
class RunConfig:
    command: str
    model: MertonParams
    payoff: PayoffSpec
    n: int | None = None
    n_list: list[int] | None = None
    engine: EngineSpec = field(default_factory=EngineSpec)
    mc: McConfig = field(default_factory=lambda: McConfig(seed=DEFAULT_SEED))
    output: str | None = None
    verify: dict[str, Any] = field(default_factory=dict)
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_json(cls, data: dict[str, Any], command: str | None = None, seed: int | None = None,
                  engine: str | None = None, out: str | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", "config")
        cmd = command or data.get("command")
        if cmd is None:
            raise ConfigError("no command given on the command line or in the config", "command")
        if cmd not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}, got {cmd!r}", "command")
        if "model" not in data:
            raise ConfigError("config is missing 'model'", "model")
        model = MertonParams.from_json(data["model"])
        if "payoff" not in data:
            raise ConfigError("config is missing 'payoff'", "payoff")
        payoff = PayoffSpec.from_json(data["payoff"], r=model.r)
        eng = EngineSpec.from_json(data.get("engine"))
        if engine is not None:
            eng = EngineSpec(kind=engine, q=eng.q, eps_tail=eng.eps_tail, exact_cap=eng.exact_cap)
            EngineSpec.from_json(eng.to_json())
        mc_data = dict(data.get("mc") or {})
        mc_data.setdefault("seed", DEFAULT_SEED)
        mc = McConfig.from_json(mc_data, seed=seed)
        n = data.get("n")
        n_list = data.get("n_list")
        if n is not None and (not isinstance(n, int) or isinstance(n, bool) or n < 1):
            raise ConfigError("n must be a positive integer", "n")
        if n_list is not None:
            if not isinstance(n_list, list) or not all(isinstance(x, int) and x >= 1 for x in n_list):
                raise ConfigError("n_list must be a list of positive integers", "n_list")
        if cmd in ("price",) and n is None:
            raise ConfigError(f"command '{cmd}' needs 'n'", "n")
        if cmd in ("converge",) and not n_list:
            raise ConfigError("command 'converge' needs 'n_list'", "n_list")
        if cmd == "bound" and n is None and not n_list:
            raise ConfigError("command 'bound' needs 'n' or 'n_list'", "n")
        output = out if out is not None else _output_path(data.get("output"))
        verify = data.get("verify") or {}
        if not isinstance(verify, dict):
            raise ConfigError("verify must be an object", "verify")
        return cls(cmd, model, payoff, n, n_list, eng, mc, output, verify, data)

    def echo(self) -> dict[str, Any]:
        """Normalised config, with the seed that was actually used."""
        out = {
            "command": self.command,
            "model": self.model.to_json(),
            "payoff": self.payoff.to_json(),
            "engine": self.engine.to_json(),
            "mc": self.mc.to_json(),
        }
        if self.n is not None:
            out["n"] = self.n
        if self.n_list is not None:
            out["n_list"] = list(self.n_list)
        if self.verify:
            out["verify"] = self.verify
        return out


def _output_path(spec) -> str | None:
    if spec is None or spec == "stdout":
        return None
    if isinstance(spec, str):
        return spec
    if isinstance(spec, dict):
        for key in ("csv", "json"):
            if key in spec:
                return spec[key]
    raise ConfigError("output must be 'stdout', a path, or {'csv'|'json': path}", "output")


def _header(cfg: RunConfig) -> dict[str, Any]:
    return {"version": __version__, "seed": cfg.mc.seed, "config": cfg.echo()}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------- commands


def _stop_summary(result) -> dict[str, Any]:
    lattice = result.lattice
    reach = reach_probabilities(lattice)
    layers = []
    for k in range(lattice.n + 1):
        b, s = result.buyer_stop[k], result.seller_cancel[k]
        layers.append(
            {
                "k": k,
                "nodes": len(b),
                "buyer_stop_nodes": int(b.sum()),
                "seller_cancel_nodes": int(s.sum()),
                "buyer_stop_mass": float(reach[k][b].sum()),
                "seller_cancel_mass": float(reach[k][s].sum()),
            }
        )
    if result.seller_cancel[0][0]:
        root = "cancel"
    elif result.buyer_stop[0][0]:
        root = "exercise"
    else:
        root = "continue"
    return {"root_action": root, "layers": layers}


def cmd_price(cfg: RunConfig, tree: str | None = None, dump: str | None = None) -> tuple[int, str]:
    if tree is not None:
        lattice = FilteredLattice.from_json(json.loads(Path(tree).read_text()))
        engine = "tree"
    else:
        e = cfg.engine
        lattice = build_lattice(cfg.model, cfg.payoff, cfg.n, e.kind, q=e.q, eps_tail=e.eps_tail, exact_cap=e.exact_cap)
        engine = lattice.meta["engine"]
    result = solve(lattice)
    if dump is not None:
        Path(dump).write_text(lattice.dumps())
    out = _header(cfg)
    out.update(
        {
            "command": "price",
            "n": lattice.n,
            "engine": engine,
            "states": lattice.num_nodes,
            "value": float(result.V),
            "lower_root": float(lattice.layers[0].lower[0]),
            "upper_root": float(lattice.layers[0].upper[0]),
            "stop_region": _stop_summary(result),
        }
    )
    if "grid" in lattice.meta:
        out["grid"] = lattice.meta["grid"]
    return EXIT_OK, _dumps(out)


def cmd_converge(cfg: RunConfig, timing: bool = False, fmt: str = "csv") -> tuple[int, str]:
    e = cfg.engine
    table = value_sequence(cfg.model, cfg.payoff, cfg.n_list, e.kind, q=e.q, eps_tail=e.eps_tail, exact_cap=e.exact_cap)
    if fmt == "json":
        out = _header(cfg)
        out.update({"command": "converge", "table": table.to_json(timing)})
        return EXIT_OK, _dumps(out)
    header = _header(cfg)
    lines = [f"# {key}: {json.dumps(header[key], sort_keys=True)}" for key in ("version", "seed", "config")]
    return EXIT_OK, "\n".join(lines) + "\n" + table.to_csv(timing=timing)


def cmd_bound(cfg: RunConfig, fmt: str = "json") -> tuple[int, str]:
    ns = cfg.n_list or [cfg.n]
    rows = [grid_gap_bound(cfg.model, cfg.payoff, n, cfg.mc) for n in sorted(set(ns))]
    if fmt == "csv":
        lines = [f"# version: {json.dumps(__version__)}", f"# seed: {cfg.mc.seed}",
                 f"# config: {json.dumps(cfg.echo(), sort_keys=True)}",
                 "n,term1,term2,term3_proxy,total,term3_heuristic"]
        for r in rows:
            lines.append(",".join([str(r["n"])] + [repr(r[c]) for c in ("term1", "term2", "term3_proxy", "total")] + ["true"]))
        return EXIT_OK, "\n".join(lines) + "\n"
    out = _header(cfg)
    out.update({"command": "bound", "rows": rows})
    return EXIT_OK, _dumps(out)


def cmd_verify(cfg: RunConfig) -> tuple[int, str]:
    v = cfg.verify
    n_lattices = int(v.get("lattices", 200))
    n_max = int(v.get("n_max", 3))
    branching = int(v.get("branching", 3))
    n_saddle = int(v.get("n", cfg.n if cfg.n is not None else 8))
    deviations = int(v.get("deviations", 20))
    checks = []

    rng = np.random.default_rng(np.random.Philox(key=np.array([cfg.mc.seed, 1], dtype=np.uint64)))
    worst = 0.0
    for _ in range(n_lattices):
        lat = random_lattice(rng, n_max=n_max, branching_max=branching)
        V = float(solve(lat).V)
        for kernel in ("H", "J"):
            infsup, supinf = enumerate_game_value(lat, kernel)
            worst = max(worst, abs(infsup - V), abs(supinf - V))
    checks.append({"name": "oracle_equivalence", "lattices": n_lattices, "max_abs_diff": worst, "passed": worst <= 1e-12})

    step = step_params(cfg.model, n_saddle)
    factor = one_step_mean_factor(step, cfg.model.jump_law)
    checks.append({"name": "martingale_identity", "n": n_saddle, "factor": factor, "passed": abs(factor - 1) <= 1e-12})

    mean, se = mc_terminal_mean(cfg.model, n_saddle, cfg.mc)
    checks.append(
        {"name": "mc_terminal_mean", "n": n_saddle, "estimate": mean, "std_error": se, "s0": cfg.model.s0,
         "passed": abs(mean - cfg.model.s0) <= 3 * se}
    )

    lattice = build_exact(cfg.model, cfg.payoff, n_saddle, n_cap=cfg.engine.exact_cap)
    report = saddle_check(cfg.model, cfg.payoff, lattice, solve(lattice), cfg.mc, deviations)
    checks.append({"name": "saddle_check", **report})

    passed = all(c["passed"] for c in checks)
    out = _header(cfg)
    out.update({"command": "verify", "engine": "exact", "passed": passed, "checks": checks})
    return (EXIT_OK if passed else EXIT_VERIFY), _dumps(out)


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gamelattice", description="Game option pricing on Merton lattices.")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="defaults to the config's 'command'")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
    p.add_argument("--engine", help="auto, exact or quantized")
    p.add_argument("--out", help="output path; .csv or .json selects the format")
    p.add_argument("--tree", help="price a lattice stored in FilteredLattice JSON")
    p.add_argument("--dump-lattice", help="write the priced lattice as JSON")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def run(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", "config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", "config") from None
        cfg = RunConfig.from_json(data, args.command, args.seed, args.engine, args.out)
        out_path = cfg.output
        fmt = "json"
        if out_path is not None and out_path.endswith(".csv"):
            fmt = "csv"
        elif out_path is None and cfg.command == "converge":
            fmt = "csv"
        if cfg.command == "price":
            code, text = cmd_price(cfg, args.tree, args.dump_lattice)
        elif cfg.command == "converge":
            code, text = cmd_converge(cfg, args.timing, fmt)
        elif cfg.command == "bound":
            code, text = cmd_bound(cfg, fmt)
        else:
            code, text = cmd_verify(cfg)
    except (ConfigError, StepTooCoarse, MalformedLattice) as exc:
        field_ = getattr(exc, "field", None)
        where = f" [field: {field_}]" if field_ else ""
        print(f"config error{where}: {exc}", file=stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=stderr)
        return EXIT_CAPACITY
    if out_path is None:
        stdout.write(text)
    else:
        Path(out_path).write_text(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

from fractions import Fraction

import numpy as np
import pytest

from gamelattice import MertonParams, PayoffSpec, solve
from gamelattice.dynkin import FilteredLattice, StoppingRule, extract_strategies, from_nodes
from gamelattice.errors import ConfigError, EnumerationCapExceeded
from gamelattice.lattice import build_exact
from gamelattice.oracle import (
    McConfig,
    enumerate_game_value,
    mc_price,
    mc_terminal_mean,
    random_deviation,
    random_lattice,
    saddle_check,
    snell_value,
    stopping_rules,
)


def _one_step():
    return from_nodes(
        [
            {"id": 0, "k": 0, "lower": 1.0, "upper": 1.5, "children": [[1, 0.5], [2, 0.5]]},
            {"id": 1, "k": 1, "lower": 0.8, "upper": 0.8},
            {"id": 2, "k": 1, "lower": 1.6, "upper": 1.6},
        ],
        0,
    )


@pytest.mark.parametrize("kernel", ["H", "J"])
def test_one_step_enumeration(kernel):
    infsup, supinf = enumerate_game_value(_one_step(), kernel)
    assert infsup == pytest.approx(1.2, abs=1e-15)
    assert supinf == pytest.approx(1.2, abs=1e-15)


def test_flat_payoff_lattice():
    rng = np.random.default_rng(5)
    lat = random_lattice(rng, n_max=3)
    data = lat.to_json()
    for nd in data["nodes"]:
        nd["upper"] = nd["lower"]
    flat = FilteredLattice.from_json(data)
    root_psi = flat.layers[0].lower[0]
    for kernel in "HJ":
        assert enumerate_game_value(flat, kernel) == (root_psi, root_psi)


def test_huge_upper_gives_snell():
    rng = np.random.default_rng(8)
    for _ in range(20):
        data = random_lattice(rng, n_max=3).to_json()
        for nd in data["nodes"]:
            nd["upper"] = 1e9
        lat = FilteredLattice.from_json(data)
        infsup, _ = enumerate_game_value(lat, "J")
        assert infsup == pytest.approx(snell_value(lat), abs=1e-9)


def test_randomized_equivalence():
    rng = np.random.default_rng(20240601)
    for _ in range(200):
        lat = random_lattice(rng, n_max=3, branching_max=3)
        V = solve(lat).V
        h = enumerate_game_value(lat, "H")
        j = enumerate_game_value(lat, "J")
        assert abs(h[0] - h[1]) <= 1e-12 and abs(j[0] - j[1]) <= 1e-12
        assert abs(h[0] - j[0]) <= 1e-12
        assert abs(h[0] - V) <= 1e-12


def test_rational_exactness():
    rng = np.random.default_rng(99)
    for _ in range(25):
        lat = random_lattice(rng, n_max=3, rational=True)
        V = solve(lat).V
        assert isinstance(V, Fraction)
        h, j = enumerate_game_value(lat, "H"), enumerate_game_value(lat, "J")
        assert h == (V, V) and j == (V, V)


def test_stopping_rules_single_path():
    lat = from_nodes(
        [
            {"id": 0, "k": 0, "lower": 0.0, "upper": 1.0, "children": [[1, 1.0]]},
            {"id": 1, "k": 1, "lower": 0.0, "upper": 1.0, "children": [[2, 1.0]]},
            {"id": 2, "k": 2, "lower": 0.0, "upper": 1.0},
        ],
        0,
    )
    # stop at 0, at 1, or at the horizon
    assert len(stopping_rules(lat)) == 3


def test_enumeration_cap():
    rng = np.random.default_rng(1)
    lat = max((random_lattice(rng, n_max=3, branching_max=3) for _ in range(30)), key=lambda x: x.num_nodes)
    with pytest.raises(EnumerationCapExceeded):
        enumerate_game_value(lat, "H", cap=4)


def test_bad_kernel():
    with pytest.raises(ConfigError):
        enumerate_game_value(_one_step(), "K")


# ---- Monte Carlo -------------------------------------------------------


def test_mc_constant_payoff(desk_params):
    payoff = PayoffSpec.russian(M=1.2, delta=0.0, r=desk_params.r)
    lat = build_exact(desk_params, payoff, 4)
    stop_now = StoppingRule([np.ones(len(layer), bool) for layer in lat.layers])
    est, se = mc_price(desk_params, payoff, lat, (stop_now, stop_now), "H", McConfig(n_paths=1000))
    assert est == max(1.2, desk_params.s0)
    assert se == 0.0


@pytest.fixture(scope="module")
def crr_put():
    params = MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=0.0, T=1.0)
    payoff = PayoffSpec.put(K=1.1, delta=0.02, r=params.r)
    lat = build_exact(params, payoff, 8)
    return params, payoff, lat, solve(lat)


@pytest.mark.parametrize("kernel", ["H", "J"])
def test_mc_price_matches_dp(crr_put, kernel):
    params, payoff, lat, res = crr_put
    buyer, seller = extract_strategies(res)
    est, se = mc_price(params, payoff, lat, (seller, buyer), kernel, McConfig(n_paths=100_000))
    assert abs(est - res.V) <= 3 * se


def test_martingale_mode(desk_params):
    est, se = mc_terminal_mean(desk_params, 50, McConfig(n_paths=100_000))
    assert abs(est - desk_params.s0) <= 3 * se


def test_mc_reproducible_and_stable(crr_put):
    params, payoff, lat, res = crr_put
    buyer, seller = extract_strategies(res)
    cfg = McConfig(n_paths=20_000, seed=7)
    a = mc_price(params, payoff, lat, (seller, buyer), "H", cfg)
    b = mc_price(params, payoff, lat, (seller, buyer), "H", cfg)
    assert a == b
    c = mc_price(params, payoff, lat, (seller, buyer), "H", McConfig(n_paths=20_000, seed=8))
    assert c != a
    assert abs(a[0] - c[0]) <= 3 * (a[1] + c[1])


def test_mc_workers_do_not_change_result(crr_put, monkeypatch):
    params, payoff, lat, res = crr_put
    buyer, seller = extract_strategies(res)
    cfg = McConfig(n_paths=10_000, seed=3)
    one = mc_price(params, payoff, lat, (seller, buyer), "H", cfg)
    monkeypatch.setenv("GAMELATTICE_WORKERS", "3")
    assert mc_price(params, payoff, lat, (seller, buyer), "H", cfg) == one


def test_antithetic(crr_put):
    params, payoff, lat, res = crr_put
    buyer, seller = extract_strategies(res)
    est, se = mc_price(params, payoff, lat, (seller, buyer), "H", McConfig(n_paths=20_000, antithetic=True))
    assert abs(est - res.V) <= 3 * se
    with pytest.raises(ConfigError):
        McConfig(n_paths=1001, antithetic=True)


def test_mc_config_validation():
    with pytest.raises(ConfigError):
        McConfig(n_paths=10)
    with pytest.raises(ConfigError):
        McConfig(seed=-1)
    with pytest.raises(ConfigError) as info:
        McConfig.from_json({"paths": 100})
    assert info.value.field == "paths"


def test_random_deviation_keeps_terminal_stops():
    rule = StoppingRule([np.zeros(1, bool), np.zeros(3, bool), np.zeros(5, bool)])
    rng = np.random.default_rng(0)
    dev = random_deviation(rule, rng, flip=1.0)
    assert dev.flags[0].all() and dev.flags[-1].all()
    same = random_deviation(rule, rng, flip=0.0)
    assert not same.flags[0].any() and same.flags[-1].all()


def test_saddle_optimal_is_tight(crr_put):
    params, payoff, lat, res = crr_put
    report = saddle_check(params, payoff, lat, res, McConfig(n_paths=20_000), n_deviations=0)
    assert report["passed"] and report["deviations"][0]["side"] == "optimal"


def test_saddle_check_crr_put(crr_put):
    params, payoff, lat, res = crr_put
    report = saddle_check(params, payoff, lat, res, McConfig(n_paths=100_000), n_deviations=20)
    assert report["violations"] == 0
    assert sum(e["side"] == "buyer" for e in report["deviations"]) == 20


def test_saddle_flat_payoff(desk_params):
    payoff = PayoffSpec.russian(M=1.2, delta=0.0, r=desk_params.r)
    lat = build_exact(desk_params, payoff, 3)
    # with psi = phi the optimal seller stops at the root
    res = solve(lat)
    report = saddle_check(desk_params, payoff, lat, res, McConfig(n_paths=1000), n_deviations=5)
    assert report["value"] == pytest.approx(1.2)
    assert report["deviations"][0]["estimate"] == 1.2
    assert all(e["estimate"] == 1.2 for e in report["deviations"] if e["side"] == "buyer")
    assert report["passed"]

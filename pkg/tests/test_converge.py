import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gamelattice import JumpLaw, MertonParams, PayoffSpec, solve
from gamelattice.converge import ConvergenceTable, Row, grid_gap_bound, richardson, value_sequence
from gamelattice.errors import ConfigError, InsufficientRows
from gamelattice.lattice import build_exact, build_lattice
from gamelattice.oracle import McConfig, snell_value


def synthetic(values: dict[int, float]) -> ConvergenceTable:
    return ConvergenceTable([Row(n, v, "exact", 0, 0.0) for n, v in values.items()])


def test_zero_penalty_rows(desk_params):
    payoff = PayoffSpec.russian(M=1.2, delta=0.0, r=desk_params.r)
    table = value_sequence(desk_params, payoff, [4, 8, 16, 20])
    assert all(v == pytest.approx(1.2, abs=1e-15) for v in table.values().values())
    assert [r.engine for r in table.rows] == ["exact", "exact", "quantized", "quantized"]


def test_small_n_match_exact(crr_params):
    payoff = PayoffSpec.put(K=1.1, delta=0.02, r=crr_params.r)
    table = value_sequence(crr_params, payoff, [8, 4])
    assert [r.n for r in table.rows] == [4, 8]
    for r in table.rows:
        assert r.value == solve(build_exact(crr_params, payoff, r.n)).V
        assert r.lower_root <= r.value <= r.upper_root


def test_rows_deterministic(desk_params, desk_russian):
    a = value_sequence(desk_params, desk_russian, [5, 10, 20])
    b = value_sequence(desk_params, desk_russian, [20, 10, 5])
    assert a.to_csv() == b.to_csv()


def test_failed_rows_are_marked(desk_russian):
    params = MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=3.0, T=1.0, jump_law=JumpLaw.point(-0.5))
    table = value_sequence(params, desk_russian, [8, 60], engine="exact")
    failed = [r for r in table.rows if not r.ok]
    assert [r.n for r in failed] == [8, 60]
    assert "StepTooCoarse" in failed[0].error and "ExactCapExceeded" in failed[1].error
    assert "exact:failed" in table.to_csv()


def test_bad_engine(desk_params, desk_russian):
    with pytest.raises(ConfigError):
        value_sequence(desk_params, desk_russian, [4], engine="fast")


def test_csv_columns(desk_params, desk_russian):
    text = value_sequence(desk_params, desk_russian, [4, 8]).to_csv()
    lines = text.splitlines()
    assert lines[0] == "n,value,delta_prev,engine,states,wall_ms"
    assert lines[1].split(",")[2] == "" and lines[1].endswith(",")
    timed = value_sequence(desk_params, desk_russian, [4]).to_csv(timing=True)
    assert timed.splitlines()[1].split(",")[-1] != ""


def test_richardson_constant():
    ex = richardson(synthetic({25: 1.2, 50: 1.2, 100: 1.2, 200: 1.2}))
    assert ex.limit == 1.2 and ex.exact
    assert ex.ratios == [None, None]


def test_richardson_geometric():
    ex = richardson(synthetic({2**k: 1 + 2.0**-k for k in range(2, 7)}))
    assert ex.limit == pytest.approx(1.0, abs=1e-9)
    assert ex.ratios == pytest.approx([0.5, 0.5, 0.5])


def test_richardson_needs_doubling_chain():
    with pytest.raises(InsufficientRows):
        richardson(synthetic({10: 1.0, 20: 1.1, 30: 1.2}))
    with pytest.raises(InsufficientRows):
        richardson(synthetic({10: 1.0, 20: 1.1}))


def test_deltas():
    table = synthetic({10: 1.0, 20: 1.5, 40: 1.75, 30: 9.0})
    assert table.deltas() == {10: 0.5, 20: 0.25}


def test_grid_gap_zero_rate():
    params = MertonParams(s0=1.0, sigma=0.2, r=0.06, lam=0.1, T=1.0)
    payoff = PayoffSpec.russian(M=1.2, delta=0.02, r=0.0)
    b = grid_gap_bound(params, payoff, 20, McConfig(n_paths=2000))
    assert b["term1"] == 0.0 and b["term2"] == 0.0
    assert b["total"] == b["term3_proxy"] > 0
    assert b["term3_heuristic"]


def test_grid_gap_scaling(crr_params):
    payoff = PayoffSpec.russian(M=1.2, delta=0.02, r=crr_params.r)
    cfg = McConfig(n_paths=100_000)
    b50 = grid_gap_bound(crr_params, payoff, 50, cfg)
    b100 = grid_gap_bound(crr_params, payoff, 100, cfg)
    assert b50["term1"] / b100["term1"] == pytest.approx(2.0, rel=0.05)
    assert b50["term2"] / b100["term2"] == pytest.approx(2.0, rel=0.05)


def test_grid_gap_total_decreasing(desk_params, desk_russian):
    cfg = McConfig(n_paths=20_000)
    totals = [grid_gap_bound(desk_params, desk_russian, n, cfg)["total"] for n in (50, 100, 200)]
    assert totals[0] > totals[1] > totals[2]


def test_grid_gap_non_russian(desk_params):
    b = grid_gap_bound(desk_params, PayoffSpec.put(K=1.0, delta=0.02, r=desk_params.r), 10, McConfig(n_paths=1000))
    assert b["total"] > 0


@settings(max_examples=30, deadline=None)
@given(d1=st.floats(0.0, 0.5), d2=st.floats(0.0, 0.5), n=st.sampled_from([6, 20]), K=st.floats(0.8, 1.2))
def test_monotone_in_delta(d1, d2, n, K):
    params = MertonParams(s0=1.0, sigma=0.25, r=0.05, lam=0.3, T=1.0)
    lo, hi = sorted((d1, d2))
    v = [solve(build_lattice(params, PayoffSpec.put(K=K, delta=d, r=0.05), n)).V for d in (lo, hi)]
    assert v[0] <= v[1] + 1e-14


@pytest.mark.parametrize("kind", ["russian", "put"])
def test_american_cap(desk_params, kind):
    mk = {"russian": lambda d: PayoffSpec.russian(M=1.2, delta=d, r=0.06),
          "put": lambda d: PayoffSpec.put(K=1.1, delta=d, r=0.06)}[kind]
    for n in (6, 10):
        lat = build_exact(desk_params, mk(0.02), n)
        snell = snell_value(build_exact(desk_params, mk(1e6), n))
        assert solve(lat).V <= snell + 1e-12
        assert solve(build_exact(desk_params, mk(1e6), n)).V == pytest.approx(snell, abs=1e-12)

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsgd.cluster import (BlockEvent, CostLedger, account_epoch, master_storage, master_storage_stated,
                          n_rounds, plan_rounds, storage_sweep)
from bsgd.projector import build_geometry


def test_record_mult():
    ledger = CostLedger()
    ledger.record_mult(10, 20)
    ledger.record_mult(10, 20, n_in=10, n_out=20)
    snap = ledger.snapshot()
    assert snap["block_mults"] == 2
    assert snap["scalar_ops"] == 400
    assert snap["bytes_master_to_node"] == (20 + 10) * 4
    assert snap["bytes_node_to_master"] == (10 + 20) * 4
    assert snap["node_storage_peak"] == 30


def test_node_budget():
    ledger = CostLedger(node_budget=25)
    ledger.record_mult(10, 15)
    with pytest.raises(ValueError):
        ledger.record_mult(10, 16)


@given(nodes=st.integers(1, 10), n=st.integers(0, 50))
def test_plan_rounds(nodes, n):
    rounds = plan_rounds(nodes, range(n))
    assert [t for r in rounds for t in r] == list(range(n))
    assert all(1 <= len(r) <= nodes for r in rounds)
    assert len(rounds) == n_rounds(nodes, n)


@given(events=st.lists(st.tuples(st.integers(1, 50), st.integers(1, 50), st.booleans()), max_size=30),
       nodes=st.integers(1, 8))
def test_totals_independent_of_rounds(events, nodes):
    evs = [BlockEvent(*e) for e in events]
    flat = account_epoch(CostLedger(), evs).snapshot()
    packed = CostLedger()
    for rnd in plan_rounds(nodes, evs):
        account_epoch(packed, rnd)
    assert packed.snapshot() == flat
    rev = account_epoch(CostLedger(), list(reversed(evs))).snapshot()
    assert rev == flat


def test_master_storage_formulas():
    assert master_storage(4, 2, 1080, 256) == 2 * 1080 + 4 * 256 + 1080 + 256
    assert master_storage_stated(4, 2, 1080, 256) == 4 * 1080 + 2 * 256
    with pytest.raises(ValueError):
        plan_rounds(0, [1])


def test_storage_sweep_budget():
    geom = build_geometry()
    rows, best = storage_sweep(geom, 140)
    by_mn = {(r["M"], r["N"]): r for r in rows}
    assert by_mn[16, 4]["fits"]
    assert by_mn[16, 4]["node_storage"] == 68 + 64
    assert not by_mn[2, 2]["fits"]
    assert best["fits"]
    assert all(r["master_storage"] >= best["master_storage"] for r in rows if r["fits"])

import pytest

from app.core.errors import StateError
from app.core.instrument import TRANSCENDENTAL_MULS, KernelContext, MemoryLedger, OpCounters


def test_nested_stages_count_innermost_only():
    ctx = KernelContext()
    with ctx.stage("outer"):
        ctx.mul(3)
        with ctx.stage("inner"):
            ctx.mac(2)
        ctx.branch(1)
    assert ctx.stage_counters["outer"].fp_mul == 3
    assert ctx.stage_counters["outer"].branches == 1
    assert ctx.stage_counters["outer"].fp_mac == 0
    assert ctx.stage_counters["inner"].fp_mac == 2
    assert ctx.counters.total() == 6


def test_arithmetic_selects_category():
    ctx = KernelContext(arithmetic="fxp16")
    ctx.mul(4)
    ctx.mul(1, "fp32")
    ctx.mac(2, "q15")
    assert ctx.counters.fxp_mul == 4
    assert ctx.counters.fp_mul == 1
    assert ctx.counters.fxp_mac == 2
    assert ctx.element_bytes == 2
    assert KernelContext(arithmetic="fxp32").element_bytes == 4


def test_transcendental_and_non_positive_counts():
    ctx = KernelContext()
    ctx.transcendental(1)
    ctx.mem(0)
    ctx.branch(-5)
    assert ctx.counters.fp_mul == TRANSCENDENTAL_MULS
    assert ctx.counters.total() == TRANSCENDENTAL_MULS


def test_counters_never_decrease():
    counters = OpCounters()
    with pytest.raises(StateError):
        counters.add("fp_mul", -1)
    with pytest.raises(StateError):
        counters.add("divisions", 1)


def test_dominant_ties_follow_category_order():
    assert OpCounters().dominant() is None
    assert OpCounters(branches=5, fxp_mul=5).dominant() == "branches"
    assert OpCounters(fp_mac=7, fxp_mul=5).dominant() == "fp_mac"


def test_ledger_peak_and_stack_bound():
    ledger = MemoryLedger()
    ledger.alloc("a", 100)
    ledger.alloc("b", 50)
    ledger.free("a")
    ledger.alloc("c", 30)
    assert ledger.heap_peak_bytes == 150
    assert ledger.dynamic_peak_bytes == 150 + 2048

    with pytest.raises(StateError):
        ledger.alloc("b", 1)
    with pytest.raises(StateError):
        ledger.free("missing")


def test_ledger_buffer_frees_on_error():
    ledger = MemoryLedger()
    with pytest.raises(RuntimeError):
        with ledger.buffer("scratch", 64):
            raise RuntimeError("boom")
    assert ledger.live == {}
    assert ledger.heap_peak_bytes == 64


def test_reset_keeps_static_items():
    ctx = KernelContext()
    ctx.ledger.add_static("parameters", 10)
    ctx.ledger.add_static("parameters", 5)
    ctx.ledger.alloc("x", 8)
    ctx.mul(1)
    ctx.reset()
    assert ctx.ledger.static_bytes == 15
    assert ctx.ledger.heap_peak_bytes == 0
    assert ctx.counters.total() == 0

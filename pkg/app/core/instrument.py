"""Run instrumentation: operation counters, memory ledger and the per-run kernel context.

Kernels never touch global state; everything they count goes to the
``KernelContext`` handed to them (one context per concurrent run).
"""

from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, Literal, Optional

from app.core.errors import StateError

Arithmetic = Literal["fp32", "fxp16", "fxp32"]

CATEGORIES = ("branches", "fxp_mul", "fxp_mac", "fp_mul", "fp_mac", "loads_stores")

# Multiplications charged for one transcendental evaluation (log, exp, sin,
# cos, tanh, sqrt); MCU math libraries evaluate them with short polynomials.
TRANSCENDENTAL_MULS = 12


@dataclass
class OpCounters:
    branches: int = 0
    fxp_mul: int = 0
    fxp_mac: int = 0
    fp_mul: int = 0
    fp_mac: int = 0
    loads_stores: int = 0

    def add(self, category: str, n: int) -> None:
        if category not in CATEGORIES:
            raise StateError(f"unknown counter category: {category}")
        if n < 0:
            raise StateError("counters never decrease")
        setattr(self, category, getattr(self, category) + int(n))

    def merge(self, other: "OpCounters") -> None:
        for name in CATEGORIES:
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def reset(self) -> None:
        for name in CATEGORIES:
            setattr(self, name, 0)

    def total(self) -> int:
        return sum(getattr(self, name) for name in CATEGORIES)

    def dominant(self) -> Optional[str]:
        """Largest category; ties resolve in CATEGORIES order."""
        if self.total() == 0:
            return None
        return max(CATEGORIES, key=lambda name: (getattr(self, name), -CATEGORIES.index(name)))

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)

    def copy(self) -> "OpCounters":
        return OpCounters(**self.as_dict())


@dataclass
class MemoryLedger:
    """Static footprint and instrumented dynamic (heap + stack bound) footprint.

    Sizes are MCU sizes: the bytes the buffer occupies in the target
    representation, not the host numpy array size.
    """

    stack_bound_bytes: int = 2048
    static_items: Dict[str, int] = field(default_factory=dict)
    live: Dict[str, int] = field(default_factory=dict)
    heap_bytes: int = 0
    heap_peak_bytes: int = 0

    def add_static(self, name: str, nbytes: int) -> None:
        self.static_items[name] = self.static_items.get(name, 0) + int(nbytes)

    @property
    def static_bytes(self) -> int:
        return sum(self.static_items.values())

    def alloc(self, name: str, nbytes: int) -> None:
        if name in self.live:
            raise StateError(f"buffer {name!r} already allocated")
        self.live[name] = int(nbytes)
        self.heap_bytes += int(nbytes)
        self.heap_peak_bytes = max(self.heap_peak_bytes, self.heap_bytes)

    def free(self, name: str) -> None:
        if name not in self.live:
            raise StateError(f"buffer {name!r} is not allocated")
        self.heap_bytes -= self.live.pop(name)

    @contextmanager
    def buffer(self, name: str, nbytes: int) -> Iterator[None]:
        self.alloc(name, nbytes)
        try:
            yield
        finally:
            self.free(name)

    @property
    def dynamic_peak_bytes(self) -> int:
        return self.heap_peak_bytes + self.stack_bound_bytes

    def reset(self) -> None:
        """Clear dynamic state between runs; static items persist."""
        self.live.clear()
        self.heap_bytes = 0
        self.heap_peak_bytes = 0


@dataclass
class KernelContext:
    """Counters, per-stage counters and memory ledger for one run.

    ``arithmetic`` picks the category multiplications land in for kernels
    whose numerics do not depend on it (the host evaluates them in double
    precision); kernels with real fixed-point variants take their own
    arithmetic argument.
    """

    arithmetic: Arithmetic = "fp32"
    counters: OpCounters = field(default_factory=OpCounters)
    stage_counters: Dict[str, OpCounters] = field(default_factory=dict)
    ledger: MemoryLedger = field(default_factory=MemoryLedger)
    current_stage: Optional[str] = None

    @contextmanager
    def stage(self, name: str) -> Iterator["KernelContext"]:
        previous = self.current_stage
        self.current_stage = name
        self.stage_counters.setdefault(name, OpCounters())
        try:
            yield self
        finally:
            self.current_stage = previous

    def count(self, category: str, n: int) -> None:
        if n <= 0:
            return
        self.counters.add(category, n)
        if self.current_stage is not None:
            self.stage_counters[self.current_stage].add(category, n)

    def _fixed(self, arithmetic: Optional[str]) -> bool:
        kind = arithmetic or self.arithmetic
        return kind.startswith("fxp") or kind.startswith("q")

    def mul(self, n: int, arithmetic: Optional[str] = None) -> None:
        self.count("fxp_mul" if self._fixed(arithmetic) else "fp_mul", n)

    def mac(self, n: int, arithmetic: Optional[str] = None) -> None:
        self.count("fxp_mac" if self._fixed(arithmetic) else "fp_mac", n)

    def branch(self, n: int) -> None:
        self.count("branches", n)

    def mem(self, n: int) -> None:
        self.count("loads_stores", n)

    def transcendental(self, n: int, arithmetic: Optional[str] = None) -> None:
        self.mul(n * TRANSCENDENTAL_MULS, arithmetic)

    def reset(self) -> None:
        self.counters.reset()
        self.stage_counters.clear()
        self.ledger.reset()
        self.current_stage = None

    @property
    def element_bytes(self) -> int:
        """Width of one working sample in the configured arithmetic."""
        return 2 if self.arithmetic == "fxp16" else 4


def ensure_context(ctx: Optional[KernelContext]) -> KernelContext:
    """Kernels called without a context count into a throwaway one."""
    return ctx if ctx is not None else KernelContext()

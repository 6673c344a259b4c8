"""Deterministic cycle-accurate simulation kernel.

One primary clock; time is the count of elapsed posedges.  Each cycle is
a two-phase step: every registered process runs once (reading committed
`current` values, writing `next`), then all pending writes commit at
once.  No process can observe another process's same-cycle write.

Process evaluation order is the lexicographic order of each process's
registration key, so a simulation is reproducible regardless of the
order in which the model was constructed.
"""

# Time is a plain cycle count (u64 range enforced by construction: it
# only ever increments).
SimTime = int


class KernelConfigError(Exception):
    """Model construction errors: duplicate keys, bad widths."""


class SimulationError(Exception):
    """A process fault during a cycle step; carries the cycle number."""

    def __init__(self, cycle, message):
        super().__init__(f"cycle {cycle}: {message}")
        self.cycle = cycle


class Signal:
    """A named bit vector with a committed value and a pending value.

    `current` changes only when the kernel commits a step; writes go to
    the pending value via `set_next`.  Width is capped at 64 bits; wider
    buses are modeled as arrays of signals.
    """

    __slots__ = ("name", "width", "mask", "current", "_next", "_pending", "_kernel")

    def __init__(self, kernel, name, width, reset=0):
        if not 1 <= width <= 64:
            raise KernelConfigError(f"signal {name}: width {width} outside 1..64")
        if not 0 <= reset < (1 << width):
            raise KernelConfigError(f"signal {name}: reset value {reset:#x} too wide")
        self.name = name
        self.width = width
        self.mask = (1 << width) - 1
        self.current = reset
        self._next = reset
        self._pending = False
        self._kernel = kernel

    def set_next(self, value):
        if value & ~self.mask:
            raise SimulationError(
                self._kernel.now, f"write of {value:#x} overflows {self.name}[{self.width}]"
            )
        self._next = value
        if not self._pending:
            self._pending = True
            self._kernel._pending.append(self)

    def __repr__(self):
        return f"Signal({self.name}[{self.width}]={self.current:#x})"


class ClockGen:
    """Primary clock descriptor.

    `period` is a cycles-per-posedge scaling factor: processes evaluate
    on every period-th kernel step.  A disabled clock gates process
    evaluation entirely while time still advances.
    """

    def __init__(self, period=1, enabled=True):
        if period < 1:
            raise KernelConfigError(f"clock period {period} must be >= 1")
        self.period = period
        self.enabled = enabled


class ResetGen:
    """Reset generator: asserts the reset signal for exactly
    `assert_cycles` cycles from time zero."""

    def __init__(self, assert_cycles, active_low=False):
        self.assert_cycles = assert_cycles
        self.active_low = active_low

    def asserted_value(self):
        return 0 if self.active_low else 1

    def value_at(self, cycle):
        asserted = cycle < self.assert_cycles
        if self.active_low:
            return 0 if asserted else 1
        return 1 if asserted else 0


class Kernel:
    """The HDL-side simulation kernel.

    Owned by a single execution context; stepping is the only way time
    advances.  Optional hooks:

    * `on_cycle()` runs after each committed step (used by the link for
      per-cycle synchronization);
    * `step_guard()` runs before each step (used to assert that cycles
      only advance inside link directives);
    * `trace` sink receives one `"cycle,name,hexvalue"` line per
      committed change.
    """

    def __init__(self, clock=None):
        self.now: SimTime = 0
        self.clock = clock or ClockGen()
        self.signals = {}
        self._procs = {}
        self._schedule = None
        self._pending = []
        self._reset = None
        self._rst_signal = None
        self.on_cycle = None
        self.step_guard = None
        self.trace = None

    # -- construction ---------------------------------------------------

    def signal(self, name, width, reset=0) -> Signal:
        if name in self.signals:
            raise KernelConfigError(f"duplicate signal name {name!r}")
        sig = Signal(self, name, width, reset)
        self.signals[name] = sig
        return sig

    def register_process(self, proc, order_key: str) -> str:
        """Register a synchronous process, evaluated once per cycle in
        lexicographic order of order_key."""
        if self._schedule is not None:
            raise KernelConfigError("cannot register processes after stepping started")
        if order_key in self._procs:
            raise KernelConfigError(f"duplicate process order_key {order_key!r}")
        self._procs[order_key] = proc
        return order_key

    def add_reset(self, resetgen: ResetGen, name="rst") -> Signal:
        if self._reset is not None:
            raise KernelConfigError("reset generator already installed")
        self._reset = resetgen
        self._rst_signal = self.signal(name, 1, reset=resetgen.value_at(0))
        return self._rst_signal

    @property
    def reset_signal(self):
        return self._rst_signal

    def reset_released(self) -> bool:
        if self._reset is None:
            return True
        return self._rst_signal.current != self._reset.asserted_value()

    # -- stepping -------------------------------------------------------

    def _freeze(self):
        self._schedule = [self._procs[k] for k in sorted(self._procs)]

    def step_cycle(self) -> SimTime:
        """Run one two-phase cycle; returns the new time."""
        if self.step_guard is not None:
            self.step_guard()
        if self._schedule is None:
            self._freeze()
        clk = self.clock
        if clk.enabled and self.now % clk.period == 0:
            if self._reset is not None:
                nxt = self._reset.value_at(self.now + 1)
                if nxt != self._rst_signal._next:
                    self._rst_signal.set_next(nxt)
            for proc in self._schedule:
                try:
                    proc()
                except SimulationError:
                    raise
                except Exception as exc:
                    raise SimulationError(self.now, f"process fault: {exc!r}") from exc
        pending = self._pending
        if pending:
            cycle = self.now + 1
            trace = self.trace
            for sig in pending:
                sig._pending = False
                if sig.current != sig._next:
                    sig.current = sig._next
                    if trace is not None:
                        trace.append(f"{cycle},{sig.name},{sig.current:x}")
            pending.clear()
        self.now += 1
        if self.on_cycle is not None:
            self.on_cycle()
        return self.now

    def run_cycles(self, n: int) -> SimTime:
        """Exactly n step_cycle calls; returns the final time."""
        if n < 0:
            raise KernelConfigError(f"run_cycles({n}): negative count")
        for _ in range(n):
            self.step_cycle()
        return self.now

    # -- trace ----------------------------------------------------------

    def enable_trace(self):
        """Collect one line per committed change into self.trace."""
        if self.trace is None:
            self.trace = []
        return self.trace

    def dump_trace(self, path):
        with open(path, "w") as fh:
            for line in self.trace or []:
                fh.write(line + "\n")

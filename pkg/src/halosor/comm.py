"""One-sided "window put" emulation with latest-value overwrite channels.

Two backends share the same Window API:

* VirtualWindow + run_virtual: a deterministic single-threaded
  discrete-event scheduler with injectable compute/latency delays.
* ThreadedWindow: real threads, one lock per channel slot; a completed
  put is visible to the very next read.

A channel is identified by (kind, src, dst) and holds at most the latest
message: writes are atomic at message granularity and may overwrite
unread messages, which is the honest model of an RMA window holding one
ghost-row image.
"""

import heapq
import json
import threading
from dataclasses import dataclass, field

import numpy as np

HALO = "halo"
FLAG = "flag"
REPORT = "report"
BCAST = "bcast"

_KIND_IDS = {HALO: 1, FLAG: 2, REPORT: 3, BCAST: 4}


def channel_key(kind, src, dst):
    return (kind, src, dst)


@dataclass
class HaloMessage:
    """Boundary payload plus sender bookkeeping."""

    values: np.ndarray
    sender_iter: int
    sender_converged: bool = False


@dataclass
class DelayModel:
    """Per-PE compute cost and per-channel latency, all seed-determined.

    compute_base[pe] is the virtual cost of one sweep; a converged PE's
    polling turn costs idle_factor of a sweep.  Draws are
    base * (1 + jitter * U[0,1)).
    """

    n_pes: int
    compute_base: list = None      # defaults to all-ones
    compute_jitter: float = 0.0
    latency_base: float = 0.0
    latency_jitter: float = 0.0
    idle_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.compute_base is None:
            self.compute_base = [1.0] * self.n_pes
        if len(self.compute_base) != self.n_pes:
            raise ValueError("compute_base length must equal n_pes")
        if any(b < 0 for b in self.compute_base) or self.latency_base < 0:
            raise ValueError("delays must be nonnegative")


class DelaySampler:
    """Independent seeded streams per PE and per channel so that two runs
    consuming a subset of streams still see identical sequences."""

    def __init__(self, model: DelayModel):
        self.model = model
        self._compute_rng = [
            np.random.default_rng([model.seed, 0, pe])
            for pe in range(model.n_pes)]
        self._latency_rng = {}

    def compute_delay(self, pe, idle=False):
        m = self.model
        d = m.compute_base[pe]
        if m.compute_jitter > 0:
            d *= 1.0 + m.compute_jitter * self._compute_rng[pe].random()
        if idle:
            d *= m.idle_factor
        return d

    def latency(self, key):
        m = self.model
        if m.latency_base == 0 and m.latency_jitter == 0:
            return 0.0
        rng = self._latency_rng.get(key)
        if rng is None:
            kind, src, dst = key
            rng = np.random.default_rng(
                [m.seed, 1, _KIND_IDS[kind], src, dst])
            self._latency_rng[key] = rng
        d = m.latency_base
        if m.latency_jitter > 0:
            d *= 1.0 + m.latency_jitter * rng.random()
        return d


class _Slot:
    __slots__ = ("inflight", "visible", "fresh", "last_visible_at", "puts")

    def __init__(self, initial):
        self.inflight = []            # [(visible_at, msg)] in put order
        self.visible = initial
        self.fresh = False
        self.last_visible_at = 0.0
        self.puts = 0


class VirtualWindow:
    """Latest-value channels under virtual time.

    Messages become visible latency after the put; per-channel visibility
    is monotone in put order (a later put never becomes visible before an
    earlier one).
    """

    def __init__(self, clock, sampler: DelaySampler, log=None):
        self.clock = clock
        self.sampler = sampler
        self.log = log
        self._slots = {}

    def register(self, key, initial=None):
        self._slots[key] = _Slot(initial)

    def put(self, key, msg):
        slot = self._slots.get(key)
        if slot is None:
            raise KeyError(f"unregistered channel {key}")
        now = self.clock.now
        visible_at = now + self.sampler.latency(key)
        if slot.inflight and visible_at < slot.inflight[-1][0]:
            visible_at = slot.inflight[-1][0]
        slot.inflight.append((visible_at, msg))
        slot.puts += 1
        if self.log is not None:
            self.log.append({"t": now, "ev": "put", "channel": list(key),
                             "visible_at": visible_at})

    def _promote(self, slot, now):
        while slot.inflight and slot.inflight[0][0] <= now:
            visible_at, msg = slot.inflight.pop(0)
            slot.visible = msg
            slot.fresh = True
            slot.last_visible_at = visible_at

    def read_fresh(self, key):
        slot = self._slots.get(key)
        if slot is None:
            raise KeyError(f"unregistered channel {key}")
        now = self.clock.now
        self._promote(slot, now)
        fresh = slot.fresh
        slot.fresh = False
        if self.log is not None:
            self.log.append({"t": now, "ev": "read", "channel": list(key),
                             "fresh": fresh})
        return slot.visible, fresh

    def put_count(self, key):
        return self._slots[key].puts

    def put_counts(self, kind=None):
        return {k: s.puts for k, s in self._slots.items()
                if kind is None or k[0] == kind}


class _ThreadSlot:
    __slots__ = ("lock", "visible", "version", "seen", "puts")

    def __init__(self, initial):
        self.lock = threading.Lock()
        self.visible = initial
        self.version = 0
        self.seen = 0
        self.puts = 0


class ThreadedWindow:
    """Thread-safe latest-value channels; a put completes atomically and
    is visible to the next read (liveness bound 1)."""

    def __init__(self, clock=None, sampler=None, log=None):
        self.clock = clock
        self._slots = {}

    def register(self, key, initial=None):
        self._slots[key] = _ThreadSlot(initial)

    def put(self, key, msg):
        slot = self._slots.get(key)
        if slot is None:
            raise KeyError(f"unregistered channel {key}")
        with slot.lock:
            slot.visible = msg
            slot.version += 1
            slot.puts += 1

    def read_fresh(self, key):
        slot = self._slots.get(key)
        if slot is None:
            raise KeyError(f"unregistered channel {key}")
        with slot.lock:
            fresh = slot.version != slot.seen
            slot.seen = slot.version
            return slot.visible, fresh

    def put_count(self, key):
        return self._slots[key].puts

    def put_counts(self, kind=None):
        return {k: s.puts for k, s in self._slots.items()
                if kind is None or k[0] == kind}


@dataclass
class VirtualClock:
    now: float = 0.0


def run_virtual(worker_gens, clock: VirtualClock, step_limit=1_000_000):
    """Drive cooperative workers in virtual time.

    Each element of worker_gens is a generator that yields the virtual
    cost of its next turn; the body between yields runs at the scheduled
    wake time.  Fully deterministic: ties break by worker index.

    Returns (final_time, timed_out).
    """
    if not worker_gens:
        raise ValueError("need at least one worker")
    heap = []
    gens = list(worker_gens)
    for i, g in enumerate(gens):
        try:
            cost = next(g)
        except StopIteration:
            continue
        heapq.heappush(heap, (cost, i))
    steps = 0
    while heap:
        steps += 1
        if steps > step_limit:
            return clock.now, True
        t, i = heapq.heappop(heap)
        clock.now = t
        try:
            cost = next(gens[i])
        except StopIteration:
            continue
        heapq.heappush(heap, (t + cost, i))
    return clock.now, False


def write_event_log(log, path):
    """JSON-lines event log (one line per put/read)."""
    with open(path, "w") as f:
        for entry in log:
            f.write(json.dumps(entry) + "\n")

"""Event-triggered send decision (adaptive threshold with decay) and
receiver-side linear extrapolation of ghost values."""

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ThresholdState:
    """Send-side threshold state machine.

    A send fires when the L1 norm of the boundary vector has moved by at
    least tau_star * d**m from the last communicated norm, where m counts
    iterations since the last send.  tau_star is the average slope over
    the recent send history times the horizon h.  During warm-up every
    iteration sends unconditionally.
    """

    h: float = 200.0
    d: float = 0.8
    warmup_iters: int = 200
    history_len: int = 20
    last_sent_norm: float = 0.0
    tau_star: float = 0.0
    m: int = 0
    event_history: deque = None

    def __post_init__(self):
        if not (0.0 < self.d < 1.0):
            raise ValueError("decay d must lie in (0, 1)")
        if self.h < 0:
            raise ValueError("horizon must be nonnegative")
        if self.event_history is None:
            self.event_history = deque(maxlen=self.history_len)

    @property
    def threshold(self):
        return self.tau_star * self.d ** self.m

    def should_send(self, current_norm, current_iter):
        """Decide whether to send at this iteration.

        Caller must invoke on_send afterwards when the decision is True.
        A False decision advances the decay counter.
        """
        if current_iter < self.warmup_iters:
            return True
        if abs(current_norm - self.last_sent_norm) >= self.threshold:
            return True
        self.m += 1
        return False

    def on_send(self, norm, iteration):
        """Record a send: refresh the history, slope, and base threshold."""
        self.event_history.append((iteration, norm))
        self.last_sent_norm = norm
        self.tau_star = self._average_slope() * self.h
        self.m = 0

    def _average_slope(self):
        ev = self.event_history
        if len(ev) < 2:
            # before the history exists the threshold stays 0 (always send)
            return 0.0
        slopes = []
        for (i0, n0), (i1, n1) in zip(list(ev)[:-1], list(ev)[1:]):
            slopes.append(abs(n1 - n0) / (i1 - i0))
        return sum(slopes) / len(slopes)


# Fallback guard: drop extrapolation that strays more than this factor
# times the scale of the last received vector.
CLAMP_FACTOR = 10.0

# Relative inter-receipt step below which the boundary trajectory counts
# as smooth enough to predict ahead (see GhostHistory.smooth).
SMOOTH_FACTOR = 0.01


@dataclass
class GhostHistory:
    """Last two received boundary vectors plus the neighbor's converged
    flag, for linear extrapolation between sends."""

    neighbor_converged: bool = False
    _iters: list = field(default_factory=list)
    _vecs: list = field(default_factory=list)
    _trips: int = 0
    _suppress_until: int = 0

    def add(self, iteration, values):
        if self._iters and iteration < self._iters[-1]:
            raise ValueError("receive iterations must not decrease")
        if self._iters and iteration == self._iters[-1]:
            # overwrite within the same local iteration (idle-turn reads)
            self._vecs[-1] = np.array(values, dtype=np.float64)
            return
        self._iters.append(iteration)
        self._vecs.append(np.array(values, dtype=np.float64))
        if len(self._iters) > 2:
            self._iters.pop(0)
            self._vecs.pop(0)

    @property
    def has_data(self):
        return bool(self._vecs)

    def last(self):
        return self._vecs[-1]

    def smooth(self):
        """Whether the received trajectory is in the smooth regime where
        predicting ahead is safe.

        Extrapolating a large or oscillatory inter-receipt step feeds the
        prediction error back through the neighbor and can push the
        coupled iteration past its stability margin, so callers should
        extrapolate only while the last received step is small relative
        to the boundary magnitude and hold the last value otherwise.
        """
        if len(self._vecs) < 2:
            return True
        g1, g2 = self._vecs
        step = float(np.max(np.abs(g2 - g1)))
        scale = float(max(np.max(np.abs(g2)), np.max(np.abs(g1))))
        if scale == 0.0:
            return step == 0.0
        return step <= SMOOTH_FACTOR * scale

    def use_prediction(self, current_iter):
        """Smoothness guard with exponential backoff.

        A rough trajectory trips the guard and suppresses prediction for
        a doubling window of sweeps.  A channel whose coupling is
        destabilized by prediction keeps tripping, so its windows grow
        and it degenerates to holding the last received value; smooth
        channels trip at most a few times early on and keep the benefit.
        """
        if current_iter < self._suppress_until:
            return False
        if self.smooth():
            return True
        self._trips += 1
        self._suppress_until = current_iter + 2 ** min(self._trips, 16)
        return False

    def extrapolate(self, current_iter):
        """Linear extrapolation from the stored pair; zeroth-order with a
        single entry.  Must not be called while the neighbor is converged
        (the caller uses the last values verbatim instead)."""
        if self.neighbor_converged:
            raise RuntimeError(
                "extrapolation requested for a converged neighbor")
        if not self._vecs:
            raise RuntimeError("no received values to extrapolate from")
        if len(self._vecs) == 1:
            return self._vecs[0].copy()
        (t1, t2) = self._iters
        g1, g2 = self._vecs
        with np.errstate(invalid="ignore", over="ignore"):
            out = g2 + (g2 - g1) * ((current_iter - t2) / (t2 - t1))
            scale = CLAMP_FACTOR * max(np.ptp(g2), np.max(np.abs(g2)))
            if (not np.all(np.isfinite(out))
                    or np.max(np.abs(out - g2)) > scale):
                return g2.copy()
        return out


class ThresholdTrace:
    """Per-channel (iteration, norm, tau, sent) trace, CSV-exportable."""

    def __init__(self):
        self.rows = []

    def record(self, iteration, norm, tau, sent):
        self.rows.append((iteration, norm, tau, sent))

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("iteration,norm,tau,sent\n")
            for it, norm, tau, sent in self.rows:
                f.write(f"{it},{norm!r},{tau!r},{int(sent)}\n")

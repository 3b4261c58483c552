"""Per-PE solver loop for the asynchronous and event-triggered policies.

Each worker runs its own local iterations against latest-value channels:
sweep, (maybe) send boundaries, read/extrapolate ghosts, residual check
with hysteresis, then either idle polling with restart-on-fresh-values
or, on the master, aggregation of convergence flags and the global
broadcast.
"""

from dataclasses import dataclass

from .comm import BCAST, FLAG, HALO, REPORT, HaloMessage
from .convergence import LocalConvState, MasterState, nullify_on_new_values
from .events import GhostHistory, ThresholdState
from .grid import l1_norm, local_residual, sor_sweep

MASTER = 0


@dataclass
class Policy:
    """Communication policy; "sync" is handled by the lockstep runner."""

    kind: str                 # "sync" | "async" | "event"
    h: float = 200.0
    d: float = 0.8
    warmup: int = 200
    history_len: int = 20

    @classmethod
    def synchronous(cls):
        return cls("sync")

    @classmethod
    def asynchronous(cls):
        return cls("async")

    @classmethod
    def event_triggered(cls, h=200.0, d=0.8, warmup=200, history_len=20):
        return cls("event", h=h, d=d, warmup=warmup, history_len=history_len)


def neighbors_of(pe, n_pes, periodic):
    """(up, down) neighbor PE ids along the strip ring; None at a wall."""
    up = pe + 1 if pe + 1 < n_pes else (0 if periodic else None)
    down = pe - 1 if pe - 1 >= 0 else (n_pes - 1 if periodic else None)
    return up, down


class Worker:
    def __init__(self, pe, sub, n_pes, policy, window, sampler, *,
                 omega, tol, conv_window, restart_threshold, r0_scale,
                 periodic, conv_log=None, traces=None):
        self.pe = pe
        self.sub = sub
        self.n_pes = n_pes
        self.policy = policy
        self.window = window
        self.sampler = sampler
        self.omega = omega
        self.tol = tol
        self.restart_threshold = restart_threshold
        self.r0_scale = r0_scale
        self.conv_log = conv_log
        self.traces = traces

        up, down = neighbors_of(pe, n_pes, periodic)
        self.self_wrap = (up == pe)  # single PE with periodic wrap
        self.sides = []
        if not self.self_wrap:
            if up is not None:
                self.sides.append(("top", up))
            if down is not None:
                self.sides.append(("bottom", down))

        self.conv = LocalConvState(tol=tol, window=conv_window)
        self.master = MasterState(n_pes) if pe == MASTER else None
        self.ghost_hist = {s: GhostHistory() for s, _ in self.sides}
        self.last_used_norm = {s: 0.0 for s, _ in self.sides}
        self.thresholds = {}
        if policy.kind == "event":
            self.thresholds = {
                s: ThresholdState(h=policy.h, d=policy.d,
                                  warmup_iters=policy.warmup,
                                  history_len=policy.history_len)
                for s, _ in self.sides}

        self.iters = 0
        self.last_rel = float("inf")
        self.done = False

    # -- logging helpers --------------------------------------------------

    def _log(self, event):
        if self.conv_log is not None:
            self.conv_log.append(
                {"pe": self.pe, "iter": self.iters, "event": event})

    def _report(self, flag):
        if self.pe == MASTER:
            self.master.master_step(MASTER, flag)
        else:
            self.window.put((REPORT, self.pe, MASTER), bool(flag))

    # -- main loop --------------------------------------------------------

    def main(self):
        """Generator yielding the virtual cost of each turn."""
        while True:
            yield self.sampler.compute_delay(self.pe,
                                             idle=self.conv.converged)
            if self.pe != MASTER:
                msg, _ = self.window.read_fresh((BCAST, MASTER, self.pe))
                if msg:
                    self.done = True
                    return
            if not self.conv.converged:
                self._sweep_turn()
            else:
                self._idle_turn()
                if self.pe == MASTER and self._master_turn():
                    self.done = True
                    return

    def _boundary(self, side):
        return self.sub.p[self.sub.m] if side == "top" else self.sub.p[1]

    def _sweep_turn(self):
        if self.self_wrap:
            self.sub.set_ghost("top", self.sub.p[1])
            self.sub.set_ghost("bottom", self.sub.p[self.sub.m])
        sor_sweep(self.sub, self.omega)
        self.iters += 1
        it0 = self.iters - 1  # 0-based for the warm-up window
        for side, nb in self.sides:
            vec = self._boundary(side)
            norm = l1_norm(vec)
            send = True
            tau = 0.0
            if self.policy.kind == "event":
                st = self.thresholds[side]
                tau = st.threshold
                send = st.should_send(norm, it0)
                if send:
                    st.on_send(norm, it0)
            if self.traces is not None:
                self.traces[(self.pe, side)].record(it0, norm, tau, send)
            if send:
                self.window.put((HALO, self.pe, nb),
                                HaloMessage(vec.copy(), self.iters, False))
        self._receive()
        rel = local_residual(self.sub) / self.r0_scale
        self.last_rel = rel
        was = self.conv.converged
        self.conv.update(rel)
        if self.conv.converged and not was:
            self._log("converged")
            self._report(True)

    def _receive(self):
        # extrapolation bridges skipped sends; a zero horizon never skips
        # any, so it degenerates to holding the last received value
        extrapolating = self.policy.kind == "event" and self.policy.h > 0
        for side, nb in self.sides:
            gh = self.ghost_hist[side]
            if extrapolating:
                fmsg, ffresh = self.window.read_fresh((FLAG, nb, self.pe))
                if ffresh and fmsg is not None:
                    gh.neighbor_converged = bool(fmsg)
            msg, fresh = self.window.read_fresh((HALO, nb, self.pe))
            if fresh and msg is not None:
                self.sub.set_ghost(side, msg.values)
                gh.add(self.iters, msg.values)
                gh.neighbor_converged = msg.sender_converged
                self.last_used_norm[side] = l1_norm(msg.values)
            elif (extrapolating and gh.has_data
                  and not gh.neighbor_converged
                  and gh.use_prediction(self.iters)):
                self.sub.set_ghost(side, gh.extrapolate(self.iters))

    def _idle_turn(self):
        any_fresh = False
        nullified = False
        for side, nb in self.sides:
            gh = self.ghost_hist[side]
            if self.policy.kind == "event":
                fmsg, ffresh = self.window.read_fresh((FLAG, nb, self.pe))
                if ffresh and fmsg is not None:
                    gh.neighbor_converged = bool(fmsg)
            msg, fresh = self.window.read_fresh((HALO, nb, self.pe))
            if fresh and msg is not None:
                any_fresh = True
                self.sub.set_ghost(side, msg.values)
                gh.add(self.iters, msg.values)
                gh.neighbor_converged = msg.sender_converged
                nnorm = l1_norm(msg.values)
                if self.restart_threshold is not None:
                    # norm-drift rule against the ghosts last consumed by
                    # a sweep; the reference updates only on restart
                    if nullify_on_new_values(
                            self.conv, [(nnorm, self.last_used_norm[side])],
                            self.restart_threshold):
                        nullified = True
        if any_fresh and self.restart_threshold is None:
            # default rule: fresh values count as genuinely new only if
            # they push the local residual back above tolerance; this is
            # what lets a converged PE ignore the per-sweep sends of a
            # still-iterating but already-accurate neighbor
            rel = local_residual(self.sub) / self.r0_scale
            self.last_rel = rel
            if rel >= self.conv.tol:
                self.conv.nullify()
                nullified = True
        if nullified:
            for side, _ in self.sides:
                self.last_used_norm[side] = l1_norm(
                    self.ghost_hist[side].last()
                    if self.ghost_hist[side].has_data
                    else self._boundary(side) * 0.0)
            self._log("nullified")
            self._report(False)
            return
        if self.policy.kind == "event":
            for side, nb in self.sides:
                self.window.put((FLAG, self.pe, nb), True)
        self._report(True)

    def _master_turn(self):
        self.master.master_step(MASTER, self.conv.converged)
        for pe in range(self.n_pes):
            if pe == MASTER:
                continue
            msg, _ = self.window.read_fresh((REPORT, pe, MASTER))
            if msg is not None:
                self.master.master_step(pe, msg)
        if self.master.claim_emission():
            for pe in range(self.n_pes):
                if pe != MASTER:
                    self.window.put((BCAST, MASTER, pe), True)
            self._log("global")
            return True
        return False


def register_channels(window, n_pes, policy, periodic):
    """Create every channel the worker set will touch."""
    if n_pes == 1:
        return
    for pe in range(n_pes):
        up, down = neighbors_of(pe, n_pes, periodic)
        for nb in (up, down):
            if nb is None:
                continue
            window.register((HALO, pe, nb))
            if policy.kind == "event":
                window.register((FLAG, pe, nb))
        if pe != MASTER:
            window.register((REPORT, pe, MASTER))
            window.register((BCAST, MASTER, pe), initial=False)

"""Local convergence with hysteresis, restart on fresh neighbor values,
and master-side aggregation of the global convergence flag."""

from dataclasses import dataclass, field


@dataclass
class LocalConvState:
    """A PE is locally converged once its relative residual has stayed
    below tol for W consecutive iterations."""

    tol: float = 1e-8
    window: int = 50
    below_tol_streak: int = 0
    converged: bool = False

    def update(self, relative_residual):
        if relative_residual < 0:
            raise ValueError("residual must be nonnegative")
        if relative_residual < self.tol:
            self.below_tol_streak += 1
            if self.below_tol_streak >= self.window:
                self.converged = True
        else:
            self.below_tol_streak = 0
            self.converged = False
        return self

    def nullify(self):
        self.converged = False
        self.below_tol_streak = 0
        return self


def nullify_on_new_values(state: LocalConvState, fresh_norm_pairs,
                          restart_threshold=0.0):
    """Restart check for a converged PE.

    fresh_norm_pairs holds (new_norm, last_used_norm) per fresh halo
    message.  With the default threshold 0 any fresh arrival nullifies:
    converged neighbors stop sending, so an arrival signals genuinely new
    information.  Returns True when convergence was nullified.
    """
    if not state.converged:
        return False
    for new_norm, last_norm in fresh_norm_pairs:
        if abs(new_norm - last_norm) >= restart_threshold:
            state.nullify()
            return True
    return False


@dataclass
class MasterState:
    """Flag table kept by the master PE; emits the global-convergence
    broadcast exactly once, when every flag (master included) is true."""

    n_pes: int
    flags: list = field(default_factory=list)
    global_converged: bool = False
    broadcast_emitted: bool = False

    def __post_init__(self):
        if not self.flags:
            self.flags = [False] * self.n_pes

    def master_step(self, pe_id, converged):
        """Apply one report; returns the resulting global flag.  Duplicate
        reports are idempotent; an un-convergence report received before
        the broadcast was claimed cancels a pending emission."""
        self.flags[pe_id] = bool(converged)
        self.global_converged = all(self.flags)
        return self.global_converged

    def claim_emission(self):
        """Latch the broadcast: True exactly once, at the moment the
        master is ready to send it while all flags still hold."""
        if self.global_converged and not self.broadcast_emitted:
            self.broadcast_emitted = True
            return True
        return False

"""Assemble PEs, policy, and substrate into full solver runs; metrics,
direct-solve oracle, and the (h, d) sweep harness."""

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .comm import (BCAST, FLAG, HALO, REPORT, DelayModel, DelaySampler,
                   ThreadedWindow, VirtualClock, VirtualWindow, run_virtual)
from .events import ThresholdTrace
from .grid import (PERIODIC, ProblemInstance, apply_operator,
                   build_coefficients, local_residual, sor_sweep,
                   split_instance)
from .worker import MASTER, Policy, Worker, neighbors_of, register_channels

DEFAULT_STEP_LIMIT = 2_000_000


@dataclass
class RunReport:
    policy: str
    backend: str
    n_pes: int
    per_pe_iterations: list
    halo_msgs: dict               # "src->dst" -> count
    control_msgs: dict
    virtual_time: Optional[float]
    wall_time_ms: Optional[float]
    initial_residual: float
    final_rel_residual: float
    timed_out: bool
    solution: np.ndarray
    config: dict = field(default_factory=dict)
    conv_events: list = field(default_factory=list)

    @property
    def total_halo_msgs(self):
        return sum(self.halo_msgs.values())

    def to_dict(self):
        return {
            "policy": self.policy,
            "backend": self.backend,
            "n_pes": self.n_pes,
            "per_pe_iterations": list(self.per_pe_iterations),
            "halo_msgs": dict(self.halo_msgs),
            "control_msgs": dict(self.control_msgs),
            "virtual_time": self.virtual_time,
            "wall_time_ms": self.wall_time_ms,
            "initial_residual": self.initial_residual,
            "final_rel_residual": self.final_rel_residual,
            "timed_out": self.timed_out,
            "solution": self.solution.tolist(),
            "config": self.config,
            "conv_events": list(self.conv_events),
        }

    def to_json(self, indent=None):
        return json.dumps(self.to_dict(), indent=indent)


def _msg_counts(window, kind):
    return {f"{src}->{dst}": n
            for (k, src, dst), n in window.put_counts(kind).items()}


def _control_counts(window):
    out = {}
    for kind in (FLAG, REPORT, BCAST):
        for (k, src, dst), n in window.put_counts(kind).items():
            out[f"{kind}:{src}->{dst}"] = n
    return out


def _assemble(subs, nx, ny):
    p = np.empty((nx, ny))
    for s in subs:
        p[s.r0:s.r1] = s.p[1:s.m + 1]
    return p


def _global_rel_residual(p, inst, r0):
    coeffs = build_coefficients(inst.density, inst.dx, inst.dy, inst.bc)
    res = np.max(np.abs(apply_operator(p, coeffs, inst.bc) - inst.rhs))
    return res / r0


def _exchange_sync(subs, periodic, halo_counts):
    n = len(subs)
    if n == 1:
        if periodic:
            s = subs[0]
            s.set_ghost("top", s.p[1])
            s.set_ghost("bottom", s.p[s.m])
        return
    for pe, s in enumerate(subs):
        up, down = neighbors_of(pe, n, periodic)
        if up is not None:
            subs[up].set_ghost("bottom", s.p[s.m].copy())
            halo_counts[f"{pe}->{up}"] += 1
        if down is not None:
            subs[down].set_ghost("top", s.p[1].copy())
            halo_counts[f"{pe}->{down}"] += 1


def _run_sync_virtual(inst, subs, sampler, omega, tol, r0, step_limit):
    periodic = inst.bc == PERIODIC
    n = len(subs)
    halo_counts = {}
    halo_keys = []
    for pe in range(n):
        up, down = neighbors_of(pe, n, periodic)
        for nb in (up, down):
            if nb is not None:
                halo_counts[f"{pe}->{nb}"] = 0
                if nb != pe:
                    halo_keys.append((HALO, pe, nb))
    t = 0.0
    rel = np.inf
    iters = 0
    timed_out = True
    while iters < step_limit:
        t += max(sampler.compute_delay(pe) for pe in range(n))
        # the barriered exchange sits on the critical path: every PE
        # waits for the slowest in-flight halo message of this superstep
        if halo_keys:
            t += max(sampler.latency(key) for key in halo_keys)
        for s in subs:
            sor_sweep(s, omega)
        iters += 1
        _exchange_sync(subs, periodic, halo_counts)
        rel = max(local_residual(s) for s in subs) / r0
        if rel < tol:
            timed_out = False
            break
    return t, rel, iters, halo_counts, timed_out


def _run_sync_threads(inst, subs, sampler, omega, tol, r0, step_limit,
                      time_scale):
    periodic = inst.bc == PERIODIC
    n = len(subs)
    halo_counts = {}
    halo_keys = []
    for pe in range(n):
        up, down = neighbors_of(pe, n, periodic)
        for nb in (up, down):
            if nb is not None:
                halo_counts[f"{pe}->{nb}"] = 0
                if nb != pe:
                    halo_keys.append((HALO, pe, nb))
    barrier = threading.Barrier(n)
    shared = {"rel": [np.inf] * n, "stop": False, "iters": 0}
    lock = threading.Lock()

    def work(pe):
        s = subs[pe]
        while True:
            d = sampler.compute_delay(pe)
            if time_scale > 0:
                time.sleep(d * time_scale)
            sor_sweep(s, omega)
            barrier.wait()
            if pe == 0:
                _exchange_sync(subs, periodic, halo_counts)
                shared["iters"] += 1
                # the barriered exchange waits for the slowest in-flight
                # message, mirroring the virtual sync driver
                if halo_keys and time_scale > 0:
                    d = max(sampler.latency(key) for key in halo_keys)
                    if d > 0:
                        time.sleep(d * time_scale)
            barrier.wait()
            shared["rel"][pe] = local_residual(s)
            barrier.wait()
            if pe == 0:
                rel = max(shared["rel"]) / r0
                shared["global_rel"] = rel
                if rel < tol or shared["iters"] >= step_limit:
                    shared["stop"] = True
            barrier.wait()
            if shared["stop"]:
                return

    threads = [threading.Thread(target=work, args=(pe,)) for pe in range(n)]
    t0 = time.perf_counter()
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    wall_ms = (time.perf_counter() - t0) * 1e3
    rel = shared.get("global_rel", np.inf)
    timed_out = rel >= tol
    return wall_ms, rel, shared["iters"], halo_counts, timed_out


def run(instance: ProblemInstance, n_pes: int, policy: Policy,
        backend: str = "virtual", omega: float = 1.5, tol: float = 1e-8,
        seed: int = 0, delay_model: Optional[DelayModel] = None,
        step_limit: int = DEFAULT_STEP_LIMIT, conv_window: int = 50,
        restart_threshold: Optional[float] = None,
        time_scale: float = 1e-4,
        event_log: Optional[list] = None, collect_traces: bool = False):
    """Run one full solve under the given policy/backend; returns RunReport.

    The virtual backend is a pure function of (instance, arguments, seed):
    identical calls give bitwise-identical reports.
    """
    instance.validate()
    if instance.nx % n_pes != 0:
        raise ValueError(
            f"nx={instance.nx} not divisible into {n_pes} strips")
    if backend not in ("virtual", "threads"):
        raise ValueError(f"unknown backend {backend!r}")
    if delay_model is None:
        delay_model = DelayModel(n_pes=n_pes, seed=seed)
    sampler = DelaySampler(delay_model)
    subs = split_instance(instance, n_pes)
    r0 = float(np.max(np.abs(instance.rhs)))
    config = {
        "policy": policy.kind, "n_pes": n_pes, "backend": backend,
        "omega": omega, "tol": tol, "seed": seed,
        "conv_window": conv_window,
        "restart_threshold": restart_threshold,
        "h": policy.h, "d": policy.d, "warmup": policy.warmup,
        "history_len": policy.history_len,
        "grid": [instance.nx, instance.ny], "bc": instance.bc,
    }
    if r0 == 0.0:
        sol = _assemble(subs, instance.nx, instance.ny)
        return RunReport(policy.kind, backend, n_pes, [0] * n_pes, {}, {},
                         0.0 if backend == "virtual" else None,
                         None if backend == "virtual" else 0.0,
                         0.0, 0.0, False, sol, config)

    periodic = instance.bc == PERIODIC
    if policy.kind == "sync":
        if backend == "virtual":
            t, rel, iters, halo_counts, timed_out = _run_sync_virtual(
                instance, subs, sampler, omega, tol, r0, step_limit)
            vt, wall = t, None
        else:
            wall, rel, iters, halo_counts, timed_out = _run_sync_threads(
                instance, subs, sampler, omega, tol, r0, step_limit,
                time_scale)
            vt = None
        sol = _assemble(subs, instance.nx, instance.ny)
        final = _global_rel_residual(sol, instance, r0)
        return RunReport(policy.kind, backend, n_pes, [iters] * n_pes,
                         halo_counts, {}, vt, wall, r0, final, timed_out,
                         sol, config)

    # asynchronous / event-triggered
    conv_log = []
    traces = None
    if collect_traces:
        traces = {}
        for pe in range(n_pes):
            up, down = neighbors_of(pe, n_pes, periodic)
            if up is not None and up != pe:
                traces[(pe, "top")] = ThresholdTrace()
            if down is not None and down != pe:
                traces[(pe, "bottom")] = ThresholdTrace()
    clock = VirtualClock()
    if backend == "virtual":
        window = VirtualWindow(clock, sampler, log=event_log)
    else:
        window = ThreadedWindow()
    register_channels(window, n_pes, policy, periodic)
    workers = [
        Worker(pe, subs[pe], n_pes, policy, window, sampler,
               omega=omega, tol=tol, conv_window=conv_window,
               restart_threshold=restart_threshold, r0_scale=r0,
               periodic=periodic, conv_log=conv_log, traces=traces)
        for pe in range(n_pes)]

    if backend == "virtual":
        vt, timed_out = run_virtual([w.main() for w in workers], clock,
                                    step_limit)
        wall = None
    else:
        def drive(w):
            for cost in w.main():
                if time_scale > 0:
                    time.sleep(cost * time_scale)

        threads = [threading.Thread(target=drive, args=(w,))
                   for w in workers]
        t0 = time.perf_counter()
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        wall = (time.perf_counter() - t0) * 1e3
        vt = None
        timed_out = not all(w.done for w in workers)

    sol = _assemble(subs, instance.nx, instance.ny)
    final = _global_rel_residual(sol, instance, r0)
    report = RunReport(policy.kind, backend, n_pes,
                       [w.iters for w in workers],
                       _msg_counts(window, HALO), _control_counts(window),
                       vt, wall, r0, final, timed_out, sol, config,
                       conv_log)
    if collect_traces:
        report.traces = traces
    return report


def direct_solve(instance: ProblemInstance):
    """Sparse-elimination oracle for instances up to 4096 unknowns.

    For periodic BCs the constant nullspace is handled by pinning the
    first unknown to 0 after mean-subtracting the RHS.
    """
    instance.validate()
    nx, ny = instance.nx, instance.ny
    n = nx * ny
    if n > 4096:
        raise ValueError("direct_solve limited to 4096 unknowns")
    c_xp, c_xm, c_yp, c_ym = build_coefficients(
        instance.density, instance.dx, instance.dy, instance.bc)
    idx = np.arange(n).reshape(nx, ny)
    periodic = instance.bc == PERIODIC
    rows, cols, vals = [], [], []

    def add(coeff, nbr_idx, mask=None):
        r = idx if mask is None else idx[mask]
        c = nbr_idx if mask is None else nbr_idx[mask]
        v = coeff if mask is None else coeff[mask]
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    if periodic:
        add(c_xp, np.roll(idx, -1, axis=0))
        add(c_xm, np.roll(idx, 1, axis=0))
        add(c_yp, np.roll(idx, -1, axis=1))
        add(c_ym, np.roll(idx, 1, axis=1))
    else:
        mask = np.zeros((nx, ny), dtype=bool)
        mask[:-1, :] = True
        add(c_xp, np.roll(idx, -1, axis=0), mask)
        mask = np.zeros((nx, ny), dtype=bool)
        mask[1:, :] = True
        add(c_xm, np.roll(idx, 1, axis=0), mask)
        mask = np.zeros((nx, ny), dtype=bool)
        mask[:, :-1] = True
        add(c_yp, np.roll(idx, -1, axis=1), mask)
        mask = np.zeros((nx, ny), dtype=bool)
        mask[:, 1:] = True
        add(c_ym, np.roll(idx, 1, axis=1), mask)
    diag = -(c_xp + c_xm + c_yp + c_ym)
    add(diag, idx)

    A = sp.coo_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    b = instance.rhs.ravel().copy()
    if periodic:
        b -= b.mean()
        A = A.tolil()
        A[0, :] = 0.0
        A[0, 0] = 1.0
        b[0] = 0.0
        A = A.tocsr()
    x = spla.spsolve(A, b)
    sol = x.reshape(nx, ny)
    res = np.max(np.abs(
        apply_operator(sol, (c_xp, c_xm, c_yp, c_ym), instance.bc)
        - instance.rhs))
    scale = np.max(np.abs(instance.rhs))
    if scale > 0 and res > 1e-8 * scale:
        raise RuntimeError(
            f"direct solve residual {res:.3e} exceeds tolerance "
            "(singular beyond nullspace?)")
    return sol


SWEEP_HEADER = ("h,d,seed,virtual_time,wall_time_ms,total_halo_msgs,"
                "msg_percent,final_residual")


def sweep_experiment(instance, h_list, d_list, seeds, n_pes=4,
                     omega=1.5, tol=1e-8, warmup=200, conv_window=50,
                     delay_kwargs=None, step_limit=DEFAULT_STEP_LIMIT):
    """Run the event-triggered (h, d) grid plus the asynchronous baseline.

    The baseline is reported as a (h, 0) row at 100% messages; failures
    are recorded per-row with NaN residual and the sweep continues.
    Returns a list of row dicts in CSV column order.
    """
    if not h_list or not d_list or not seeds:
        raise ValueError("h_list, d_list, and seeds must be nonempty")
    delay_kwargs = dict(delay_kwargs or {})
    rows = []
    for seed in seeds:
        model = DelayModel(n_pes=n_pes, seed=seed, **delay_kwargs)
        try:
            base = run(instance, n_pes, Policy.asynchronous(),
                       backend="virtual", omega=omega, tol=tol, seed=seed,
                       delay_model=model, step_limit=step_limit,
                       conv_window=conv_window)
            base_msgs = base.total_halo_msgs
            rows.append({
                "h": 0.0, "d": 0.0, "seed": seed,
                "virtual_time": base.virtual_time, "wall_time_ms": None,
                "total_halo_msgs": base_msgs, "msg_percent": 100.0,
                "final_residual": base.final_rel_residual})
        except Exception as exc:  # keep sweeping on per-run failures
            rows.append({"h": 0.0, "d": 0.0, "seed": seed,
                         "virtual_time": None, "wall_time_ms": None,
                         "total_halo_msgs": 0, "msg_percent": float("nan"),
                         "final_residual": float("nan"),
                         "error": str(exc)})
            base_msgs = None
        for h in h_list:
            for d in d_list:
                model = DelayModel(n_pes=n_pes, seed=seed, **delay_kwargs)
                try:
                    rep = run(instance, n_pes,
                              Policy.event_triggered(h=h, d=d,
                                                     warmup=warmup),
                              backend="virtual", omega=omega, tol=tol,
                              seed=seed, delay_model=model,
                              step_limit=step_limit,
                              conv_window=conv_window)
                    pct = (100.0 * rep.total_halo_msgs / base_msgs
                           if base_msgs else float("nan"))
                    rows.append({
                        "h": h, "d": d, "seed": seed,
                        "virtual_time": rep.virtual_time,
                        "wall_time_ms": None,
                        "total_halo_msgs": rep.total_halo_msgs,
                        "msg_percent": pct,
                        "final_residual": rep.final_rel_residual})
                except Exception as exc:
                    rows.append({"h": h, "d": d, "seed": seed,
                                 "virtual_time": None, "wall_time_ms": None,
                                 "total_halo_msgs": 0,
                                 "msg_percent": float("nan"),
                                 "final_residual": float("nan"),
                                 "error": str(exc)})
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w") as f:
        f.write(SWEEP_HEADER + "\n")
        for r in rows:
            f.write(",".join(str(r[k]) for k in
                             ("h", "d", "seed", "virtual_time",
                              "wall_time_ms", "total_halo_msgs",
                              "msg_percent", "final_residual")) + "\n")


def write_conv_log(report: RunReport, path):
    """Convergence event log (pe, iter, event) as JSON-lines."""
    with open(path, "w") as f:
        for entry in report.conv_events:
            f.write(json.dumps(entry) + "\n")

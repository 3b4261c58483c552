"""Variable-coefficient 2-D Poisson discretization on a single strip.

The discrete operator at cell (i, j) is

    L(p) = c_xp*(p[i+1,j]-p[i,j]) - c_xm*(p[i,j]-p[i-1,j])
         + c_yp*(p[i,j+1]-p[i,j]) - c_ym*(p[i,j]-p[i,j-1])

with face coefficients 1/(dx^2*(rho_a+rho_b)) between x-neighbors and
1/(dy^2*(rho_a+rho_b)) between y-neighbors.  The domain is decomposed
into strips along the first (x/row) dimension; each strip carries one
ghost row above and below.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

PERIODIC = "periodic"
FIXED_ZERO = "fixed-zero"


@dataclass
class ProblemInstance:
    """Global problem description: geometry, density, RHS, boundary tag."""

    nx: int
    ny: int
    dx: float
    dy: float
    dt: float
    density: np.ndarray        # (nx, ny), strictly positive
    rhs: np.ndarray            # (nx, ny)
    bc: str = PERIODIC
    reference: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def validate(self):
        if self.density.shape != (self.nx, self.ny):
            raise ValueError("density shape mismatch")
        if self.rhs.shape != (self.nx, self.ny):
            raise ValueError("rhs shape mismatch")
        if not np.all(self.density > 0.0):
            raise ValueError("density must be strictly positive everywhere")
        if self.bc not in (PERIODIC, FIXED_ZERO):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.bc == PERIODIC:
            scale = np.max(np.abs(self.rhs))
            if scale > 0 and abs(self.rhs.sum()) > 1e-12 * scale * self.rhs.size:
                raise ValueError("periodic rhs violates compatibility condition")
        return self


@dataclass
class BoundaryVector:
    """Pressure values along one strip edge (length ny)."""

    values: np.ndarray
    side: str  # "top" (high-x edge) or "bottom" (low-x edge)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class Subdomain:
    """One PE's strip: owned rows [r0, r1) plus one ghost row each side.

    Ghost rows p[0] and p[-1] are written only by message delivery or
    extrapolation, never by the local sweep.
    """

    owner: int
    r0: int
    r1: int
    p: np.ndarray        # (m+2, ny) including ghost rows
    c_xp: np.ndarray     # (m, ny) coefficient toward row i+1
    c_xm: np.ndarray     # (m, ny) coefficient toward row i-1
    c_yp: np.ndarray     # (m, ny) coefficient toward column j+1
    c_ym: np.ndarray     # (m, ny) coefficient toward column j-1
    local_rhs: np.ndarray
    bc: str
    ny: int
    full_wrap: bool = False  # strip spans the whole periodic domain

    @property
    def m(self):
        return self.r1 - self.r0

    def top_boundary(self) -> BoundaryVector:
        return BoundaryVector(self.p[self.m].copy(), "top")

    def bottom_boundary(self) -> BoundaryVector:
        return BoundaryVector(self.p[1].copy(), "bottom")

    def set_ghost(self, side, values):
        if side == "top":
            self.p[self.m + 1, :] = values
        else:
            self.p[0, :] = values


def build_coefficients(density, dx, dy, bc=PERIODIC):
    """Face coefficient fields (c_xp, c_xm, c_yp, c_ym) on the full grid.

    Interior x-face between (i,j) and (i+1,j) carries
    1/(dx^2*(rho[i,j]+rho[i+1,j])); y-faces analogously with dy.  Under
    periodic BCs the edge faces wrap; under fixed-zero the ghost density
    is replicated from the edge cell.  Symmetry holds bitwise because the
    opposite-side arrays are shifted copies.
    """
    density = np.asarray(density, dtype=np.float64)
    if not np.all(density > 0.0):
        raise ValueError("density must be strictly positive")
    if bc == PERIODIC:
        rho_xp = np.roll(density, -1, axis=0)
        rho_yp = np.roll(density, -1, axis=1)
    elif bc == FIXED_ZERO:
        rho_xp = np.concatenate([density[1:], density[-1:]], axis=0)
        rho_yp = np.concatenate([density[:, 1:], density[:, -1:]], axis=1)
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    c_xp = 1.0 / (dx * dx * (density + rho_xp))
    c_yp = 1.0 / (dy * dy * (density + rho_yp))
    c_xm = np.roll(c_xp, 1, axis=0)
    c_ym = np.roll(c_yp, 1, axis=1)
    if bc == FIXED_ZERO:
        # boundary faces to the Dirichlet ghost: replicated density
        c_xm[0] = 1.0 / (dx * dx * 2.0 * density[0])
        c_ym[:, 0] = 1.0 / (dy * dy * 2.0 * density[:, 0])
    return c_xp, c_xm, c_yp, c_ym


def _shifted(a, axis, step, bc):
    # neighbor values a[i+step] along axis; zero-filled for fixed-zero BCs
    if bc == PERIODIC:
        return np.roll(a, -step, axis=axis)
    out = np.zeros_like(a)
    if axis == 0:
        if step == 1:
            out[:-1] = a[1:]
        else:
            out[1:] = a[:-1]
    else:
        if step == 1:
            out[:, :-1] = a[:, 1:]
        else:
            out[:, 1:] = a[:, :-1]
    return out


def apply_operator(p, coeffs, bc=PERIODIC):
    """Evaluate L(p) on the full grid (vectorized)."""
    c_xp, c_xm, c_yp, c_ym = coeffs
    p_xp = _shifted(p, 0, 1, bc)
    p_xm = _shifted(p, 0, -1, bc)
    p_yp = _shifted(p, 1, 1, bc)
    p_ym = _shifted(p, 1, -1, bc)
    diag = c_xp + c_xm + c_yp + c_ym
    return c_xp * p_xp + c_xm * p_xm + c_yp * p_yp + c_ym * p_ym - diag * p


def split_instance(inst: ProblemInstance, n_pes: int):
    """Decompose an instance into per-PE strips (1-D along rows)."""
    if inst.nx % n_pes != 0:
        raise ValueError(f"nx={inst.nx} not divisible by n_pes={n_pes}")
    c_xp, c_xm, c_yp, c_ym = build_coefficients(
        inst.density, inst.dx, inst.dy, inst.bc)
    m = inst.nx // n_pes
    subs = []
    for pe in range(n_pes):
        r0, r1 = pe * m, (pe + 1) * m
        subs.append(Subdomain(
            owner=pe, r0=r0, r1=r1,
            p=np.zeros((m + 2, inst.ny)),
            c_xp=c_xp[r0:r1].copy(), c_xm=c_xm[r0:r1].copy(),
            c_yp=c_yp[r0:r1].copy(), c_ym=c_ym[r0:r1].copy(),
            local_rhs=inst.rhs[r0:r1].copy(),
            bc=inst.bc, ny=inst.ny,
            full_wrap=(n_pes == 1 and inst.bc == PERIODIC)))
    return subs


@njit(cache=True)
def _sor_kernel(p, c_xp, c_xm, c_yp, c_ym, rhs, omega, periodic_y,
                full_wrap):
    m, ny = rhs.shape
    for i in range(1, m + 1):
        for j in range(ny):
            cxp = c_xp[i - 1, j]
            cxm = c_xm[i - 1, j]
            cyp = c_yp[i - 1, j]
            cym = c_ym[i - 1, j]
            diag = cxp + cxm + cyp + cym
            if full_wrap:
                # single strip covering the whole periodic domain:
                # classic in-array wrap instead of lagged ghost rows
                p_xp = p[i + 1, j] if i < m else p[1, j]
                p_xm = p[i - 1, j] if i > 1 else p[m, j]
            else:
                p_xp = p[i + 1, j]
                p_xm = p[i - 1, j]
            if periodic_y:
                p_yp = p[i, (j + 1) % ny]
                p_ym = p[i, (j - 1) % ny]
            else:
                p_yp = p[i, j + 1] if j + 1 < ny else 0.0
                p_ym = p[i, j - 1] if j - 1 >= 0 else 0.0
            gs = (cxp * p_xp + cxm * p_xm + cyp * p_yp + cym * p_ym
                  - rhs[i - 1, j]) / diag
            p[i, j] = (1.0 - omega) * p[i, j] + omega * gs


@njit(cache=True)
def _residual_kernel(p, c_xp, c_xm, c_yp, c_ym, rhs, periodic_y,
                     full_wrap):
    m, ny = rhs.shape
    r = 0.0
    for i in range(1, m + 1):
        for j in range(ny):
            cxp = c_xp[i - 1, j]
            cxm = c_xm[i - 1, j]
            cyp = c_yp[i - 1, j]
            cym = c_ym[i - 1, j]
            diag = cxp + cxm + cyp + cym
            if full_wrap:
                p_xp = p[i + 1, j] if i < m else p[1, j]
                p_xm = p[i - 1, j] if i > 1 else p[m, j]
            else:
                p_xp = p[i + 1, j]
                p_xm = p[i - 1, j]
            if periodic_y:
                p_yp = p[i, (j + 1) % ny]
                p_ym = p[i, (j - 1) % ny]
            else:
                p_yp = p[i, j + 1] if j + 1 < ny else 0.0
                p_ym = p[i, j - 1] if j - 1 >= 0 else 0.0
            res = (cxp * p_xp + cxm * p_xm + cyp * p_yp + cym * p_ym
                   - diag * p[i, j] - rhs[i - 1, j])
            a = abs(res)
            if a != a:
                # NaN must poison the max, not fall out of the comparison
                return a
            if a > r:
                r = a
    return r


def sor_sweep(sub: Subdomain, omega: float):
    """One lexicographic Gauss-Seidel pass with relaxation omega.

    Updates sub.p in place (owned rows only) and returns the post-sweep
    (top, bottom) BoundaryVectors.
    """
    if not (0.0 < omega < 2.0):
        raise ValueError("omega must lie in (0, 2)")
    _sor_kernel(sub.p, sub.c_xp, sub.c_xm, sub.c_yp, sub.c_ym,
                sub.local_rhs, omega, sub.bc == PERIODIC, sub.full_wrap)
    return sub.top_boundary(), sub.bottom_boundary()


def local_residual(sub: Subdomain) -> float:
    """max |L(p) - b| over the cells owned by this strip."""
    return _residual_kernel(sub.p, sub.c_xp, sub.c_xm, sub.c_yp, sub.c_ym,
                            sub.local_rhs, sub.bc == PERIODIC,
                            sub.full_wrap)


def l1_norm(values) -> float:
    """Sum of absolute values of a boundary vector."""
    if isinstance(values, BoundaryVector):
        values = values.values
    return float(np.sum(np.abs(values)))

"""Desk-scale problem generators: manufactured validation case and a
synthetic multiphase bubble case, plus JSON (de)serialization."""

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import (PERIODIC, ProblemInstance, apply_operator,
                   build_coefficients)


@dataclass
class BubbleSpec:
    """Circular low-density regions embedded in a heavier fluid."""

    centers: list = field(default_factory=list)  # (x, y) in domain units
    radius: float = 0.1
    rho_inside: float = 1.0
    rho_outside: float = 1000.0

    def validate(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.rho_inside <= 0 or self.rho_outside <= 0:
            raise ValueError("densities must be positive")
        return self


def rhs_from_velocity(u_star, v_star, dx, dy, dt):
    """Pressure-equation RHS from a predicted staggered velocity field.

    b[i,j] = (1/(2*dt)) * ((u[i+1,j]-u[i,j])/dx + (v[i,j+1]-v[i,j])/dy)

    u_star lives on x-faces, shape (nx+1, ny); v_star on y-faces, shape
    (nx, ny+1).  Under periodic wrap (matching first/last face values)
    the divergence telescopes and the global sum of b vanishes.
    """
    u_star = np.asarray(u_star, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    if u_star.ndim != 2 or v_star.ndim != 2:
        raise ValueError("velocity fields must be 2-D")
    nx = u_star.shape[0] - 1
    ny = v_star.shape[1] - 1
    if u_star.shape != (nx + 1, ny) or v_star.shape != (nx, ny + 1):
        raise ValueError(
            f"staggered shape mismatch: u{u_star.shape} v{v_star.shape}")
    div = ((u_star[1:, :] - u_star[:-1, :]) / dx
           + (v_star[:, 1:] - v_star[:, :-1]) / dy)
    return div / (2.0 * dt)


def manufactured_instance(nx, ny, dt=1.0):
    """Constant-density periodic instance whose exact discrete solution
    (up to a constant) is sin(2*pi*x/Lx)*cos(2*pi*y/Ly) at cell centers.

    The RHS is produced by pushing the reference field through the
    discrete operator, so the reference solves the assembled system to
    rounding.
    """
    if nx < 4 or ny < 4:
        raise ValueError("grid must be at least 4x4")
    dx, dy = 1.0 / nx, 1.0 / ny
    x = (np.arange(nx) + 0.5) * dx
    y = (np.arange(ny) + 0.5) * dy
    p_ref = np.sin(2 * np.pi * x)[:, None] * np.cos(2 * np.pi * y)[None, :]
    density = np.ones((nx, ny))
    coeffs = build_coefficients(density, dx, dy, PERIODIC)
    rhs = apply_operator(p_ref, coeffs, PERIODIC)
    inst = ProblemInstance(nx=nx, ny=ny, dx=dx, dy=dy, dt=dt,
                           density=density, rhs=rhs, bc=PERIODIC,
                           reference=p_ref,
                           meta={"kind": "manufactured"})
    return inst.validate()


def _periodic_velocity(nx, ny, dx, dy, rng, n_modes=4):
    # smooth random periodic field sampled at staggered face positions;
    # integer wavenumbers guarantee exact wrap of the first/last faces
    xf = np.arange(nx + 1) * dx
    yc = (np.arange(ny) + 0.5) * dy
    xc = (np.arange(nx) + 0.5) * dx
    yf = np.arange(ny + 1) * dy
    lx, ly = nx * dx, ny * dy
    u = np.zeros((nx + 1, ny))
    v = np.zeros((nx, ny + 1))
    for _ in range(n_modes):
        kx = rng.integers(1, 4)
        ky = rng.integers(1, 4)
        au, av = rng.normal(size=2)
        phx, phy = rng.uniform(0, 2 * np.pi, size=2)
        u += au * np.sin(2 * np.pi * kx * xf[:, None] / lx + phx) \
                * np.cos(2 * np.pi * ky * yc[None, :] / ly + phy)
        v += av * np.cos(2 * np.pi * kx * xc[:, None] / lx + phx) \
                * np.sin(2 * np.pi * ky * yf[None, :] / ly + phy)
    return u, v


def bubble_instance(nx, ny, spec: BubbleSpec, dt=1.0, seed=0,
                    aspect=None):
    """Synthetic multiphase instance: bubbles in a liquid, periodic BCs.

    The RHS comes from a seeded smooth divergence-bearing velocity field
    and is mean-subtracted to enforce periodic compatibility.  Fully
    determined by (nx, ny, spec, dt, seed).
    """
    spec.validate()
    dx, dy = 1.0 / nx, 1.0 / ny
    lx, ly = 1.0, 1.0
    x = (np.arange(nx) + 0.5) * dx
    y = (np.arange(ny) + 0.5) * dy
    xx, yy = np.meshgrid(x, y, indexing="ij")
    density = np.full((nx, ny), spec.rho_outside)
    for (cx, cy) in spec.centers:
        if not (spec.radius <= cx <= lx - spec.radius
                and spec.radius <= cy <= ly - spec.radius):
            raise ValueError(f"bubble at ({cx}, {cy}) does not fit in domain")
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= spec.radius ** 2
        density[inside] = spec.rho_inside
    rng = np.random.default_rng(seed)
    u, v = _periodic_velocity(nx, ny, dx, dy, rng)
    rhs = rhs_from_velocity(u, v, dx, dy, dt)
    rhs -= rhs.mean()
    inst = ProblemInstance(nx=nx, ny=ny, dx=dx, dy=dy, dt=dt,
                           density=density, rhs=rhs, bc=PERIODIC,
                           meta={"kind": "bubble", "seed": int(seed),
                                 "spec": {
                                     "centers": [list(c) for c in spec.centers],
                                     "radius": spec.radius,
                                     "rho_inside": spec.rho_inside,
                                     "rho_outside": spec.rho_outside,
                                 }})
    return inst.validate()


def instance_to_json(inst: ProblemInstance) -> str:
    """Self-describing JSON for reproducibility."""
    doc = {
        "nx": inst.nx, "ny": inst.ny,
        "dx": inst.dx, "dy": inst.dy, "dt": inst.dt,
        "bc": inst.bc,
        "density": inst.density.tolist(),
        "rhs": inst.rhs.tolist(),
        "reference": None if inst.reference is None else inst.reference.tolist(),
        "meta": inst.meta,
    }
    return json.dumps(doc)


def instance_from_json(text: str) -> ProblemInstance:
    doc = json.loads(text)
    ref = doc.get("reference")
    inst = ProblemInstance(
        nx=doc["nx"], ny=doc["ny"], dx=doc["dx"], dy=doc["dy"],
        dt=doc["dt"],
        density=np.array(doc["density"], dtype=np.float64),
        rhs=np.array(doc["rhs"], dtype=np.float64),
        bc=doc["bc"],
        reference=None if ref is None else np.array(ref, dtype=np.float64),
        meta=doc.get("meta", {}))
    return inst.validate()

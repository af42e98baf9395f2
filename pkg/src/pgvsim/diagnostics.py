"""Diagnostic recovery of velocity and surface pressure from temperature.

The momentum balance is linear and diagonal in the horizontal Fourier index:
for each wavevector kappa != 0 and each velocity profile psi_m the 2x2 system

    (lam I + f J) vhat(kappa, m) = i kappa (C_int That(kappa, .))[m]

with J the rotation, lam = |kappa|^2 + (m pi)^2, is inverted in closed form.
The surface pressure gradient is orthogonal to every zero-mean profile, so it
drops out of those rows entirely; it is fixed by the depth-averaged balance,
which yields psurf(kappa) = -sum_m c_ps[m] That(kappa, m) and closes the
depth-integrated divergence constraint identically. The kappa = 0 momentum
balance forces a vanishing velocity, and the pressure gauge pins psurf(0) = 0.

Two independent checks accompany the solver: ``momentum_residual`` evaluates
the recovered state at quadrature nodes and projects the raw balance onto test
profiles, and ``dense_momentum_solve`` assembles the full saddle system (with
an explicit barotropic velocity unknown and the integral constraint) for one
wavevector and solves it densely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import SpectralSpace

__all__ = [
    "DiagnosticState",
    "dense_momentum_solve",
    "momentum_residual",
    "surface_pressure",
    "velocity_from_temperature",
    "vertical_velocity",
]


@dataclass(frozen=True)
class DiagnosticState:
    """Velocity coefficients (..., NKX, NKY, NzV) and surface pressure."""

    v1: np.ndarray
    v2: np.ndarray
    psurf: np.ndarray


def surface_pressure(space: SpectralSpace, that: np.ndarray) -> np.ndarray:
    """Surface pressure coefficients (..., NKX, NKY); gauge-fixed to 0 at kappa=0."""
    ps = -(that @ space.coupling.c_ps)
    hx, hy = space.table.nx // 2, space.table.ny // 2
    ps = ps.copy()
    ps[..., hx, hy] = 0.0
    return ps


def velocity_from_temperature(
    space: SpectralSpace, that: np.ndarray, f: float
) -> DiagnosticState:
    """Solve the momentum balance for the horizontal velocity coefficients."""
    b = that @ space.coupling.c_int.T
    rx = space.ikx * b
    ry = space.iky * b
    lam = space.lamv_slots
    denom = lam * lam + f * f
    v1 = (lam * rx + f * ry) / denom
    v2 = (lam * ry - f * rx) / denom
    return DiagnosticState(v1=v1, v2=v2, psurf=surface_pressure(space, that))


def vertical_velocity(
    space: SpectralSpace, v1: np.ndarray, v2: np.ndarray
) -> np.ndarray:
    """Vertical velocity on the sine basis from the incompressibility relation.

    w(z) = -int_{-1}^z div v, and integrating psi_m gives chi_m / (m pi), so
    the coefficient map is a diagonal scaling of the horizontal divergence.
    """
    div = space.ikx * v1 + space.iky * v2
    return -div * space.coupling.d_w


def momentum_residual(
    space: SpectralSpace, that: np.ndarray, f: float, diag: DiagnosticState | None = None
) -> dict[str, float]:
    """Residual of the raw momentum balance, measured off the solve path.

    Every term is re-evaluated pointwise at the vertical quadrature nodes from
    basis tables (no coupling matrices involved) and projected onto the test
    profiles {1, psi_1..psi_NzV}. Returns the largest absolute entry for the
    zero-mean rows ('interior'), the depth-averaged rows ('barotropic'), and
    the depth-integrated divergence ('constraint').
    """
    if diag is None:
        diag = velocity_from_temperature(space, that, f)
    bt, bv = space.basis_t, space.basis_v
    w = bv.weights

    # profiles at nodes, complex coefficients per (kappa, node)
    v1n = diag.v1 @ bv.values
    v2n = diag.v2 @ bv.values
    tin = that @ bt.ivalues  # running integral of T at nodes
    lv1 = (space.lamv_slots * diag.v1) @ bv.values
    lv2 = (space.lamv_slots * diag.v2) @ bv.values

    ps = diag.psurf[..., None]
    res1 = space.ikx * ps - space.ikx * tin - f * v2n + lv1
    res2 = space.iky * ps - space.iky * tin + f * v1n + lv2

    def proj(res, test):
        return res @ (test * w[:, None])

    inter = max(
        float(np.max(np.abs(proj(res1, bv.values.T)))),
        float(np.max(np.abs(proj(res2, bv.values.T)))),
    )
    baro = max(
        float(np.max(np.abs(proj(res1, np.ones_like(w)[:, None])))),
        float(np.max(np.abs(proj(res2, np.ones_like(w)[:, None])))),
    )
    div = space.ikx * v1n + space.iky * v2n
    constraint = float(np.max(np.abs(div @ w)))
    return {"interior": inter, "barotropic": baro, "constraint": constraint}


def dense_momentum_solve(
    space: SpectralSpace, that_column: np.ndarray, f: float, kappa: tuple[float, float]
) -> tuple[np.ndarray, np.ndarray, complex]:
    """Dense saddle-point solve of the momentum balance at one wavevector.

    Unknowns: velocity coefficients on the extended profile set {1, psi_m}
    (the barotropic mode is an explicit unknown here, not excluded a priori)
    and the surface pressure. Equations: the momentum balance projected on the
    same profiles plus the depth-integrated divergence constraint. All matrix
    entries come from quadrature. Returns (v1 ext-coeffs, v2 ext-coeffs, ps);
    index 0 of the velocity arrays is the barotropic coefficient, which the
    solve itself drives to zero.
    """
    kx, ky = kappa
    if kx == 0.0 and ky == 0.0:
        raise ValueError("dense solve applies to kappa != 0")
    bt, bv = space.basis_t, space.basis_v
    w = bv.weights
    nv = bv.count
    next_ = nv + 1
    # extended profile table: row 0 is the constant, rows 1.. are psi_m
    prof = np.vstack([np.ones_like(w), bv.values])
    ksq = kx * kx + ky * ky
    lam_ext = ksq + np.concatenate([[0.0], (np.arange(1, nv + 1) * np.pi) ** 2])
    gram = (prof * w) @ prof.T  # identity up to quadrature error

    n = 2 * next_ + 1
    a = np.zeros((n, n), dtype=complex)
    rhs = np.zeros(n, dtype=complex)
    iv1 = slice(0, next_)
    iv2 = slice(next_, 2 * next_)
    ips = 2 * next_

    # momentum rows, tested against prof[k]
    a[iv1, iv1] = lam_ext[None, :] * gram
    a[iv2, iv2] = lam_ext[None, :] * gram
    a[iv1, iv2] = -f * gram
    a[iv2, iv1] = f * gram
    ones_proj = (prof * w) @ np.ones_like(w)  # <1, prof_k>
    a[iv1, ips] = 1j * kx * ones_proj
    a[iv2, ips] = 1j * ky * ones_proj
    tin = that_column @ bt.ivalues
    tproj = (prof * w) @ tin
    rhs[iv1] = 1j * kx * tproj
    rhs[iv2] = 1j * ky * tproj
    # constraint row: depth integral of the divergence
    a[ips, iv1] = 1j * kx * ones_proj
    a[ips, iv2] = 1j * ky * ones_proj

    sol = np.linalg.solve(a, rhs)
    return sol[iv1], sol[iv2], complex(sol[ips])

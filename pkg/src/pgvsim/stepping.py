"""Time integration of the temperature equation and its linearizations.

The prognostic variable is h = T - Z, where Z is the auxiliary damped
Ornstein-Uhlenbeck process driven by the same noise: h then satisfies a
pathwise PDE with the rough forcing replaced by the bounded source
ou_alpha * Z, which is what the canonical scheme integrates. One step of the
canonical scheme treats diffusion implicitly and everything else explicitly:

    (1 + lam dt) h' = h + dt (ou_alpha Z - B(h + Z)),    Z' = ou_step(Z, dW)

with B the advective form. A structurally different exponential Euler scheme
on T itself serves as a cross-check, a controlled variant couples a follower
trajectory to a leader through a low-mode feedback gain, and the tangent step
is the exact derivative of the canonical step at frozen noise (the property
the finite-difference validation measures).

All steppers broadcast over leading batch axes; ensembles are integrated as
single array programs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagnostics import velocity_from_temperature, vertical_velocity
from .fields import (
    SpectralSpace,
    from_grid,
    horizontal_grid,
    norm_h,
    project_low,
)
from .forcing import NoiseOperator, WienerPath, h0_inverse, ou_step

__all__ = [
    "BlowUpError",
    "Stepper",
    "nonlinear_term",
    "step_coupled",
    "step_h",
    "step_t_direct",
    "tangent_step",
]


class BlowUpError(RuntimeError):
    """Trajectory norm crossed the divergence threshold."""

    def __init__(self, time: float, norm: float):
        super().__init__(f"solution blew up at t={time:g} (|T|_H={norm:.3e})")
        self.time = time
        self.norm = norm


def _advect(
    space: SpectralSpace, vel_source: np.ndarray, scalar: np.ndarray, f: float
) -> np.ndarray:
    """Advection form: velocity diagnosed from ``vel_source`` transports
    ``scalar``. Leading batch axes of the two arguments broadcast."""
    diag = velocity_from_temperature(space, vel_source, f)
    what = vertical_velocity(space, diag.v1, diag.v2)
    v1g = horizontal_grid(space, diag.v1) @ space.basis_v.values
    v2g = horizontal_grid(space, diag.v2) @ space.basis_v.values
    wg = horizontal_grid(space, what) @ space.basis_w.values
    sx = horizontal_grid(space, space.ikx * scalar) @ space.basis_t.values
    sy = horizontal_grid(space, space.iky * scalar) @ space.basis_t.values
    sz = horizontal_grid(space, scalar) @ space.basis_t.dvalues
    return from_grid(space, v1g * sx + v2g * sy + wg * sz)


def nonlinear_term(space: SpectralSpace, that: np.ndarray, f: float) -> np.ndarray:
    """Full advective term B(T) = (v . grad) T + w dT/dz in coefficient space."""
    return _advect(space, that, that, f)


def _scatter_active(noise: NoiseOperator, z: np.ndarray) -> np.ndarray:
    return noise.table.coefficients_from_modes(z, sel=noise.active)


def step_h(
    space: SpectralSpace,
    noise: NoiseOperator,
    h: np.ndarray,
    z: np.ndarray,
    dw: np.ndarray,
    dt: float,
    f: float,
    linear: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Canonical IMEX step of the shifted equation; returns (h', z')."""
    zc = _scatter_active(noise, z)
    if linear:
        b = 0.0
    else:
        b = nonlinear_term(space, h + zc, f)
    rhs = h + dt * (noise.ou_alpha * zc - b)
    hp = rhs / (1.0 + dt * space.table.lam_slots)
    return hp, ou_step(noise, z, dw, dt)


def step_t_direct(
    space: SpectralSpace,
    noise: NoiseOperator,
    that: np.ndarray,
    dw: np.ndarray,
    dt: float,
    f: float,
    linear: bool = False,
) -> np.ndarray:
    """Exponential Euler step of the temperature equation itself.

    Structurally independent of the canonical scheme (different variable,
    different linear propagator, noise injected directly), so trajectory
    agreement between the two is a meaningful consistency check.
    """
    x = space.table.lam_slots * dt
    decay = np.exp(-x)
    phi1 = -np.expm1(-x) / x
    if linear:
        b = 0.0
    else:
        b = nonlinear_term(space, that, f)
    forced = _scatter_active(noise, noise.g * dw)
    return decay * that - phi1 * dt * b + decay * forced


def step_coupled(
    space: SpectralSpace,
    noise: NoiseOperator,
    h_follow: np.ndarray,
    z: np.ndarray,
    dw: np.ndarray,
    dt: float,
    f: float,
    k_gain: float,
    n_ctrl: int,
    h_lead_next: np.ndarray,
    linear: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Follower step with low-mode feedback toward the leader's updated state.

    The follower sees the same auxiliary process and noise as the leader plus
    the control K P_n (h_lead' - h_follow'), applied implicitly. Returns
    (h_follow', z', cost increment), the last being dt K^2 |G0^-1 P_n r'|^2
    per batch element: the squared Girsanov drift this control would require,
    infinite if the noise misses a controlled mode (H0DegenerateError).
    """
    table = space.table
    ginv = h0_inverse(noise, n_ctrl)
    zc = _scatter_active(noise, z)
    if linear:
        b = 0.0
    else:
        b = nonlinear_term(space, h_follow + zc, f)
    rhs = h_follow + dt * (noise.ou_alpha * zc - b)
    rhs = rhs + k_gain * dt * project_low(h_lead_next, table, n_ctrl)
    ctrl = np.zeros(table.n_modes)
    ctrl[:n_ctrl] = 1.0
    mask_re, mask_im = table.expand_diag(ctrl)
    lam = table.lam_slots
    hp_re = rhs.real / (1.0 + dt * (lam + k_gain * mask_re))
    hp_im = rhs.imag / (1.0 + dt * (lam + k_gain * mask_im))
    hp = hp_re + 1j * hp_im
    r_next = table.mode_coefficients(h_lead_next - hp, sel=slice(0, n_ctrl))
    cost = dt * k_gain**2 * np.sum((r_next * ginv) ** 2, axis=-1)
    return hp, ou_step(noise, z, dw, dt), cost


def tangent_step(
    space: SpectralSpace,
    chi: np.ndarray,
    that_base: np.ndarray,
    dt: float,
    f: float,
    linear: bool = False,
) -> np.ndarray:
    """Exact derivative of the canonical step along the base trajectory.

    The perturbation transports the base scalar with its own diagnosed
    velocity and is transported by the base velocity; noise differentiates to
    zero. ``chi`` may carry a leading batch axis of tangent vectors.
    """
    if linear:
        db = 0.0
    else:
        db = _advect(space, chi, that_base, f) + _advect(space, that_base, chi, f)
    return (chi - dt * db) / (1.0 + dt * space.table.lam_slots)


@dataclass
class Stepper:
    """Binds a space, noise operator, and scheme into a stateful integrator.

    ``dt`` must be an integer multiple of ``dt_wiener``; each integrator step
    consumes that many consecutive increments from each member's path. The
    blow-up guard raises :class:`BlowUpError` instead of letting NaNs
    propagate silently.
    """

    space: SpectralSpace
    noise: NoiseOperator
    f: float = 1.0
    dt: float = 1e-3
    scheme: str = "imex-h"
    dt_wiener: float | None = None
    linear: bool = False
    blowup_threshold: float = 1e8
    substeps: int = field(init=False)

    def __post_init__(self) -> None:
        if self.scheme not in ("imex-h", "exp-euler-direct"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt_wiener is None:
            self.dt_wiener = self.dt
        ratio = self.dt / self.dt_wiener
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(
                f"dt={self.dt} is not an integer multiple of dt_wiener={self.dt_wiener}"
            )
        self.substeps = int(round(ratio))

    def gather_increments(self, paths: list[WienerPath], j: int) -> np.ndarray:
        """Stack one integrator step's increments for a batch of paths."""
        j0 = j * self.substeps
        return np.stack([p.increments_summed(j0, self.substeps) for p in paths])

    def step(
        self, h: np.ndarray, z: np.ndarray, dw: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        if z.ndim == 1 and dw.ndim == 2 and dw.shape[0] == 1:
            dw = dw[0]  # keep single-trajectory states unbatched
        if self.scheme == "imex-h":
            return step_h(
                self.space, self.noise, h, z, dw, self.dt, self.f, self.linear
            )
        zc = _scatter_active(self.noise, z)
        tp = step_t_direct(
            self.space, self.noise, h + zc, dw, self.dt, self.f, self.linear
        )
        zp = ou_step(self.noise, z, dw, self.dt)
        return tp - _scatter_active(self.noise, zp), zp

    def step_tangent(self, chi: np.ndarray, that_base: np.ndarray) -> np.ndarray:
        return tangent_step(self.space, chi, that_base, self.dt, self.f, self.linear)

    def check_blowup(self, h: np.ndarray, z: np.ndarray, t: float) -> None:
        that = h + _scatter_active(self.noise, z)
        norm = float(np.max(norm_h(that)))
        if not np.isfinite(norm) or norm > self.blowup_threshold:
            raise BlowUpError(t, norm)

    def run(
        self,
        h: np.ndarray,
        z: np.ndarray,
        paths: list[WienerPath],
        n_steps: int,
        j0: int = 0,
        t0: float = 0.0,
        check_every: int = 50,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Advance a batch n_steps; paths are indexed from integrator step j0."""
        for k in range(n_steps):
            dw = self.gather_increments(paths, j0 + k)
            h, z = self.step(h, z, dw)
            if (k + 1) % check_every == 0 or k == n_steps - 1:
                self.check_blowup(h, z, t0 + (k + 1) * self.dt)
        return h, z

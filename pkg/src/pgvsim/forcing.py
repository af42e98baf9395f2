"""Stochastic forcing: noise amplitudes, Wiener increments, and the OU process.

The noise is diagonal in the real eigenbasis: mode n (in the sorted ordering)
carries amplitude g_n = sigma lambda_n^(-decay_q) for n < n_active and zero
beyond, driven by independent scalar Brownian motions. Increments come from a
counter-based generator keyed by (path seed, step index), so a path is a pure
function of its seed: any window of it can be regenerated in any order, and
shifting the path in time is just an offset on the index. That makes the
two-sided evaluations needed for pullback limits exact rather than replayed,
and it gives bit-identical trajectories regardless of scheduling.

The stationary helper draws the auxiliary Ornstein-Uhlenbeck state from its
invariant Gaussian with a key derived from the same (seed, absolute index)
pair through a tagged hash, so shifting the path and shifting the sample index
commute bit-exactly; the tag keeps the draw independent of the increments.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import ModeTable

__all__ = [
    "H0DegenerateError",
    "NoiseOperator",
    "OUState",
    "WienerPath",
    "build_noise",
    "h0_inverse",
    "member_seed",
    "ou_step",
    "stationary_ou_sample",
    "wiener_shift",
]

_MASK64 = (1 << 64) - 1
_STATIONARY_TAG = 0x9E3779B97F4A7C15  # distinct key space from increment draws
_REL_TOL = 1e-9


class H0DegenerateError(ValueError):
    """The requested modes are not all forced, so the noise map is singular."""


@dataclass(frozen=True)
class NoiseOperator:
    """Per-mode noise amplitudes plus the scalar functionals built from them."""

    table: ModeTable
    sigma: float
    decay_q: float
    n_active: int
    ou_alpha: float
    g: np.ndarray  # (n_active,) amplitudes for the leading sorted modes

    @property
    def b0(self) -> float:
        """Total noise intensity sum g_n^2."""
        return float(np.sum(self.g**2))

    @property
    def s1(self) -> float:
        """Gradient-weighted intensity sum lambda_n g_n^2."""
        return float(np.sum(self.table.lam[: self.n_active] * self.g**2))

    @property
    def active(self) -> slice:
        return slice(0, self.n_active)

    def stationary_std(self) -> np.ndarray:
        """Invariant standard deviation of each forced OU mode."""
        lam = self.table.lam[: self.n_active]
        return self.g / np.sqrt(2.0 * (lam + self.ou_alpha))


def build_noise(
    table: ModeTable,
    sigma: float,
    decay_q: float,
    n_active: int,
    ou_alpha: float,
) -> NoiseOperator:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if n_active < 1 or n_active > table.n_modes:
        raise ValueError(
            f"n_active must be in [1, {table.n_modes}], got {n_active}"
        )
    if ou_alpha < 0:
        raise ValueError(f"ou_alpha must be non-negative, got {ou_alpha}")
    g = sigma * table.lam[:n_active] ** (-decay_q)
    return NoiseOperator(
        table=table,
        sigma=sigma,
        decay_q=decay_q,
        n_active=n_active,
        ou_alpha=ou_alpha,
        g=g,
    )


def h0_inverse(noise: NoiseOperator, n: int) -> np.ndarray:
    """Inverse amplitudes 1/g_n on the first n modes.

    Raises :class:`H0DegenerateError` when any of those modes is unforced:
    the coupling control has to steer every mode below the cut, which is
    impossible if the noise does not reach one of them.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n > noise.n_active or np.any(noise.g[:n] == 0.0):
        raise H0DegenerateError(
            f"hypothesis H0 unsatisfiable: noise does not force all of the"
            f" first {n} modes (n_active={noise.n_active})"
        )
    return 1.0 / noise.g[:n]


@dataclass(frozen=True)
class WienerPath:
    """Two-sided Brownian increments, a pure function of (seed, index).

    Increment j covers [j dt_wiener, (j+1) dt_wiener) relative to the path's
    own origin; ``offset`` relocates that origin, which is how time shifts
    compose. Negative indices are valid (two's-complement key encoding).
    """

    seed: int
    n_modes: int
    dt_wiener: float
    offset: int = 0

    def increments(self, j: int) -> np.ndarray:
        """The n_modes independent increments of step j, scaled by sqrt(dt)."""
        key = np.array(
            [self.seed & _MASK64, (self.offset + j) & _MASK64], dtype=np.uint64
        )
        rng = np.random.Generator(np.random.Philox(key=key))
        return rng.standard_normal(self.n_modes) * np.sqrt(self.dt_wiener)

    def increments_summed(self, j0: int, count: int) -> np.ndarray:
        """Sum of increments j0 .. j0+count-1 (one integrator step's worth)."""
        out = np.zeros(self.n_modes)
        for j in range(j0, j0 + count):
            out += self.increments(j)
        return out


def wiener_shift(path: WienerPath, t: float) -> WienerPath:
    """The path seen from the origin shifted by t (an increment multiple).

    Shifts compose additively and commute with everything keyed off absolute
    indices, which is the group property the pullback construction relies on.
    """
    steps = t / path.dt_wiener
    rounded = round(steps)
    if abs(steps - rounded) > _REL_TOL * max(1.0, abs(steps)):
        raise ValueError(
            f"shift {t} is not an integer multiple of dt_wiener={path.dt_wiener}"
        )
    return replace(path, offset=path.offset + int(rounded))


@dataclass(frozen=True)
class OUState:
    """Auxiliary process state: real coefficients on the forced modes."""

    z: np.ndarray
    step_index: int = 0


def ou_step(
    noise: NoiseOperator, z: np.ndarray, dw: np.ndarray, dt: float
) -> np.ndarray:
    """One exponential step of the damped auxiliary process.

    z' = exp(-(lambda + ou_alpha) dt) (z + g dw), applied per forced mode;
    leading axes of z and dw are batch dimensions.
    """
    lam = noise.table.lam[: noise.n_active]
    decay = np.exp(-(lam + noise.ou_alpha) * dt)
    return decay * (z + noise.g * dw)


def stationary_ou_sample(noise: NoiseOperator, path: WienerPath, j: int) -> np.ndarray:
    """Draw the auxiliary state at index j from its invariant Gaussian.

    Keyed by the path's absolute index, so sampling after a time shift equals
    shifting after sampling: S(t, s; omega) = S(t - s, 0; shifted omega) holds
    bit-exactly for draws produced this way.
    """
    idx = (path.offset + j) & _MASK64
    key = np.array([(path.seed ^ _STATIONARY_TAG) & _MASK64, idx], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal(noise.n_active) * noise.stationary_std()


def member_seed(master_seed: int, purpose: int, member: int) -> int:
    """Independent per-member path seed derived from the run's master seed."""
    ss = np.random.SeedSequence([master_seed & _MASK64, purpose & _MASK64, member])
    return int(ss.generate_state(1, dtype=np.uint64)[0])

"""Headline experiments: dissipation checks, pullback attraction, attractor
dimension, and coupling-based mixing estimates.

Every experiment is a pure function from (space, noise, parameters, seed) to a
JSON-ready report dict; file output lives in the CLI layer. Ensembles are cut
into fixed micro-batches of :data:`BATCH` members that are integrated as
single array programs; parallel runs distribute whole micro-batches and the
final reductions always consume the reassembled per-member arrays in member
order, so results are byte-identical for any worker count.

Randomness is budgeted through (master seed, purpose, member) keys: each
member owns a counter-based Wiener path, and every auxiliary draw (initial
conditions, stationary starts) comes from its own tagged stream, never from a
shared mutable generator.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import (
    dense_momentum_solve,
    momentum_residual,
    velocity_from_temperature,
)
from .fields import (
    SpectralSpace,
    build_space,
    from_grid,
    inner_h,
    norm_h,
    norm_v,
    random_low_field,
    to_grid,
)
from .forcing import (
    NoiseOperator,
    WienerPath,
    build_noise,
    h0_inverse,
    member_seed,
    ou_step,
    stationary_ou_sample,
)
from .stepping import Stepper, nonlinear_term, step_coupled

__all__ = [
    "BATCH",
    "EnergyLedger",
    "fit_exponential_rate",
    "lyapunov_spectrum",
    "run_mixing",
    "run_pullback",
    "run_simulate",
    "run_validation",
    "verify_exponential_estimate",
    "verify_lyapunov_structure",
    "wasserstein_decay",
    "wasserstein_estimate",
]

BATCH = 32

_P_STRUCT = 1
_P_EST = 2
_P_PULL = 3
_P_SPEC = 4
_P_MIX = 5
_P_WA = 6
_P_WB = 7
_P_SIM = 8

_IC_TAG = 0xA11CE


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + BATCH, n)) for lo in range(0, n, BATCH)]


def _map_jobs(fn, payloads, jobs: int):
    if jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, payloads))


def _steps_for(t: float, dt: float) -> int:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)) or n < 0:
        raise ValueError(f"time {t} is not an integer multiple of dt={dt}")
    return int(n)


def _ic_rng(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, _IC_TAG]))


def _member_paths(
    noise: NoiseOperator, seed: int, purpose: int, lo: int, hi: int, dt_w: float
) -> list[WienerPath]:
    return [
        WienerPath(member_seed(seed, purpose, i), noise.n_active, dt_w)
        for i in range(lo, hi)
    ]


def _stationary_block(
    noise: NoiseOperator, paths: list[WienerPath], j: int = 0
) -> np.ndarray:
    return np.stack([stationary_ou_sample(noise, p, j) for p in paths])


def fit_exponential_rate(
    times,
    values,
    floor: float = 0.0,
    min_points: int = 3,
    skip_fraction: float = 0.0,
) -> dict:
    """Least-squares slope of log(values) against time.

    ``skip_fraction`` drops the leading fraction of the time span (transient
    skipping); points at or below ``floor`` are excluded so machine-zero tails
    cannot poison the fit. If too few points survive, the earliest positive
    values are pulled back in. The window actually used is recorded.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    t_start = t[0] + skip_fraction * (t[-1] - t[0])
    mask = (v > max(floor, 0.0)) & (t >= t_start)
    if int(mask.sum()) < min_points:
        pos = np.flatnonzero(v > 0.0)
        mask = np.zeros_like(mask)
        mask[pos[:min_points]] = True
    if int(mask.sum()) < 2:
        raise ValueError("not enough positive values to fit a rate")
    coef = np.polyfit(t[mask], np.log(v[mask]), 1)
    tw = t[mask]
    return {
        "rate": float(coef[0]),
        "intercept": float(coef[1]),
        "window": [float(tw[0]), float(tw[-1])],
        "n_points": int(mask.sum()),
    }


@dataclass
class EnergyLedger:
    """Running energy bookkeeping for one trajectory.

    Rows hold (t, |T|^2, |T|_V^2, int_0^t |T|_V^2 ds, E_T(t), running
    sup(E_T - B0 t)) with E_T(t) = |T(t)|^2 + int_0^t |T|_V^2 ds. The integral
    uses the left rule on the appended grid, so recomputing any column from
    the raw ones reproduces the running columns exactly.
    """

    b0: float
    rows: list = field(default_factory=list)
    _integral: float = 0.0
    _sup: float = -math.inf
    _last: tuple | None = None

    def append(self, t: float, sq_h: float, sq_v: float) -> None:
        if self._last is not None:
            t_prev, sq_v_prev = self._last
            if t < t_prev:
                raise ValueError("ledger times must be non-decreasing")
            self._integral += (t - t_prev) * sq_v_prev
        e_t = sq_h + self._integral
        self._sup = max(self._sup, e_t - self.b0 * t)
        self.rows.append([t, sq_h, sq_v, self._integral, e_t, self._sup])
        self._last = (t, sq_v)

    @property
    def columns(self) -> list[str]:
        return ["t", "sq_h", "sq_v", "int_sq_v", "e_t", "sup_drift"]


# ---------------------------------------------------------------------------
# energy structure of the stochastic solution


def _structure_worker(payload) -> np.ndarray:
    (space, noise, f, dt, seed, t0, lo, hi, check_steps) = payload
    stepper = Stepper(space, noise, f=f, dt=dt)
    paths = _member_paths(noise, seed, _P_STRUCT, lo, hi, dt)
    z = _stationary_block(noise, paths)
    h = t0[None, ...] - noise.table.coefficients_from_modes(z, sel=noise.active)
    out = np.empty((hi - lo, len(check_steps)))
    j = 0
    for col, target in enumerate(check_steps):
        h, z = stepper.run(h, z, paths, target - j, j0=j, t0=j * dt)
        j = target
        that = h + noise.table.coefficients_from_modes(z, sel=noise.active)
        out[:, col] = norm_h(that) ** 2
    return out


def verify_lyapunov_structure(
    space: SpectralSpace,
    noise: NoiseOperator,
    *,
    f: float,
    dt: float,
    seed: int,
    members: int = 500,
    checkpoints=(1.0, 2.0, 5.0, 10.0),
    t0_norm: float = 2.0,
    n_low: int = 32,
    jobs: int = 1,
) -> dict:
    """Check the mean-square dissipation bound along a stochastic ensemble.

    All members start from one deterministic state (own stationary auxiliary
    draws, own noise) and the ensemble mean of |T(t)|^2 is compared with
    exp(-2 lambda_1 t) |T0|^2 + B0/lambda_1 plus three standard errors at each
    checkpoint. The continuous bound has a factor-2 slack on the tail term and
    the implicit scheme over-damps, so failures indicate real defects.
    """
    if members < 100:
        raise ValueError("need at least 100 members for the MC bound check")
    table = space.table
    t0 = random_low_field(table, _ic_rng(seed, _P_STRUCT), n_low, t0_norm, "h")
    check_steps = [_steps_for(c, dt) for c in checkpoints]
    if sorted(check_steps) != list(check_steps) or len(set(check_steps)) != len(
        check_steps
    ):
        raise ValueError("checkpoints must be strictly increasing")
    payloads = [
        (space, noise, f, dt, seed, t0, lo, hi, check_steps)
        for lo, hi in _chunks(members)
    ]
    parts = _map_jobs(_structure_worker, payloads, jobs)
    sq = np.concatenate(parts, axis=0)

    lam1 = table.lam1
    rows = []
    ok = True
    for col, tc in enumerate(checkpoints):
        mean = float(np.mean(sq[:, col]))
        se = float(np.std(sq[:, col], ddof=1) / math.sqrt(members))
        bound = math.exp(-2.0 * lam1 * tc) * t0_norm**2 + noise.b0 / lam1
        passed = mean <= bound + 3.0 * se
        ok = ok and passed
        rows.append(
            {
                "t": float(tc),
                "mean_sq": mean,
                "bound": bound,
                "se": se,
                "passed": bool(passed),
            }
        )
    return {
        "kind": "lyapunov-structure",
        "passed": bool(ok),
        "members": members,
        "t0_norm": t0_norm,
        "lam1": lam1,
        "b0": noise.b0,
        "checkpoints": rows,
        "series": {
            "columns": ["t", "mean_sq", "bound", "se"],
            "rows": [[r["t"], r["mean_sq"], r["bound"], r["se"]] for r in rows],
        },
    }


def _estimate_worker(payload) -> np.ndarray:
    (space, noise, f, dt, seed, t0, lo, hi, n_steps, gamma0) = payload
    stepper = Stepper(space, noise, f=f, dt=dt)
    table = noise.table
    paths = _member_paths(noise, seed, _P_EST, lo, hi, dt)
    z = _stationary_block(noise, paths)
    h = t0[None, ...] - table.coefficients_from_modes(z, sel=noise.active)
    that = h + table.coefficients_from_modes(z, sel=noise.active)
    integral = np.zeros(hi - lo)
    running = norm_h(that) ** 2  # statistic at t = 0
    for j in range(n_steps):
        integral += dt * norm_v(that, table) ** 2
        dw = stepper.gather_increments(paths, j)
        h, z = stepper.step(h, z, dw)
        that = h + table.coefficients_from_modes(z, sel=noise.active)
        stat = norm_h(that) ** 2 + integral - noise.b0 * (j + 1) * dt
        running = np.maximum(running, stat)
    stepper.check_blowup(h, z, n_steps * dt)
    return np.exp(gamma0 * running)


def verify_exponential_estimate(
    space: SpectralSpace,
    noise: NoiseOperator,
    *,
    f: float,
    dt: float,
    seed: int,
    members: int = 1000,
    horizon: float = 10.0,
    t0_norm: float = 0.5,
    n_low: int = 32,
    jobs: int = 1,
) -> dict:
    """Exponential moment of the pathwise energy functional.

    The statistic is exp(gamma0 sup_t [ E_T(t) - B0 t ]) for the energy
    functional E_T(t) = |T(t)|^2 + int_0^t |T|_V^2 ds, gamma0 = lam1/(4 B0);
    its mean must stay below 2 exp(gamma0 |T0|^2) plus three standard errors
    (one-sided). A relative standard error above 20% flags a heavy-tailed
    sample; it is reported, not failed on.
    """
    if noise.b0 <= 0:
        raise ValueError("exponential estimate requires active noise (B0 > 0)")
    table = space.table
    t0 = random_low_field(table, _ic_rng(seed, _P_EST), n_low, t0_norm, "h")
    n_steps = _steps_for(horizon, dt)
    gamma0 = table.lam1 / (4.0 * noise.b0)
    payloads = [
        (space, noise, f, dt, seed, t0, lo, hi, n_steps, gamma0)
        for lo, hi in _chunks(members)
    ]
    parts = _map_jobs(_estimate_worker, payloads, jobs)
    x = np.concatenate(parts)
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(members))
    bound = 2.0 * math.exp(gamma0 * t0_norm**2)
    heavy = se > 0.2 * mean
    passed = mean <= bound + 3.0 * se
    return {
        "kind": "exponential-estimate",
        "passed": bool(passed),
        "members": members,
        "horizon": horizon,
        "gamma0": gamma0,
        "t0_norm": t0_norm,
        "mean": mean,
        "se": se,
        "bound": bound,
        "heavy_tail_warning": bool(heavy),
        "series": {
            "columns": ["mean", "se", "bound"],
            "rows": [[mean, se, bound]],
        },
    }


# ---------------------------------------------------------------------------
# pullback attraction


def run_pullback(
    space: SpectralSpace,
    noise: NoiseOperator,
    *,
    f: float,
    dt: float,
    seed: int,
    s_list=(-1.0, -2.0, -4.0, -8.0),
    members: int = 16,
    radius: float = 1.0,
    n_low: int = 32,
    burn_in: float = 40.0,
) -> dict:
    """Pullback contraction of an initial ball under one noise realization.

    One Wiener path plays the role of omega. The auxiliary process starts from
    its stationary draw well before the earliest release and marches forward,
    so every release sees the same pathwise Z. The same ensemble of initial
    states (a V-ball of the given radius) is released at each s < 0 and
    integrated to time 0. The ensemble V-diameter at time 0 must decay at rate
    lambda_1/2 or faster in |s| and be non-increasing past the first release;
    the absorbing-radius estimate max |T(0)|_V + |Z(0)|_V must stabilize.
    """
    table = space.table
    if members < 2:
        raise ValueError("pullback needs at least two ensemble members")
    if any(s >= 0 for s in s_list):
        raise ValueError("release times must be negative")
    if any(b >= a for a, b in zip(s_list, s_list[1:])):
        raise ValueError("s_list must be decreasing (towards the past)")
    path = WienerPath(member_seed(seed, _P_PULL, 0), noise.n_active, dt)
    stepper = Stepper(space, noise, f=f, dt=dt)

    j_burn = -(_steps_for(-min(s_list), dt) + _steps_for(burn_in, dt))
    js = {s: -_steps_for(-s, dt) for s in s_list}
    marks = set(js.values())

    # march the shared auxiliary state from the stationary draw up to t=0
    z = stationary_ou_sample(noise, path, j_burn)
    z_at: dict[int, np.ndarray] = {}
    for j in range(j_burn, 0):
        if j in marks:
            z_at[j] = z.copy()
        z = ou_step(noise, z, path.increments(j), dt)
    z_final = z
    z_final_v = float(
        norm_v(table.coefficients_from_modes(z_final, sel=noise.active), table)
    )

    rng = _ic_rng(seed, _P_PULL)
    t0 = random_low_field(table, rng, n_low, radius, "v", batch=(members,))

    rows = []
    for s in s_list:
        j0 = js[s]
        h = t0 - table.coefficients_from_modes(z_at[j0], sel=noise.active)
        h, zf = stepper.run(h, z_at[j0].copy(), [path], -j0, j0=j0, t0=s)
        that = h + table.coefficients_from_modes(zf, sel=noise.active)
        diam_h = 0.0
        diam_v = 0.0
        for a in range(members - 1):
            delta = that[a + 1 :] - that[a]
            diam_h = max(diam_h, float(np.max(norm_h(delta))))
            diam_v = max(diam_v, float(np.max(norm_v(delta, table))))
        vmax = float(np.max(norm_v(that, table)))
        rows.append(
            {
                "s": float(s),
                "diameter_h": diam_h,
                "diameter_v": diam_v,
                "v_max": vmax,
                "r2": vmax + z_final_v,
            }
        )

    ages = [-r["s"] for r in rows]
    fit = fit_exponential_rate(ages, [r["diameter_v"] for r in rows])
    lam1 = table.lam1
    rate_ok = fit["rate"] <= -lam1 / 2.0
    diam_seq = [r["diameter_v"] for r in rows]
    monotone_ok = all(b <= a for a, b in zip(diam_seq[1:], diam_seq[2:]))
    by_age = sorted(rows, key=lambda r: r["s"])  # most negative first
    r2a, r2b = by_age[0]["r2"], by_age[1]["r2"]
    r2_ok = abs(r2a - r2b) <= 0.2 * max(abs(r2b), 1e-30)
    return {
        "kind": "pullback",
        "passed": bool(rate_ok and r2_ok and monotone_ok),
        "members": members,
        "radius": radius,
        "lam1": lam1,
        "rate": fit["rate"],
        "rate_bound": -lam1 / 2.0,
        "rate_ok": bool(rate_ok),
        "monotone_ok": bool(monotone_ok),
        "r2_estimate": max(r["r2"] for r in rows),
        "r2_last_two": [r2a, r2b],
        "r2_ok": bool(r2_ok),
        "releases": rows,
        "fit": fit,
        "series": {
            "columns": ["s", "diameter_h", "diameter_v", "v_max", "r2"],
            "rows": [
                [r["s"], r["diameter_h"], r["diameter_v"], r["v_max"], r["r2"]]
                for r in rows
            ],
        },
    }


# ---------------------------------------------------------------------------
# tangent volumes and attractor dimension


def lyapunov_spectrum(
    space: SpectralSpace,
    noise: NoiseOperator,
    *,
    f: float,
    dt: float,
    seed: int,
    k: int = 16,
    spinup: float = 2.0,
    horizon: float = 10.0,
    reorth_every: int = 10,
    linear: bool = False,
    t0_norm: float = 1.0,
    n_low: int = 32,
) -> dict:
    """Leading Lyapunov exponents via tangent-block QR in the energy geometry.

    Tangent vectors are orthonormalized in the V inner product (represented as
    Euclidean vectors sqrt(lambda_n) u_n, so plain QR applies); log volume
    growth accumulates from the R diagonals. Reports sorted exponents, their
    partial sums, the contracting order d* (first d with negative partial
    sum), the Kaplan-Yorke interpolation, and a convergence warning when the
    estimates still moved more than 5% over the second half of the horizon.
    """
    if k < 1:
        raise ValueError("need at least one tangent vector")
    table = space.table
    stepper = Stepper(space, noise, f=f, dt=dt, linear=linear)
    rng = _ic_rng(seed, _P_SPEC)
    if t0_norm > 0:
        t0 = random_low_field(table, rng, n_low, t0_norm, "h")
    else:
        t0 = np.zeros(table.shape, dtype=complex)
    path = WienerPath(member_seed(seed, _P_SPEC, 0), noise.n_active, dt)
    z = stationary_ou_sample(noise, path, 0)
    h = t0 - table.coefficients_from_modes(z, sel=noise.active)

    n_spin = _steps_for(spinup, dt)
    if n_spin:
        h, z = stepper.run(h, z, [path], n_spin)
    n_steps = _steps_for(horizon, dt)
    n_blocks = n_steps // reorth_every
    if n_blocks < 2:
        raise ValueError("horizon must cover at least two reorthogonalizations")

    sqrt_lam = np.sqrt(table.lam)
    y0 = rng.standard_normal((table.n_modes, k))
    q, _ = np.linalg.qr(y0)
    chi = table.coefficients_from_modes((q / sqrt_lam[:, None]).T)

    logs = np.zeros(k)
    logs_half = np.zeros(k)
    half_block = n_blocks // 2
    j = n_spin
    for block in range(n_blocks):
        for _ in range(reorth_every):
            that = h + table.coefficients_from_modes(z, sel=noise.active)
            chi = stepper.step_tangent(chi, that)
            dw = stepper.gather_increments([path], j)
            h, z = stepper.step(h, z, dw)
            j += 1
        u = table.mode_coefficients(chi)
        y = (u * sqrt_lam).T
        q, r = np.linalg.qr(y)
        diag = np.abs(np.diag(r))
        if np.any(diag == 0.0):
            raise RuntimeError("tangent block degenerated during QR")
        logs += np.log(diag)
        if block + 1 == half_block:
            logs_half = logs.copy()
        chi = table.coefficients_from_modes((q / sqrt_lam[:, None]).T)
        stepper.check_blowup(h, z, j * dt)

    total_t = n_blocks * reorth_every * dt
    half_t = half_block * reorth_every * dt
    raw = logs / total_t
    raw_half = logs_half / half_t
    scale = np.maximum(np.abs(raw), 1e-12)
    drift = float(np.max(np.abs(raw - raw_half) / scale))
    converged = drift <= 0.05

    exponents = np.sort(raw)[::-1]
    csum = np.cumsum(exponents)
    neg = np.flatnonzero(csum < 0.0)
    d_star = int(neg[0]) + 1 if neg.size else None
    if exponents[0] < 0.0:
        ky_dim = 0.0
    else:
        nonneg = np.flatnonzero(csum >= 0.0)
        k0 = int(nonneg[-1]) + 1
        ky_dim = float(k0) if k0 >= k else k0 + float(csum[k0 - 1] / abs(exponents[k0]))
    log_gamma = horizon * csum
    gamma_proxy = np.exp(np.minimum(log_gamma, 700.0))
    return {
        "kind": "dimension",
        "passed": bool(d_star is not None),
        "k": k,
        "dt": dt,
        "horizon": horizon,
        "reorth_every": reorth_every,
        "exponents": [float(e) for e in exponents],
        "partial_sums": [float(c) for c in csum],
        "log_volume_proxy": [float(g) for g in log_gamma],
        "volume_proxy": [float(g) for g in gamma_proxy],
        "d_star": d_star,
        "kaplan_yorke": float(ky_dim),
        "convergence_drift": drift,
        "convergence_warning": bool(not converged),
        "series": {
            "columns": ["order", "exponent", "partial_sum"],
            "rows": [
                [float(i + 1), float(exponents[i]), float(csum[i])] for i in range(k)
            ],
        },
    }


# ---------------------------------------------------------------------------
# coupling control and mixing


def _mixing_worker(payload):
    (
        space,
        noise,
        f,
        dt,
        seed,
        t0_pairs,
        lo,
        hi,
        n_steps,
        sample_every,
        k_gain,
        n_ctrl,
    ) = payload
    table = noise.table
    stepper = Stepper(space, noise, f=f, dt=dt)
    paths = _member_paths(noise, seed, _P_MIX, lo, hi, dt)
    z = _stationary_block(noise, paths)
    zc = table.coefficients_from_modes(z, sel=noise.active)
    h_lead = t0_pairs[:, 0] - zc
    h_fol = t0_pairs[:, 1] - zc
    nb = hi - lo
    n_samples = n_steps // sample_every + 1
    r_h = np.empty((nb, n_samples))
    r_v = np.empty((nb, n_samples))
    cost_cum = np.zeros((nb, n_samples))
    diff = h_lead - h_fol
    r_h[:, 0] = norm_h(diff)
    r_v[:, 0] = norm_v(diff, table)
    cost = np.zeros(nb)
    col = 1
    for j in range(n_steps):
        dw = stepper.gather_increments(paths, j)
        h_next, z_next = stepper.step(h_lead, z, dw)
        h_fol, _, inc = step_coupled(
            space, noise, h_fol, z, dw, dt, f, k_gain, n_ctrl, h_next
        )
        cost += inc
        h_lead, z = h_next, z_next
        if (j + 1) % sample_every == 0:
            diff = h_lead - h_fol
            r_h[:, col] = norm_h(diff)
            r_v[:, col] = norm_v(diff, table)
            cost_cum[:, col] = cost
            col += 1
    stepper.check_blowup(h_lead, z, n_steps * dt)
    return r_h, r_v, cost_cum, cost


def run_mixing(
    space: SpectralSpace,
    noise: NoiseOperator,
    *,
    f: float,
    dt: float,
    seed: int,
    k_gain: float = 200.0,
    mu_min: float = 50.0,
    pairs: int = 100,
    eps: float = 0.25,
    horizon: float = 0.6,
    budget: float = 1e6,
    sample_every: int = 5,
    n_low: int = 32,
    jobs: int = 1,
    wasserstein_members: int = 64,
    wasserstein_horizon: float = 2.0,
    wasserstein_dt: float = 0.01,
    wasserstein_sample_every: int = 25,
) -> dict:
    """Two-trajectory coupling with low-mode feedback control.

    The controlled mode count is the smallest prefix whose first excluded
    eigenvalue reaches ``mu_min``; the noise must force every controlled mode
    (else :class:`~pgvsim.forcing.H0DegenerateError` propagates). Verifies
    that E |T - T~|^(2 eps) decays at rate eps or faster (equivalently, the
    exp(eps t)-weighted moment does not grow), that at least 90% of pairs keep
    the accumulated squared control drift within budget, and that an
    independent two-ensemble Wasserstein-style estimate also decays.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    table = space.table
    n_ctrl = int(np.searchsorted(table.lam, mu_min, side="left"))
    if n_ctrl < 1:
        raise ValueError(f"mu_min={mu_min} excludes no modes")
    if k_gain > 0:
        h0_inverse(noise, n_ctrl)  # raises H0DegenerateError when unsatisfiable

    radius = math.sqrt(noise.b0 / table.lam1)
    rng = _ic_rng(seed, _P_MIX)
    t0_pairs = random_low_field(table, rng, n_low, radius, "h", batch=(pairs, 2))
    n_steps = _steps_for(horizon, dt)
    if n_steps % sample_every != 0:
        raise ValueError("horizon must be a multiple of sample_every * dt")
    payloads = [
        (
            space,
            noise,
            f,
            dt,
            seed,
            t0_pairs[lo:hi],
            lo,
            hi,
            n_steps,
            sample_every,
            k_gain,
            n_ctrl,
        )
        for lo, hi in _chunks(pairs)
    ]
    parts = _map_jobs(_mixing_worker, payloads, jobs)
    r_h = np.concatenate([p[0] for p in parts], axis=0)
    r_v = np.concatenate([p[1] for p in parts], axis=0)
    cost_cum = np.concatenate([p[2] for p in parts], axis=0)
    cost = np.concatenate([p[3] for p in parts])

    times = np.arange(r_h.shape[1]) * sample_every * dt
    mean_pow = np.mean(r_h ** (2.0 * eps), axis=0)
    floor = 1e-12 * mean_pow[0]
    fit = fit_exponential_rate(times, mean_pow, floor=floor, skip_fraction=0.5)
    rate_weighted = fit["rate"] + eps  # rate of the exp(eps t)-weighted moment
    slope_ok = fit["rate"] <= -eps
    success_frac = float(np.mean(cost <= budget))
    success_ok = success_frac >= 0.9

    wass = wasserstein_decay(
        space,
        noise,
        f=f,
        dt=wasserstein_dt,
        seed=seed,
        members=wasserstein_members,
        horizon=wasserstein_horizon,
        sample_every=wasserstein_sample_every,
        jobs=jobs,
    )
    passed = bool(slope_ok and success_ok and wass["passed"])
    qs = np.quantile(cost, [0.5, 0.9, 0.99])
    series_rows = [
        [
            float(times[i]),
            float(mean_pow[i]),
            float(np.mean(r_h[:, i])),
            float(np.mean(r_v[:, i])),
            float(np.mean(cost_cum[:, i])),
        ]
        for i in range(times.size)
    ]
    return {
        "kind": "mixing",
        "passed": passed,
        "pairs": pairs,
        "k_gain": k_gain,
        "n_ctrl": n_ctrl,
        "mu_next": float(table.mu_next(n_ctrl)),
        "eps": eps,
        "rate": fit["rate"],
        "rate_bound": -eps,
        "rate_weighted": rate_weighted,
        "rate_ok": bool(slope_ok),
        "fit": fit,
        "budget": budget,
        "cost_p50": float(qs[0]),
        "cost_p90": float(qs[1]),
        "cost_p99": float(qs[2]),
        "cost_max": float(np.max(cost)),
        "success_frac": success_frac,
        "success_ok": bool(success_ok),
        "wasserstein": wass,
        "series": {
            "columns": ["t", "mean_pow", "mean_r_h", "mean_r_v", "mean_cost"],
            "rows": series_rows,
        },
    }


def wasserstein_estimate(
    ensemble_a: np.ndarray,
    ensemble_b: np.ndarray,
    table,
    n_dict: int = 16,
) -> float:
    """Dictionary lower bound on the Wasserstein-1 distance of two ensembles.

    The dictionary is tanh of each of the ``n_dict`` lowest mode coordinates
    plus tanh of the field norm; every entry is 1-Lipschitz and bounded, so
    the largest mean discrepancy is a genuine lower bound on the
    dual-Lipschitz distance between the empirical laws. Symmetric, and zero
    for identical ensembles.
    """
    a = np.asarray(ensemble_a)
    b = np.asarray(ensemble_b)
    if a.ndim < 4 or a.shape[0] == 0 or b.ndim < 4 or b.shape[0] == 0:
        raise ValueError("ensembles must be non-empty batches of fields")
    fa = _dictionary_features(a, table, n_dict)
    fb = _dictionary_features(b, table, n_dict)
    return float(np.max(np.abs(fa.mean(axis=0) - fb.mean(axis=0))))


def _dictionary_features(states: np.ndarray, table, n_dict: int) -> np.ndarray:
    u = table.mode_coefficients(states, sel=slice(0, n_dict))
    feats = np.empty(states.shape[:-3] + (n_dict + 1,))
    feats[..., :n_dict] = np.tanh(u)
    feats[..., n_dict] = np.tanh(norm_h(states))
    return feats


def _wasserstein_worker(payload):
    (space, noise, f, dt, seed, purpose, t0, lo, hi, n_steps, sample_every, n_dict) = (
        payload
    )
    table = noise.table
    stepper = Stepper(space, noise, f=f, dt=dt)
    paths = _member_paths(noise, seed, purpose, lo, hi, dt)
    z = _stationary_block(noise, paths)
    h = t0[None, ...] - table.coefficients_from_modes(z, sel=noise.active)
    n_samples = n_steps // sample_every + 1
    feats = np.empty((hi - lo, n_samples, n_dict + 1))
    marg = np.empty((hi - lo, n_samples))

    def record(col):
        that = h + table.coefficients_from_modes(z, sel=noise.active)
        feats[:, col, :] = _dictionary_features(that, table, n_dict)
        marg[:, col] = table.mode_coefficients(that, sel=slice(0, 1))[:, 0]

    record(0)
    col = 1
    for j in range(n_steps):
        dw = stepper.gather_increments(paths, j)
        h, z = stepper.step(h, z, dw)
        if (j + 1) % sample_every == 0:
            record(col)
            col += 1
    return feats, marg


def wasserstein_decay(
    space: SpectralSpace,
    noise: NoiseOperator,
    *,
    f: float,
    dt: float,
    seed: int,
    members: int = 64,
    horizon: float = 2.0,
    sample_every: int = 25,
    n_dict: int = 16,
    n_low: int = 32,
    jobs: int = 1,
) -> dict:
    """Decay of the dictionary distance between two differently started laws.

    Two uncoupled ensembles evolve from distinct deterministic states with
    independent noise; at each sample time the dictionary estimate (see
    :func:`wasserstein_estimate`) and an exact sorted-sample W1 on the first
    mode's marginal are recorded. Passing means the fitted decay rate of the
    dictionary estimate is negative over the recorded window.
    """
    if members < 2:
        raise ValueError("need at least two members per ensemble")
    table = space.table
    radius = math.sqrt(noise.b0 / table.lam1)
    t0a = random_low_field(table, _ic_rng(seed, _P_WA), n_low, radius, "h")
    t0b = random_low_field(table, _ic_rng(seed, _P_WB), n_low, radius, "h")
    n_steps = _steps_for(horizon, dt)
    if n_steps % sample_every != 0:
        raise ValueError("horizon must be a multiple of sample_every * dt")

    sides = {}
    for tag, purpose, t0 in (("a", _P_WA, t0a), ("b", _P_WB, t0b)):
        payloads = [
            (space, noise, f, dt, seed, purpose, t0, lo, hi, n_steps, sample_every, n_dict)
            for lo, hi in _chunks(members)
        ]
        parts = _map_jobs(_wasserstein_worker, payloads, jobs)
        sides[tag] = (
            np.concatenate([p[0] for p in parts], axis=0),
            np.concatenate([p[1] for p in parts], axis=0),
        )

    feats_a, marg_a = sides["a"]
    feats_b, marg_b = sides["b"]
    wtilde = np.max(np.abs(feats_a.mean(axis=0) - feats_b.mean(axis=0)), axis=1)
    w1_marg = np.mean(
        np.abs(np.sort(marg_a, axis=0) - np.sort(marg_b, axis=0)), axis=0
    )
    times = np.arange(wtilde.size) * sample_every * dt
    floor = max(1e-12 * wtilde[0], 0.0)
    fit = fit_exponential_rate(times, wtilde, floor=floor, skip_fraction=0.5)
    passed = fit["rate"] < 0.0
    rows = [
        [float(times[i]), float(wtilde[i]), float(w1_marg[i])]
        for i in range(times.size)
    ]
    return {
        "kind": "wasserstein",
        "passed": bool(passed),
        "members": members,
        "rate": fit["rate"],
        "fit": fit,
        "series": {"columns": ["t", "w_lower", "w1_mode1"], "rows": rows},
    }


# ---------------------------------------------------------------------------
# plain simulation and self-validation


def run_simulate(
    space: SpectralSpace,
    noise: NoiseOperator,
    *,
    f: float,
    dt: float,
    seed: int,
    scheme: str = "imex-h",
    dt_wiener: float | None = None,
    linear: bool = False,
    horizon: float = 10.0,
    sample_every: int = 10,
    t0_norm: float = 1.0,
    n_low: int = 32,
    snapshot_every: int = 0,
    snapshot_cb=None,
) -> dict:
    """Integrate one trajectory, recording the energy ledger and snapshots."""
    table = space.table
    stepper = Stepper(
        space, noise, f=f, dt=dt, scheme=scheme, dt_wiener=dt_wiener, linear=linear
    )
    rng = _ic_rng(seed, _P_SIM)
    t0 = random_low_field(table, rng, n_low, t0_norm, "h")
    path = WienerPath(member_seed(seed, _P_SIM, 0), noise.n_active, stepper.dt_wiener)
    z = stationary_ou_sample(noise, path, 0)
    h = t0 - table.coefficients_from_modes(z, sel=noise.active)
    n_steps = _steps_for(horizon, dt)

    ledger = EnergyLedger(b0=noise.b0)
    norm_z_col = []

    def record(j):
        that = h + table.coefficients_from_modes(z, sel=noise.active)
        ledger.append(
            j * dt, float(norm_h(that) ** 2), float(norm_v(that, table) ** 2)
        )
        norm_z_col.append(float(np.sqrt(np.sum(z**2))))
        return that

    that = record(0)
    if snapshot_cb is not None and snapshot_every:
        snapshot_cb(0, 0.0, that)
    for j in range(n_steps):
        dw = stepper.gather_increments([path], j)
        h, z = stepper.step(h, z, dw)
        if (j + 1) % sample_every == 0:
            record(j + 1)
        if snapshot_cb is not None and snapshot_every and (j + 1) % snapshot_every == 0:
            that_now = h + table.coefficients_from_modes(z, sel=noise.active)
            snapshot_cb(j + 1, (j + 1) * dt, that_now)
        if (j + 1) % 50 == 0 or j == n_steps - 1:
            stepper.check_blowup(h, z, (j + 1) * dt)
    rows = [
        ledger.rows[i] + [norm_z_col[i]] for i in range(len(ledger.rows))
    ]
    final = ledger.rows[-1]
    return {
        "kind": "simulate",
        "passed": True,
        "horizon": horizon,
        "final_t": final[0],
        "final_sq_h": final[1],
        "final_sq_v": final[2],
        "sup_drift": final[5],
        "series": {"columns": ledger.columns + ["norm_z"], "rows": rows},
    }


def _regularity_ratios(
    space: SpectralSpace, f: float, seed: int, samples: int, lam_cut: float
):
    """Sup over unit-norm low-mode samples of velocity/temperature norm ratios."""
    table = space.table
    n_common = int(np.searchsorted(table.lam, lam_cut, side="left"))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCAFE]))
    u = rng.standard_normal((samples, n_common))
    that = table.coefficients_from_modes(u, sel=slice(0, n_common))
    that = that / norm_h(that)[:, None, None, None]
    diag = velocity_from_temperature(space, that, f)
    lamv = space.lamv_slots
    sq = np.abs(diag.v1) ** 2 + np.abs(diag.v2) ** 2
    h1_sq = np.sum(lamv * sq, axis=(-3, -2, -1))
    h2_sq = np.sum(lamv**2 * sq, axis=(-3, -2, -1))
    tv = norm_v(that, table)
    ratio1 = float(np.max(np.sqrt(h1_sq)))  # |T|_H = 1 by construction
    ratio2 = float(np.max(np.sqrt(h2_sq) / tv))
    return ratio1, ratio2, n_common


def run_validation(
    *,
    seed: int,
    robin_alpha: float = 1.0,
    f: float = 1.0,
    samples: int = 100,
) -> dict:
    """Fast structural self-checks on the operators and transforms.

    Covers eigenvalue residuals, basis orthonormality, transform round trips,
    the momentum solve against both the quadrature residual and the dense
    saddle solve, advective skew-symmetry, the stationary auxiliary variance,
    and stability of velocity regularity ratios across resolutions.
    """
    checks: list[dict] = []

    def add(name, value, threshold):
        checks.append(
            {
                "name": name,
                "value": float(value),
                "threshold": float(threshold),
                "passed": bool(value <= threshold),
            }
        )

    space = build_space(2 * np.pi, 2 * np.pi, 16, 16, 8, 8, robin_alpha)
    table = space.table
    bt = space.basis_t

    res = np.max(np.abs(bt.roots * np.tan(bt.roots) - robin_alpha))
    add("robin_root_residual", res, 1e-12)

    w = bt.weights
    gram_t = (bt.values * w) @ bt.values.T
    add("gram_t", np.max(np.abs(gram_t - np.eye(bt.count))), 1e-10)
    bv = space.basis_v
    gram_v = (bv.values * w) @ bv.values.T
    add("gram_v", np.max(np.abs(gram_v - np.eye(bv.count))), 1e-10)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBEEF]))
    that = random_low_field(table, rng, table.n_modes, 1.0, "h")
    roundtrip = from_grid(space, to_grid(space, that))
    add("transform_roundtrip", np.max(np.abs(roundtrip - that)), 1e-12)

    resid = momentum_residual(space, that, f)
    add("momentum_interior", resid["interior"], 1e-11)
    add("momentum_barotropic", resid["barotropic"], 1e-14)
    add("momentum_constraint", resid["constraint"], 1e-13)

    diag = velocity_from_temperature(space, that, f)
    err = 0.0
    for kxi, kyi in ((1, 0), (0, 1), (2, 3), (-3, 5)):
        i, j = kxi + table.nx // 2, kyi + table.ny // 2
        kap = (2 * np.pi * kxi / table.lx, 2 * np.pi * kyi / table.ly)
        v1e, v2e, pse = dense_momentum_solve(space, that[i, j], f, kap)
        err = max(
            err,
            float(np.max(np.abs(v1e[1:] - diag.v1[i, j]))),
            float(np.max(np.abs(v2e[1:] - diag.v2[i, j]))),
            float(np.abs(v1e[0])),
            float(np.abs(v2e[0])),
            abs(pse - diag.psurf[i, j]),
        )
    add("momentum_dense_oracle", err, 1e-10)

    b = nonlinear_term(space, that, f)
    add("advection_skew", abs(inner_h(b, that)), 1e-10)

    noise = build_noise(table, 0.1, 1.5, 64, 1.0)
    m = 5000
    draws = np.stack(
        [
            stationary_ou_sample(
                noise, WienerPath(member_seed(seed, 99, i), 64, 1.0), 0
            )
            for i in range(m)
        ]
    )
    lam = table.lam[:64]
    stat = np.sum(lam**2 * draws**2, axis=1)
    target = float(np.sum(lam**2 * noise.g**2 / (2.0 * (lam + noise.ou_alpha))))
    se = float(np.std(stat, ddof=1) / math.sqrt(m))
    add("ou_stationary_dev", abs(float(np.mean(stat)) - target), 4.0 * se)

    # same low-eigenvalue temperature samples, richer velocity expansion
    space8 = build_space(2 * np.pi, 2 * np.pi, 8, 8, 8, 8, robin_alpha)
    space16 = build_space(2 * np.pi, 2 * np.pi, 16, 16, 16, 16, robin_alpha)
    r1a, r2a, ncom = _regularity_ratios(space8, f, seed, samples, 20.0)
    r1b, r2b, _ = _regularity_ratios(space16, f, seed, samples, 20.0)
    add("regularity_ratio_h1_drift", abs(r1b - r1a) / r1a, 0.1)
    add("regularity_ratio_h2_drift", abs(r2b - r2a) / r2a, 0.1)

    passed = all(c["passed"] for c in checks)
    return {
        "kind": "validate",
        "passed": bool(passed),
        "checks": checks,
        "regularity": {
            "common_modes": ncom,
            "h1_ratio_coarse": r1a,
            "h1_ratio_fine": r1b,
            "h2_ratio_coarse": r2a,
            "h2_ratio_fine": r2b,
        },
        "series": {
            "columns": ["check", "value", "threshold", "passed"],
            "rows": [
                [c["name"], c["value"], c["threshold"], float(c["passed"])]
                for c in checks
            ],
        },
    }

"""Eigenstructure of the diffusion operator on a periodic box times (-1, 0).

The scalar (temperature) operator is -Laplace with a Robin condition
dT/dz + alpha*T = 0 at the surface z=0 and a Neumann condition at the bottom
z=-1; horizontally everything is periodic on [0, Lx) x [0, Ly). Its
eigenfunctions factor into Fourier modes exp(i kappa.x) and vertical profiles
cos(mu_m (z+1)) where mu_m solves the transcendental relation
mu tan(mu) = alpha. Velocity uses free-slip cosine profiles cos(m pi (z+1))
(m >= 1; the depth mean is excluded), and the reconstructed vertical velocity
uses the conjugate sine profiles.

The :class:`ModeTable` enumerates *real* eigenmodes: one cosine and one sine
flavor per representative wavevector plus single modes at kappa = 0, sorted by
eigenvalue. A prefix of that ordering spans a genuine invariant subspace, so
truncating to the first N modes is an orthogonal projection that keeps fields
real-valued regardless of where the cut lands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModeTable",
    "VerticalBasisT",
    "VerticalBasisV",
    "VerticalBasisW",
    "build_mode_table",
    "robin_eigenvalues",
    "vertical_quadrature",
]

_SQRT2 = np.sqrt(2.0)


def vertical_quadrature(nz_quad: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to the interval (-1, 0).

    Exact for polynomials of degree <= 2*nz_quad - 1.
    """
    if nz_quad < 2:
        raise ValueError(f"nz_quad must be >= 2, got {nz_quad}")
    x, w = np.polynomial.legendre.leggauss(nz_quad)
    # affine map [-1, 1] -> [-1, 0]
    nodes = (x - 1.0) / 2.0
    weights = w / 2.0
    return nodes, weights


def _robin_objective(mu: np.ndarray | float, alpha: float):
    return mu * np.tan(mu) - alpha


def robin_eigenvalues(robin_alpha: float, count: int) -> np.ndarray:
    """Ascending roots mu_m of mu tan(mu) = robin_alpha, m = 1..count.

    The m-th root lies strictly inside ((m-1) pi, (m-1) pi + pi/2), where
    mu tan(mu) increases monotonically from 0 to +inf; bracketed bisection is
    therefore guaranteed to converge and a few Newton steps polish the root to
    machine precision.
    """
    if not (robin_alpha > 0):
        raise ValueError(f"robin_alpha must be positive, got {robin_alpha}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    roots = np.empty(count)
    for m in range(1, count + 1):
        base = (m - 1) * np.pi
        lo, hi = base, base + np.pi / 2.0
        # shrink the bracket away from the endpoints (tan pole / zero)
        a = lo + 1e-12 * max(1.0, base)
        b = hi - 1e-12 * max(1.0, hi)
        fa = _robin_objective(a, robin_alpha)
        for _ in range(200):
            mid = 0.5 * (a + b)
            if mid == a or mid == b:
                break
            fm = _robin_objective(mid, robin_alpha)
            if (fa < 0) == (fm < 0):
                a, fa = mid, fm
            else:
                b = mid
        mu = 0.5 * (a + b)
        best, best_res = mu, abs(_robin_objective(mu, robin_alpha))
        for _ in range(8):
            t = np.tan(mu)
            deriv = t + mu * (1.0 + t * t)
            step = (mu * t - robin_alpha) / deriv
            mu_new = mu - step
            if not (lo < mu_new < hi):
                break
            res = abs(_robin_objective(mu_new, robin_alpha))
            if res < best_res:
                best, best_res = mu_new, res
            if mu_new == mu:
                break
            mu = mu_new
        roots[m - 1] = best
    return roots


@dataclass(frozen=True)
class VerticalBasisT:
    """Robin/Neumann cosine profiles phi_m(z) = cos(mu_m (z+1)) / norm_m.

    L2(-1,0)-orthonormal; ``values``/``dvalues`` tabulate phi_m and its
    z-derivative at the quadrature nodes, ``ivalues`` the running integral
    from z=-1, and ``surface`` the trace phi_m(0).
    """

    robin_alpha: float
    roots: np.ndarray
    norms: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    dvalues: np.ndarray
    ivalues: np.ndarray
    surface: np.ndarray

    @classmethod
    def build(cls, robin_alpha: float, count: int, nz_quad: int) -> "VerticalBasisT":
        if nz_quad < 2 * count + 2:
            raise ValueError(
                f"nz_quad={nz_quad} below the dealiasing floor {2 * count + 2}"
            )
        nodes, weights = vertical_quadrature(nz_quad)
        mu = robin_eigenvalues(robin_alpha, count)
        # ||cos(mu (z+1))||^2 over (-1,0) in closed form
        norms = np.sqrt(0.5 + np.sin(2.0 * mu) / (4.0 * mu))
        arg = mu[:, None] * (nodes[None, :] + 1.0)
        values = np.cos(arg) / norms[:, None]
        dvalues = -mu[:, None] * np.sin(arg) / norms[:, None]
        ivalues = np.sin(arg) / (mu[:, None] * norms[:, None])
        surface = np.cos(mu) / norms
        return cls(
            robin_alpha=robin_alpha,
            roots=mu,
            norms=norms,
            nodes=nodes,
            weights=weights,
            values=values,
            dvalues=dvalues,
            ivalues=ivalues,
            surface=surface,
        )

    @property
    def count(self) -> int:
        return self.roots.size


@dataclass(frozen=True)
class VerticalBasisV:
    """Free-slip cosine profiles psi_m(z) = sqrt(2) cos(m pi (z+1)), m >= 1.

    The depth-mean (m=0) profile is deliberately absent: every psi_m has zero
    vertical mean, which enforces the depth-integrated divergence constraint
    structurally.
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    dvalues: np.ndarray

    @classmethod
    def build(cls, count: int, nz_quad: int) -> "VerticalBasisV":
        if nz_quad < 2 * count + 2:
            raise ValueError(
                f"nz_quad={nz_quad} below the dealiasing floor {2 * count + 2}"
            )
        nodes, weights = vertical_quadrature(nz_quad)
        m = np.arange(1, count + 1)
        arg = m[:, None] * np.pi * (nodes[None, :] + 1.0)
        values = _SQRT2 * np.cos(arg)
        dvalues = -_SQRT2 * m[:, None] * np.pi * np.sin(arg)
        return cls(nodes=nodes, weights=weights, values=values, dvalues=dvalues)

    @property
    def count(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class VerticalBasisW:
    """Sine profiles chi_m(z) = sqrt(2) sin(m pi (z+1)): vertical velocity.

    chi_m vanishes at both z=-1 and z=0, and d/dz chi_m = m pi psi_m, so a
    velocity field reconstructed on this basis satisfies the kinematic
    boundary conditions identically.
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    dvalues: np.ndarray

    @classmethod
    def build(cls, count: int, nz_quad: int) -> "VerticalBasisW":
        if nz_quad < 2 * count + 2:
            raise ValueError(
                f"nz_quad={nz_quad} below the dealiasing floor {2 * count + 2}"
            )
        nodes, weights = vertical_quadrature(nz_quad)
        m = np.arange(1, count + 1)
        arg = m[:, None] * np.pi * (nodes[None, :] + 1.0)
        values = _SQRT2 * np.sin(arg)
        dvalues = _SQRT2 * m[:, None] * np.pi * np.cos(arg)
        return cls(nodes=nodes, weights=weights, values=values, dvalues=dvalues)

    @property
    def count(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ModeTable:
    """Sorted enumeration of the real eigenmodes of the temperature operator.

    Mode n maps to a representative coefficient slot (rep_i, rep_j, m_idx) and
    a flavor: 0 for the cosine combination, 1 for the sine combination of the
    +-kappa Fourier pair (kappa = 0 rows are flavor 0 with rep == mirror).
    Eigenvalues are non-decreasing along n; ties break lexicographically by
    (k_x, k_y, m, flavor) so the ordering is reproducible.

    Real coefficients u_n relate to the complex storage That(kappa, m) by
    u_cos = sqrt(2) Re That(rep), u_sin = -sqrt(2) Im That(rep), and plain
    u = That at kappa = 0, which makes sum(u_n^2) = sum |That|^2 over all slots.
    """

    lx: float
    ly: float
    nx: int
    ny: int
    nz: int
    mu: np.ndarray
    kx_axis: np.ndarray  # integer wavenumbers along slot axis 0
    ky_axis: np.ndarray
    kappa_x: np.ndarray  # physical wavenumbers 2 pi k / L
    kappa_y: np.ndarray
    lam_slots: np.ndarray  # (NKX, NKY, NZ) eigenvalue per coefficient slot
    lam: np.ndarray  # (n_modes,) sorted ascending
    kx_int: np.ndarray
    ky_int: np.ndarray
    m_idx: np.ndarray
    flavor: np.ndarray
    rep_i: np.ndarray
    rep_j: np.ndarray
    mir_i: np.ndarray
    mir_j: np.ndarray
    is_center: np.ndarray
    _gather_re: np.ndarray = field(repr=False)
    _gather_im: np.ndarray = field(repr=False)

    @property
    def n_modes(self) -> int:
        return self.lam.size

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.kx_axis.size, self.ky_axis.size, self.nz)

    @property
    def lam1(self) -> float:
        return float(self.lam[0])

    def mu_next(self, n: int) -> float:
        """Smallest eigenvalue outside the first n modes (+inf past the table)."""
        if n < 0 or n > self.n_modes:
            raise ValueError(f"n out of range: {n}")
        if n == self.n_modes:
            return np.inf
        return float(self.lam[n])

    def expand_diag(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-slot (real-part, imag-part) factors realizing a diagonal operator.

        ``values`` holds one real factor per sorted mode. Applying the operator
        to a coefficient array C is ``C.real * S_re + 1j * C.imag * S_im``;
        because cosine flavors live in the real parts and sine flavors in the
        imaginary parts of the representative slots (mirrored conjugately),
        this is exact for any diagonal-in-the-eigenbasis map.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_modes,):
            raise ValueError(f"expected {self.n_modes} per-mode values")
        s_re = np.zeros(self.shape)
        s_im = np.zeros(self.shape)
        cos = self.flavor == 0
        sin = ~cos
        s_re[self.rep_i[cos], self.rep_j[cos], self.m_idx[cos]] = values[cos]
        s_re[self.mir_i[cos], self.mir_j[cos], self.m_idx[cos]] = values[cos]
        s_im[self.rep_i[sin], self.rep_j[sin], self.m_idx[sin]] = values[sin]
        s_im[self.mir_i[sin], self.mir_j[sin], self.m_idx[sin]] = values[sin]
        return s_re, s_im

    def mode_coefficients(
        self, coeffs: np.ndarray, sel: np.ndarray | slice = slice(None)
    ) -> np.ndarray:
        """Real eigenmode coefficients u_n gathered from complex storage.

        ``sel`` restricts to a subset of sorted mode indices; leading axes of
        ``coeffs`` are preserved as batch dimensions.
        """
        ri, rj, mi = self.rep_i[sel], self.rep_j[sel], self.m_idx[sel]
        slots = coeffs[..., ri, rj, mi]
        return slots.real * self._gather_re[sel] + slots.imag * self._gather_im[sel]

    def coefficients_from_modes(
        self,
        u: np.ndarray,
        sel: np.ndarray | slice = slice(None),
        out: np.ndarray | None = None,
    ) -> np.ndarray:
        """Scatter real eigenmode coefficients into (or onto) complex storage.

        With ``out`` given the contribution is added in place; otherwise a new
        zero-initialized array is returned. Writes for distinct modes touch
        distinct (slot, component) pairs, so plain assignment-by-add is exact.
        """
        u = np.asarray(u, dtype=float)
        batch = u.shape[:-1]
        if out is None:
            out = np.zeros(batch + self.shape, dtype=complex)
        ri, rj, mi = self.rep_i[sel], self.rep_j[sel], self.m_idx[sel]
        qi, qj = self.mir_i[sel], self.mir_j[sel]
        flav = self.flavor[sel]
        center = self.is_center[sel]
        cos = flav == 0
        sin = ~cos
        w = np.where(center, 1.0, 1.0 / _SQRT2)
        re = out.real
        im = out.imag
        uc = u[..., cos] * w[cos]
        re[..., ri[cos], rj[cos], mi[cos]] += uc
        off_center = cos & ~center
        re[..., qi[off_center], qj[off_center], mi[off_center]] += (
            u[..., off_center] * w[off_center]
        )
        us = u[..., sin] * w[sin]
        im[..., ri[sin], rj[sin], mi[sin]] -= us
        im[..., qi[sin], qj[sin], mi[sin]] += us
        return out


def build_mode_table(
    lx: float, ly: float, nx: int, ny: int, mu: np.ndarray
) -> ModeTable:
    """Enumerate and sort the real eigenmodes for the given resolution.

    Retains wavevectors with |k_x| <= nx/2 and |k_y| <= ny/2 (symmetric so the
    set is closed under kappa -> -kappa) and all supplied vertical roots.
    """
    if lx <= 0 or ly <= 0:
        raise ValueError("domain lengths must be positive")
    if nx < 1 or ny < 1:
        raise ValueError("resolutions must be >= 1")
    mu = np.asarray(mu, dtype=float)
    nz = mu.size
    hx, hy = nx // 2, ny // 2
    kx_axis = np.arange(-hx, hx + 1)
    ky_axis = np.arange(-hy, hy + 1)
    kappa_x = 2.0 * np.pi * kx_axis / lx
    kappa_y = 2.0 * np.pi * ky_axis / ly
    ksq = kappa_x[:, None] ** 2 + kappa_y[None, :] ** 2
    lam_slots = ksq[:, :, None] + (mu**2)[None, None, :]

    rows_kx, rows_ky, rows_m, rows_flavor, rows_lam = [], [], [], [], []
    for kx in kx_axis:
        for ky in ky_axis:
            rep = kx > 0 or (kx == 0 and ky > 0)
            center = kx == 0 and ky == 0
            if not (rep or center):
                continue
            flavors = (0,) if center else (0, 1)
            k2 = (2.0 * np.pi * kx / lx) ** 2 + (2.0 * np.pi * ky / ly) ** 2
            for m in range(nz):
                for fl in flavors:
                    rows_kx.append(kx)
                    rows_ky.append(ky)
                    rows_m.append(m)
                    rows_flavor.append(fl)
                    rows_lam.append(k2 + mu[m] ** 2)

    kx_int = np.asarray(rows_kx, dtype=np.int64)
    ky_int = np.asarray(rows_ky, dtype=np.int64)
    m_idx = np.asarray(rows_m, dtype=np.int64)
    flavor = np.asarray(rows_flavor, dtype=np.int8)
    lam = np.asarray(rows_lam)

    order = np.lexsort((flavor, m_idx, ky_int, kx_int, lam))
    kx_int, ky_int = kx_int[order], ky_int[order]
    m_idx, flavor, lam = m_idx[order], flavor[order], lam[order]

    rep_i = kx_int + hx
    rep_j = ky_int + hy
    mir_i = -kx_int + hx
    mir_j = -ky_int + hy
    is_center = (kx_int == 0) & (ky_int == 0)

    gather_re = np.where(is_center, 1.0, _SQRT2)
    gather_re[flavor == 1] = 0.0
    gather_im = np.where(flavor == 1, -_SQRT2, 0.0)

    return ModeTable(
        lx=float(lx),
        ly=float(ly),
        nx=nx,
        ny=ny,
        nz=nz,
        mu=mu,
        kx_axis=kx_axis,
        ky_axis=ky_axis,
        kappa_x=kappa_x,
        kappa_y=kappa_y,
        lam_slots=lam_slots,
        lam=lam,
        kx_int=kx_int,
        ky_int=ky_int,
        m_idx=m_idx,
        flavor=flavor,
        rep_i=rep_i,
        rep_j=rep_j,
        mir_i=mir_i,
        mir_j=mir_j,
        is_center=is_center,
        _gather_re=gather_re,
        _gather_im=gather_im,
    )

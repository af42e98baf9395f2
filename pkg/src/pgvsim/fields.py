"""Spectral coefficient storage, grid transforms, norms, and snapshot I/O.

Fields are stored as complex Fourier coefficients on trailing axes
(NKX, NKY, NZ): slot (i, j, m) holds the coefficient of
exp(i kappa . x) phi_m(z) / sqrt(Lx Ly) with integer wavenumbers
k_x = i - nx/2, k_y = j - ny/2 (both axes run the full symmetric range, so
Hermitian symmetry C(-kappa) = conj(C(kappa)) is an explicit invariant of the
storage rather than an implicit half-spectrum convention). Leading axes are
free batch dimensions everywhere.

Grid transforms use dense DFT matrices contracted with BLAS rather than an
FFT: the collocation grid has M = 3 (n/2) + 1 points per direction, the
minimal count for which quadratic products project alias-free and cubic
integrands integrate exactly, which keeps the advective term's discrete
skew-symmetry at round-off level. At production resolutions the matrices are
tiny and a single GEMM beats FFT setup overhead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .basis import (
    ModeTable,
    VerticalBasisT,
    VerticalBasisV,
    VerticalBasisW,
    build_mode_table,
)

__all__ = [
    "CouplingMatrices",
    "SpectralSpace",
    "build_space",
    "from_grid",
    "hermitian_enforce",
    "hermitian_defect",
    "inner_h",
    "norm_da",
    "norm_h",
    "norm_v",
    "project_low",
    "random_low_field",
    "read_snapshot",
    "to_grid",
    "write_snapshot",
]

_MAGIC = b"PGVS"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIddd")
_TAG = struct.Struct("<4s")


@dataclass(frozen=True)
class CouplingMatrices:
    """Quadrature couplings between the scalar and velocity vertical bases.

    ``c_ps[m]`` is the integral of z phi_m(z) over the layer, so the surface
    pressure closing the depth-integrated flow is -sum_m c_ps[m] That(kappa, m).
    ``c_int[mv, mt]`` is the projection of the running integral of phi_mt onto
    psi_mv, the source feeding temperature into the momentum balance.
    ``d_w[mv] = 1/(mv pi)`` converts horizontal divergence into the sine-basis
    coefficients of the vertical velocity.
    """

    c_ps: np.ndarray
    c_int: np.ndarray
    d_w: np.ndarray


@dataclass(frozen=True)
class SpectralSpace:
    """Everything needed to move fields between coefficients and the grid."""

    table: ModeTable
    basis_t: VerticalBasisT
    basis_v: VerticalBasisV
    basis_w: VerticalBasisW
    coupling: CouplingMatrices
    mx: int
    my: int
    ex: np.ndarray  # (mx, NKX) synthesis DFT matrix, x direction
    ey: np.ndarray
    exh: np.ndarray  # conjugates, analysis direction
    eyh: np.ndarray
    ikx: np.ndarray  # i * kappa_x, shaped (NKX, 1, 1) for broadcasting
    iky: np.ndarray
    lamv_slots: np.ndarray  # (NKX, NKY, NzV) velocity eigenvalues per slot
    proj_t: np.ndarray  # (nzq, NzT) weights * phi values, forward projection

    @property
    def lx(self) -> float:
        return self.table.lx

    @property
    def ly(self) -> float:
        return self.table.ly

    @property
    def nz_t(self) -> int:
        return self.basis_t.count

    @property
    def nz_v(self) -> int:
        return self.basis_v.count

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.table.shape

    @property
    def shape_v(self) -> tuple[int, int, int]:
        nkx, nky, _ = self.table.shape
        return (nkx, nky, self.basis_v.count)


def build_space(
    lx: float,
    ly: float,
    nx: int,
    ny: int,
    nz_t: int,
    nz_v: int,
    robin_alpha: float,
    nz_quad: int | None = None,
) -> SpectralSpace:
    """Assemble bases, mode table, coupling matrices, and transform operators."""
    if nz_quad is None:
        nz_quad = 4 * max(nz_t, nz_v)
    basis_t = VerticalBasisT.build(robin_alpha, nz_t, nz_quad)
    basis_v = VerticalBasisV.build(nz_v, nz_quad)
    basis_w = VerticalBasisW.build(nz_v, nz_quad)
    table = build_mode_table(lx, ly, nx, ny, basis_t.roots)

    w = basis_t.weights
    z = basis_t.nodes
    c_ps = (basis_t.values * (w * z)[None, :]).sum(axis=1)
    c_int = basis_v.values @ (basis_t.ivalues * w[None, :]).T
    mv = np.arange(1, nz_v + 1)
    d_w = 1.0 / (mv * np.pi)

    mx = 3 * (nx // 2) + 1
    my = 3 * (ny // 2) + 1
    px = np.arange(mx)
    py = np.arange(my)
    ex = np.exp(2j * np.pi * px[:, None] * table.kx_axis[None, :] / mx)
    ey = np.exp(2j * np.pi * py[:, None] * table.ky_axis[None, :] / my)

    ikx = (1j * table.kappa_x)[:, None, None]
    iky = (1j * table.kappa_y)[None, :, None]
    ksq = table.kappa_x[:, None] ** 2 + table.kappa_y[None, :] ** 2
    lamv_slots = ksq[:, :, None] + ((mv * np.pi) ** 2)[None, None, :]

    proj_t = (basis_t.values * w[None, :]).T

    return SpectralSpace(
        table=table,
        basis_t=basis_t,
        basis_v=basis_v,
        basis_w=basis_w,
        coupling=CouplingMatrices(c_ps=c_ps, c_int=c_int, d_w=d_w),
        mx=mx,
        my=my,
        ex=ex,
        ey=ey,
        exh=ex.conj(),
        eyh=ey.conj(),
        ikx=ikx,
        iky=iky,
        lamv_slots=lamv_slots,
        proj_t=proj_t,
    )


def to_grid(
    space: SpectralSpace, coeffs: np.ndarray, profile: np.ndarray | None = None
) -> np.ndarray:
    """Evaluate a coefficient array on the collocation grid (..., mx, my, nzq).

    ``profile`` is the (NZ, nzq) table of vertical basis values matching the
    coefficient array's last axis; defaults to the scalar basis. The result is
    real: Hermitian symmetry of the input is assumed, not checked.
    """
    if profile is None:
        profile = space.basis_t.values
    return horizontal_grid(space, coeffs) @ profile


def horizontal_grid(space: SpectralSpace, coeffs: np.ndarray) -> np.ndarray:
    """Horizontal stages of :func:`to_grid` only: vertical axis left spectral.

    Splitting the transform lets callers push several fields of equal height
    through one contraction and apply their different vertical profiles after.
    """
    x1 = np.einsum("pi,...ijm->...pjm", space.ex, coeffs, optimize=True)
    x2 = np.einsum("qj,...pjm->...pqm", space.ey, x1, optimize=True)
    scale = 1.0 / np.sqrt(space.lx * space.ly)
    return x2.real * scale


def from_grid(space: SpectralSpace, grid: np.ndarray) -> np.ndarray:
    """Project a grid field (..., mx, my, nzq) onto the scalar eigenbasis.

    Horizontal quadrature is the equispaced rule (exact for the bandwidths a
    quadratic product can reach on this grid); vertical quadrature is the
    Gauss rule baked into the basis tables.
    """
    y = grid @ space.proj_t
    x1 = np.einsum("pi,...pqm->...iqm", space.exh, y, optimize=True)
    x2 = np.einsum("qj,...iqm->...ijm", space.eyh, x1, optimize=True)
    scale = np.sqrt(space.lx * space.ly) / (space.mx * space.my)
    return x2 * scale


def norm_h(coeffs: np.ndarray) -> np.ndarray | float:
    """L2 norm over the layer: sqrt of the summed squared coefficients."""
    out = np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=(-3, -2, -1)))
    return float(out) if out.ndim == 0 else out

def inner_h(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """L2 pairing of two real fields stored as complex coefficients."""
    out = np.sum((a.conj() * b).real, axis=(-3, -2, -1))
    return float(out) if out.ndim == 0 else out


def norm_v(coeffs: np.ndarray, table: ModeTable) -> np.ndarray | float:
    """Energy norm: eigenvalue-weighted L2 (gradient plus boundary terms)."""
    out = np.sqrt(np.sum(table.lam_slots * np.abs(coeffs) ** 2, axis=(-3, -2, -1)))
    return float(out) if out.ndim == 0 else out


def norm_da(coeffs: np.ndarray, table: ModeTable) -> np.ndarray | float:
    """Domain norm of the diffusion operator: lambda^2-weighted L2."""
    out = np.sqrt(np.sum(table.lam_slots**2 * np.abs(coeffs) ** 2, axis=(-3, -2, -1)))
    return float(out) if out.ndim == 0 else out


def project_low(coeffs: np.ndarray, table: ModeTable, n: int) -> np.ndarray:
    """Orthogonal projection onto the first n sorted eigenmodes.

    The cut may land between the cosine and sine flavors of a wavevector pair;
    the projection stays H-orthogonal and real-preserving because the flavors
    are themselves real eigenmodes.
    """
    if n < 0 or n > table.n_modes:
        raise ValueError(f"n out of range: {n}")
    values = np.zeros(table.n_modes)
    values[:n] = 1.0
    s_re, s_im = table.expand_diag(values)
    return coeffs.real * s_re + 1j * (coeffs.imag * s_im)


def hermitian_enforce(coeffs: np.ndarray) -> np.ndarray:
    """Symmetrize so that C(-kappa) = conj(C(kappa)) holds exactly."""
    mirror = coeffs[..., ::-1, ::-1, :].conj()
    return 0.5 * (coeffs + mirror)


def hermitian_defect(coeffs: np.ndarray) -> float:
    """Largest deviation from Hermitian symmetry (exact zero for real fields)."""
    mirror = coeffs[..., ::-1, ::-1, :].conj()
    return float(np.max(np.abs(coeffs - mirror)))


def random_low_field(
    table: ModeTable,
    rng: np.random.Generator,
    n_low: int,
    target_norm: float = 1.0,
    weight: str = "h",
    batch: tuple[int, ...] = (),
) -> np.ndarray:
    """Random real field supported on the first n_low modes, rescaled so the
    requested norm ('h' or 'v') equals target_norm per batch element."""
    u = rng.standard_normal(batch + (n_low,))
    if weight == "v":
        u = u / np.sqrt(table.lam[:n_low])
    elif weight != "h":
        raise ValueError(f"unknown weight {weight!r}")
    coeffs = table.coefficients_from_modes(u, sel=slice(0, n_low))
    if weight == "h":
        cur = norm_h(coeffs)
    else:
        cur = norm_v(coeffs, table)
    scale = target_norm / np.asarray(cur)
    return coeffs * scale[..., None, None, None]


def write_snapshot(
    path,
    space: SpectralSpace,
    temperature: np.ndarray,
    v1: np.ndarray | None = None,
    v2: np.ndarray | None = None,
) -> None:
    """Serialize coefficient arrays to the binary snapshot format.

    Little-endian throughout: magic, version, resolution and domain header,
    then tagged blocks of interleaved (re, im) float64 with the vertical index
    fastest and k_x slowest. The temperature block is mandatory; the two
    horizontal velocity blocks are optional diagnostics.
    """
    if (v1 is None) != (v2 is None):
        raise ValueError("velocity blocks must be written together")
    t = space.table
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        t.nx,
        t.ny,
        space.nz_t,
        space.nz_v,
        t.lx,
        t.ly,
        space.basis_t.robin_alpha,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for tag, block, shape in (
            (b"TEMP", temperature, space.shape),
            (b"VEL1", v1, space.shape_v),
            (b"VEL2", v2, space.shape_v),
        ):
            if block is None:
                continue
            block = np.asarray(block, dtype=complex)
            if block.shape != shape:
                raise ValueError(f"block {tag!r} has shape {block.shape}, want {shape}")
            flat = np.ravel(block, order="C")
            pairs = np.empty(flat.size * 2)
            pairs[0::2] = flat.real
            pairs[1::2] = flat.imag
            fh.write(_TAG.pack(tag))
            fh.write(pairs.astype("<f8").tobytes())


def read_snapshot(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a snapshot file; returns (header fields, tag -> complex array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot truncated before header")
    magic, version, nx, ny, nz_t, nz_v, lx, ly, robin_alpha = _HEADER.unpack_from(
        raw, 0
    )
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    nkx, nky = nx + 1, ny + 1
    sizes = {
        b"TEMP": (nkx, nky, nz_t),
        b"VEL1": (nkx, nky, nz_v),
        b"VEL2": (nkx, nky, nz_v),
    }
    header = {
        "nx": nx,
        "ny": ny,
        "nz_t": nz_t,
        "nz_v": nz_v,
        "lx": lx,
        "ly": ly,
        "robin_alpha": robin_alpha,
    }
    blocks: dict[str, np.ndarray] = {}
    pos = _HEADER.size
    while pos < len(raw):
        if pos + _TAG.size > len(raw):
            raise ValueError("snapshot truncated inside block tag")
        (tag,) = _TAG.unpack_from(raw, pos)
        pos += _TAG.size
        if tag not in sizes:
            raise ValueError(f"unknown block tag {tag!r}")
        shape = sizes[tag]
        count = 2 * shape[0] * shape[1] * shape[2]
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise ValueError(f"snapshot truncated inside block {tag!r}")
        pairs = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
        pos += nbytes
        block = (pairs[0::2] + 1j * pairs[1::2]).reshape(shape)
        blocks[tag.decode("ascii")] = block
    if "TEMP" not in blocks:
        raise ValueError("snapshot missing temperature block")
    return header, blocks

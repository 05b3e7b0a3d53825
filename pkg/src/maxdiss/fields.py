"""Spectral vector/scalar fields on the periodic square torus [0, 2*pi)^2.

Fields are stored as Fourier amplitudes u(x) = sum_k uhat(k) exp(i k.x)
with integer wavevectors in numpy fft ordering.  Hermitian symmetry is
enforced so physical samples are real; the Nyquist row/column (k = -n/2)
is always zeroed to keep the retained band symmetric under k -> -k.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

#: relative divergence threshold for tagging a field solenoidal
SOLENOIDAL_RTOL = 1e-12

HEADER_MAGIC = b"MAXDISS-FLD\0".ljust(16, b"\0")


class FieldError(ValueError):
    """Raised on invalid field construction or incompatible operands."""


@dataclass(frozen=True)
class Grid:
    """Uniform n x n collocation grid on the 2*pi-periodic square torus."""

    n: int
    d: int = 2

    def __post_init__(self):
        if self.d != 2:
            raise FieldError(f"only d=2 is supported, got d={self.d}")
        if self.n < 4 or self.n % 2 != 0:
            raise FieldError(f"grid size must be even and >= 4, got n={self.n}")

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    def points(self):
        """Collocation points as (X, Y) arrays of shape (n, n)."""
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    def wavenumbers(self):
        """Integer wavevector components (KX, KY) in fft ordering."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return np.meshgrid(k, k, indexing="ij")


def _nyquist_mask(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return (kx != -n // 2) & (ky != -n // 2)


def _hermitianize(coeffs: np.ndarray) -> np.ndarray:
    # average with the reflected conjugate; exact projection onto real fields
    flipped = coeffs[..., ::-1, ::-1]
    flipped = np.roll(flipped, shift=(1, 1), axis=(-2, -1))
    return 0.5 * (coeffs + np.conj(flipped))


@dataclass(frozen=True)
class SpectralField:
    """Immutable scalar (1 component) or vector (2 components) spectral field."""

    grid: Grid
    coeffs: np.ndarray  # complex128, shape (components, n, n)
    solenoidal: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 3 or c.shape[1:] != (self.grid.n, self.grid.n):
            raise FieldError(f"bad coefficient shape {c.shape} for n={self.grid.n}")
        if c.shape[0] not in (1, 2):
            raise FieldError(f"expected 1 or 2 components, got {c.shape[0]}")
        c = _hermitianize(c * _nyquist_mask(self.grid.n))
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        if self.solenoidal and self.components == 2:
            div = divergence_linf(self)
            scale = np.abs(c).max()
            # absolute floor keeps cancellation roundoff in near-zero
            # differences of solenoidal fields from tripping the check
            if div > max(SOLENOIDAL_RTOL * scale * self.grid.n, 1e-13):
                raise FieldError(f"field tagged solenoidal but max |k.uhat| = {div:g}")

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.components == 2

    def physical(self) -> np.ndarray:
        """Real collocation samples, shape (components, n, n)."""
        n = self.grid.n
        return np.fft.ifft2(self.coeffs * n * n, axes=(-2, -1)).real

    def mean(self) -> np.ndarray:
        return self.coeffs[:, 0, 0].real.copy()

    # -- arithmetic ---------------------------------------------------------

    def _check_compatible(self, other: "SpectralField"):
        if self.grid.n != other.grid.n or self.components != other.components:
            raise FieldError(
                f"incompatible fields: n={self.grid.n}/{other.grid.n}, "
                f"components={self.components}/{other.components}"
            )

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs,
                             solenoidal=self.solenoidal and other.solenoidal)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs,
                             solenoidal=self.solenoidal and other.solenoidal)

    def __mul__(self, s: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * s, solenoidal=self.solenoidal)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self * (-1.0)


@dataclass(frozen=True)
class NormReport:
    """Bundle of the norms used by the relative-energy machinery."""

    l2: float
    h1_semi: float
    lp: dict = field(default_factory=dict)
    l_inf: float = 0.0
    h_minus1: float = 0.0


# -- constructors -----------------------------------------------------------

def from_physical(grid: Grid, samples: np.ndarray, solenoidal: bool = False) -> SpectralField:
    """Build a field from real collocation samples of shape (c, n, n)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[None]
    n = grid.n
    coeffs = np.fft.fft2(samples, axes=(-2, -1)) / (n * n)
    return SpectralField(grid, coeffs, solenoidal=solenoidal)


def from_function(grid: Grid, *funcs, solenoidal: bool = False) -> SpectralField:
    """Sample callables f(X, Y) on the collocation grid, one per component."""
    X, Y = grid.points()
    samples = np.stack([np.broadcast_to(np.asarray(f(X, Y), dtype=np.float64), X.shape)
                        for f in funcs])
    return from_physical(grid, samples, solenoidal=solenoidal)


def zero_field(grid: Grid, components: int = 2, solenoidal: bool = True) -> SpectralField:
    coeffs = np.zeros((components, grid.n, grid.n), dtype=np.complex128)
    return SpectralField(grid, coeffs, solenoidal=solenoidal and components == 2)


def random_field(grid: Grid, rng: np.random.Generator, kmax: int,
                 components: int = 2, solenoidal: bool = True,
                 amplitude: float = 1.0) -> SpectralField:
    """Random mean-free band-limited field with |k|_inf <= kmax."""
    n = grid.n
    kx, ky = grid.wavenumbers()
    band = (np.abs(kx) <= kmax) & (np.abs(ky) <= kmax) & ((kx != 0) | (ky != 0))
    coeffs = (rng.standard_normal((components, n, n))
              + 1j * rng.standard_normal((components, n, n))) * band
    f = SpectralField(grid, coeffs * amplitude)
    if solenoidal and components == 2:
        f = leray_project(f)
    return f


# -- differential calculus --------------------------------------------------

def divergence(u: SpectralField) -> SpectralField:
    if not u.is_vector:
        raise FieldError("divergence requires a vector field")
    kx, ky = u.grid.wavenumbers()
    c = 1j * (kx * u.coeffs[0] + ky * u.coeffs[1])
    return SpectralField(u.grid, c[None])


def divergence_linf(u: SpectralField) -> float:
    kx, ky = u.grid.wavenumbers()
    return np.abs(kx * u.coeffs[0] + ky * u.coeffs[1]).max()


def gradient(u: SpectralField) -> np.ndarray:
    """Exact spectral gradient, returned as scalar SpectralFields.

    For a scalar field returns [d/dx u, d/dy u]; for a vector field a flat
    list [d/dx u1, d/dy u1, d/dx u2, d/dy u2].
    """
    kx, ky = u.grid.wavenumbers()
    out = []
    for c in range(u.components):
        out.append(SpectralField(u.grid, (1j * kx * u.coeffs[c])[None]))
        out.append(SpectralField(u.grid, (1j * ky * u.coeffs[c])[None]))
    return out


def gradient_tensor(u: SpectralField) -> np.ndarray:
    """Spectral coefficients of grad u, shape (components, 2, n, n)."""
    kx, ky = u.grid.wavenumbers()
    return np.stack([1j * kx * u.coeffs, 1j * ky * u.coeffs], axis=1)


def laplacian(u: SpectralField) -> SpectralField:
    kx, ky = u.grid.wavenumbers()
    return SpectralField(u.grid, -(kx * kx + ky * ky) * u.coeffs,
                         solenoidal=u.solenoidal)


def leray_project(u: SpectralField) -> SpectralField:
    """Leray projection uhat -> (I - k k^T/|k|^2) uhat, identity at k=0."""
    if not u.is_vector:
        raise FieldError("Leray projection requires a vector field")
    kx, ky = u.grid.wavenumbers()
    k2 = kx * kx + ky * ky
    k2safe = np.where(k2 == 0, 1.0, k2)
    kdotu = (kx * u.coeffs[0] + ky * u.coeffs[1]) / k2safe
    px = u.coeffs[0] - kx * kdotu
    py = u.coeffs[1] - ky * kdotu
    return SpectralField(u.grid, np.stack([px, py]), solenoidal=True)


# -- norms and pairings -----------------------------------------------------

def inner(u: SpectralField, w: SpectralField) -> float:
    """L2 inner product over the torus, computed by Parseval."""
    u._check_compatible(w)
    val = np.sum(u.coeffs * np.conj(w.coeffs)).real
    return TWO_PI ** 2 * val


def l2_norm(u: SpectralField) -> float:
    return np.sqrt(max(inner(u, u), 0.0))


def h1_seminorm(u: SpectralField) -> float:
    kx, ky = u.grid.wavenumbers()
    k2 = kx * kx + ky * ky
    val = np.sum(k2 * np.abs(u.coeffs) ** 2)
    return TWO_PI * np.sqrt(val)


def h_minus1_norm(u: SpectralField) -> float:
    """Dual-norm sqrt(sum_{k!=0} |uhat|^2 / |k|^2), L2-consistent scaling.

    Requires every component to be mean-free.
    """
    mean = np.abs(u.coeffs[:, 0, 0]).max()
    scale = np.abs(u.coeffs).max()
    if mean > 1e-13 * max(scale, 1.0):
        raise FieldError(f"H^-1 norm needs mean-free input, mean amplitude {mean:g}")
    kx, ky = u.grid.wavenumbers()
    k2 = kx * kx + ky * ky
    k2safe = np.where(k2 == 0, 1.0, k2)
    val = np.sum(np.abs(u.coeffs) ** 2 / k2safe) - np.sum(np.abs(u.coeffs[:, 0, 0]) ** 2)
    return TWO_PI * np.sqrt(max(val, 0.0))


def _oversampled_magnitude(u: SpectralField) -> tuple[np.ndarray, float]:
    """Pointwise Euclidean magnitude on a 2x oversampled grid and its cell area."""
    fine = pad_to(u, 2 * u.grid.n)
    phys = fine.physical()
    mag = np.sqrt(np.sum(phys * phys, axis=0))
    h = TWO_PI / fine.grid.n
    return mag, h * h


def lp_norm(u: SpectralField, p) -> float:
    """L^p norm; p=2 spectrally, p=inf and general p >= 1 by oversampled quadrature."""
    if p == 2:
        return l2_norm(u)
    if p == np.inf or p == "inf":
        mag, _ = _oversampled_magnitude(u)
        return float(mag.max())
    p = float(p)
    if p < 1:
        raise FieldError(f"invalid exponent p={p}")
    mag, w = _oversampled_magnitude(u)
    return float((np.sum(mag ** p) * w) ** (1.0 / p))


def norm_report(u: SpectralField, exponents=(4,)) -> NormReport:
    mean_free = np.abs(u.coeffs[:, 0, 0]).max() <= 1e-13 * max(np.abs(u.coeffs).max(), 1.0)
    return NormReport(
        l2=l2_norm(u),
        h1_semi=h1_seminorm(u),
        lp={p: lp_norm(u, p) for p in exponents},
        l_inf=lp_norm(u, np.inf),
        h_minus1=h_minus1_norm(u) if mean_free else 0.0,
    )


# -- mode embedding ---------------------------------------------------------

def _embed(coeffs: np.ndarray, n_from: int, n_to: int) -> np.ndarray:
    """Copy fft-ordered modes |k| < n_from/2 into an n_to-sized spectrum."""
    out = np.zeros(coeffs.shape[:-2] + (n_to, n_to), dtype=np.complex128)
    half = min(n_from, n_to) // 2
    idx_from = np.r_[0:half, n_from - half:n_from]
    idx_to = np.r_[0:half, n_to - half:n_to]
    out[..., idx_to[:, None], idx_to[None, :]] = coeffs[..., idx_from[:, None], idx_from[None, :]]
    return out


def pad_to(u: SpectralField, m: int) -> SpectralField:
    """Zero-pad the spectrum to a finer grid of m >= n modes per dimension."""
    if m < u.grid.n:
        raise FieldError(f"pad_to target {m} smaller than n={u.grid.n}")
    if m == u.grid.n:
        return u
    return SpectralField(Grid(m), _embed(u.coeffs, u.grid.n, m), solenoidal=u.solenoidal)


def restrict_to(u: SpectralField, m: int) -> SpectralField:
    """Spectral truncation onto a coarser grid of m <= n modes; left inverse of pad_to."""
    if m > u.grid.n:
        raise FieldError(f"restrict_to target {m} larger than n={u.grid.n}")
    if m == u.grid.n:
        return u
    return SpectralField(Grid(m), _embed(u.coeffs, u.grid.n, m), solenoidal=u.solenoidal)


# -- persistence ------------------------------------------------------------

def save_samples(path, samples: np.ndarray, extra: dict | None = None) -> None:
    """Binary container: 16-byte magic, padded JSON header, f64 samples.

    ``samples`` has shape (components, n, n); the same container serves
    velocity fields (2 components) and symmetric defect densities (3).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[1] != samples.shape[2]:
        raise FieldError(f"samples must be (c, n, n), got {samples.shape}")
    meta = {"n": samples.shape[1], "components": samples.shape[0],
            "endianness": "little", "dtype": "f64"}
    if extra:
        meta.update(extra)
    header = json.dumps(meta).encode()
    pad = (-(len(HEADER_MAGIC) + 4 + len(header))) % 64
    header += b" " * pad
    with open(path, "wb") as fh:
        fh.write(HEADER_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(samples.astype("<f8").tobytes())


def load_samples(path):
    """Read a sample container; returns (samples, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != HEADER_MAGIC:
            raise FieldError(f"bad magic in {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        n = header["n"]
        comps = header["components"]
        data = np.frombuffer(fh.read(comps * n * n * 8), dtype="<f8")
    return data.reshape(comps, n, n).copy(), header


def save_field(u: SpectralField, path) -> None:
    """Save a velocity/scalar field in the binary sample container."""
    save_samples(path, u.physical(), extra={"solenoidal": u.solenoidal})


def load_field(path) -> SpectralField:
    """Load a field container; spectra are recomputed from the stored samples."""
    samples, header = load_samples(path)
    return from_physical(Grid(header["n"]), samples,
                         solenoidal=header.get("solenoidal", False))

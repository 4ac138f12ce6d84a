"""Scalar fields on uniform periodic 2-d grids, their spectra, and norms.

Conventions used throughout the package:

* the domain is the periodic box [0, L)^2 sampled at n x n points,
  x_ij = (i*L/n, j*L/n), with values stored row-major (axis 0 is x1);
* Fourier coefficients follow f_hat(xi) = n^(-2) * sum_x f(x) exp(-2*pi*i xi.x/L),
  so the trigonometric interpolant is f(x) = sum_xi f_hat(xi) exp(2*pi*i xi.x/L)
  and the Plancherel identity reads ||f||_{L2}^2 = L^2 * sum_xi |f_hat(xi)|^2;
* "physical" wavenumbers are k = 2*pi*xi/L for integer frequency vectors xi.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "GridField",
    "Spectrum",
    "MEAN_TOL",
    "coords",
    "wavenumbers",
    "to_spectrum",
    "from_spectrum",
    "lp_norm",
    "demean",
    "sobolev_neg_norm",
    "bv_seminorm",
    "shift",
    "sample_field",
    "spectral_upsample",
    "save_field",
    "load_field",
    "field_to_csv",
    "save_particles",
    "load_particles",
    "min_image",
    "ball_average",
]

# Relative tolerance on the mean when a homogeneous negative-order norm is requested.
MEAN_TOL = 1e-8


def _check_side(n: int) -> None:
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"grid side must be a power of two >= 2, got {n}")


def coords(n: int, box: float = 1.0) -> np.ndarray:
    """Grid coordinates along one axis: 0, L/n, ..., L*(n-1)/n."""
    return np.arange(n) * (box / n)


def wavenumbers(n: int, box: float = 1.0) -> np.ndarray:
    """Physical wavenumbers 2*pi*xi/L along one axis, in FFT layout."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=box / n)


class GridField:
    """Real scalar function sampled on the uniform periodic n x n grid.

    Fields are treated as immutable; operations return new instances.
    The spectrum is computed lazily and cached.
    """

    dim = 2

    def __init__(self, values: np.ndarray, box: float = 1.0):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"expected a square 2-d array, got shape {values.shape}")
        _check_side(values.shape[0])
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if not box > 0:
            raise ValueError("box side must be positive")
        self.values = values
        self.box = float(box)
        self.mean = float(values.mean())
        self._spectrum: Spectrum | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return self.box / self.n

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = coords(self.n, self.box)
        return np.meshgrid(x, x, indexing="ij")

    @classmethod
    def from_function(cls, fn, n: int, box: float = 1.0) -> "GridField":
        x = coords(n, box)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return cls(np.asarray(fn(X1, X2), dtype=np.float64), box)

    @classmethod
    def constant(cls, c: float, n: int, box: float = 1.0) -> "GridField":
        return cls(np.full((n, n), float(c)), box)

    def __repr__(self) -> str:
        return f"GridField(n={self.n}, box={self.box}, mean={self.mean:.3e})"


@dataclass(frozen=True)
class Spectrum:
    """Fourier coefficients of a real grid field, in numpy FFT layout."""

    coeffs: np.ndarray
    box: float

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    def is_hermitian(self, rtol: float = 1e-10) -> bool:
        c = self.coeffs
        scale = np.abs(c).max() or 1.0
        mirrored = np.conj(np.roll(np.flip(c), shift=(1, 1), axis=(0, 1)))
        return bool(np.abs(c - mirrored).max() <= rtol * scale)


def to_spectrum(f: GridField) -> Spectrum:
    """Forward transform with the n^(-2) normalisation described above."""
    if f._spectrum is None:
        f._spectrum = Spectrum(np.fft.fft2(f.values) / f.n**2, f.box)
    return f._spectrum


def from_spectrum(spec: Spectrum, imag_tol: float = 1e-9) -> GridField:
    """Inverse transform; fails if the coefficients are not Hermitian enough."""
    vals = np.fft.ifft2(spec.coeffs) * spec.n**2
    scale = max(np.abs(vals.real).max(), 1e-300)
    if np.abs(vals.imag).max() > imag_tol * scale:
        raise ValueError("spectrum is not Hermitian: inverse transform is not real")
    return GridField(vals.real, spec.box)


def demean(f: GridField) -> GridField:
    """The field with its spatial mean projected out."""
    return GridField(f.values - f.mean, f.box)


def lp_norm(f: GridField, p: float) -> float:
    """Riemann-sum L^p norm, (sum |f|^p dx^2)^(1/p); p = inf gives the max norm."""
    if p == np.inf:
        return float(np.abs(f.values).max())
    if p < 1:
        raise ValueError(f"lp_norm requires p >= 1, got {p}")
    a = np.abs(f.values)
    if p == 1:
        return float(a.sum() * f.dx**2)
    if p == 2:
        return float(np.sqrt((a * a).sum() * f.dx**2))
    return float((np.power(a, p).sum() * f.dx**2) ** (1.0 / p))


def sobolev_neg_norm(f: GridField, s: float) -> float:
    """Homogeneous negative-order Sobolev norm of a mean-zero field.

    ||f||^2 = L^2 * sum_{xi != 0} |f_hat(xi)|^2 * |2 pi xi / L|^(-2s).
    Rejects fields whose mean exceeds MEAN_TOL * ||f||_{L2}: the zero mode
    carries infinite weight and must be absent.
    """
    if not s > 0:
        raise ValueError(f"sobolev_neg_norm requires s > 0, got {s}")
    l2 = lp_norm(f, 2)
    if abs(f.mean) > MEAN_TOL * max(l2, 1e-300):
        raise ValueError(
            f"field mean {f.mean:.3e} exceeds {MEAN_TOL:.0e} * L2 norm; "
            "negative-order norms need mean-zero data"
        )
    spec = to_spectrum(f)
    k = wavenumbers(f.n, f.box)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    k2[0, 0] = 1.0  # excluded below; avoids 0**negative
    weight = np.power(k2, -s)
    weight[0, 0] = 0.0
    total = (np.abs(spec.coeffs) ** 2 * weight).sum() * f.box**2
    return float(np.sqrt(total))


def bv_seminorm(f: GridField) -> float:
    """Isotropic discrete total variation from forward differences.

    sum_x sqrt(D1 f^2 + D2 f^2) * dx^2 with D_i the wrapped forward
    difference quotient. Converges to the TV of piecewise-smooth data,
    e.g. a unit step across the box has value 2 (two wrap jumps) and
    cos(2 pi x1) on the unit box has value 4.
    """
    v = f.values
    d1 = (np.roll(v, -1, axis=0) - v) / f.dx
    d2 = (np.roll(v, -1, axis=1) - v) / f.dx
    return float(np.hypot(d1, d2).sum() * f.dx**2)


def shift(f: GridField, h) -> GridField:
    """Translate by h: returns the field x -> f(x + h), via the spectral phase
    exp(2 pi i xi.h / L). Exact for the trigonometric interpolant, and an
    L2 isometry for every h; grid-aligned h reduces to an array roll.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (2,):
        raise ValueError("h must be a length-2 displacement")
    spec = to_spectrum(f)
    k = wavenumbers(f.n, f.box)
    phase = np.exp(1j * (k[:, None] * h[0] + k[None, :] * h[1]))
    vals = np.fft.ifft2(spec.coeffs * phase) * f.n**2
    return GridField(vals.real, f.box)


def min_image(delta: np.ndarray, box: float) -> np.ndarray:
    """Wrap displacement components into [-L/2, L/2)."""
    return (delta + 0.5 * box) % box - 0.5 * box


# Cached transforms of disc indicators, keyed by (n, box, radius); each entry
# holds (fft2 of the indicator, number of grid nodes inside the disc).
_DISC_CACHE: dict[tuple[int, float, float], tuple[np.ndarray, int]] = {}


def _disc_kernel(n: int, box: float, radius: float) -> tuple[np.ndarray, int]:
    key = (n, round(box, 12), round(radius, 12))
    hit = _DISC_CACHE.get(key)
    if hit is not None:
        return hit
    x = min_image(coords(n, box), box)
    inside = (x[:, None] ** 2 + x[None, :] ** 2) <= radius**2
    count = int(inside.sum())
    if count == 0:
        raise ValueError(f"disc of radius {radius} contains no grid nodes")
    entry = (np.fft.fft2(inside.astype(np.float64)), count)
    if len(_DISC_CACHE) < 4096:
        _DISC_CACHE[key] = entry
    return entry


def ball_average(f: GridField, radius: float) -> np.ndarray:
    """Mean of f over the grid nodes within distance `radius` of each node.

    Computed as a circular convolution with the disc indicator, so one call
    costs two transforms regardless of the radius.
    """
    if not 0 < radius <= 0.5 * f.box * np.sqrt(2.0):
        raise ValueError("radius must lie in (0, L*sqrt(2)/2]")
    kernel, count = _disc_kernel(f.n, f.box, radius)
    return np.fft.ifft2(np.fft.fft2(f.values) * kernel).real / count


# ---------------------------------------------------------------------------
# off-grid sampling


def spectral_upsample(f: GridField, factor: int = 4) -> GridField:
    """Zero-pad the spectrum to an (factor*n)^2 grid. Exact for band-limited data,
    with the Nyquist row/column split evenly so the fine interpolant stays real."""
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise ValueError("factor must be a power of two")
    if factor == 1:
        return f
    n, m = f.n, f.n * factor
    k, c = n // 2, (f.n * factor) // 2
    Fc = np.fft.fftshift(to_spectrum(f).coeffs)
    Gc = np.zeros((m, m), dtype=complex)
    Gc[c - k:c + k, c - k:c + k] = Fc
    Gc[c - k, :] *= 0.5
    Gc[c + k, :] = Gc[c - k, :]
    Gc[:, c - k] *= 0.5
    Gc[:, c + k] = Gc[:, c - k]
    vals = np.fft.ifft2(np.fft.ifftshift(Gc)).real * m**2
    return GridField(vals, f.box)


def sample_field(f: GridField, pts: np.ndarray, method: str = "bilinear",
                 upsample: int = 4) -> np.ndarray:
    """Evaluate f at arbitrary points of the periodic box.

    method="bilinear": wrapped bilinear interpolation, appropriate for rough
    (e.g. piecewise-constant) data since it never overshoots the data range.
    method="spectral": Fourier upsampling followed by wrapped cubic-spline
    interpolation, appropriate for smooth data.
    """
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("pts must have shape (m, 2)")
    if method == "bilinear":
        g = f
        order = 1
    elif method == "spectral":
        g = spectral_upsample(f, upsample)
        order = 3
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    idx = (pts.T / g.dx) % g.n
    return ndimage.map_coordinates(g.values, idx, order=order, mode="grid-wrap")


# ---------------------------------------------------------------------------
# serialization: little-endian header (dim, n as int32; box as float64),
# then the payload row-major as float64.


def save_field(f: GridField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", f.dim, f.n))
        fh.write(struct.pack("<d", f.box))
        fh.write(f.values.astype("<f8").tobytes(order="C"))


def load_field(path) -> GridField:
    with open(path, "rb") as fh:
        dim, n = struct.unpack("<ii", fh.read(8))
        if dim != 2:
            raise ValueError(f"unsupported field dimension {dim}")
        (box,) = struct.unpack("<d", fh.read(8))
        vals = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
    return GridField(vals.copy(), box)


def field_to_csv(f: GridField, path) -> None:
    np.savetxt(path, f.values, delimiter=",")


def save_particles(pts: np.ndarray, box: float, path, time: float = 0.0) -> None:
    """Particle positions with the same header convention as fields:
    (dim, count int32; box, time float64), payload row-major float64."""
    pts = np.asarray(pts, dtype=float)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", pts.shape[1], pts.shape[0]))
        fh.write(struct.pack("<dd", box, time))
        fh.write(pts.astype("<f8").tobytes(order="C"))


def load_particles(path) -> tuple[np.ndarray, float, float]:
    with open(path, "rb") as fh:
        dim, count = struct.unpack("<ii", fh.read(8))
        box, time = struct.unpack("<dd", fh.read(16))
        pts = np.frombuffer(fh.read(8 * dim * count), dtype="<f8").reshape(count, dim)
    return pts.copy(), box, time

"""Time-dependent divergence-free velocity fields on the periodic box.

A velocity field knows how to evaluate itself at arbitrary particle
positions and times, how to report the times where it switches profile
discontinuously (so the integrator can align steps with them), and how to
produce sampled snapshots of itself and of its gradient magnitude.
"""

from __future__ import annotations

import numpy as np

from .grid import GridField, min_image, to_spectrum, wavenumbers

__all__ = [
    "VelocityField",
    "ZeroVelocity",
    "SteadyShear",
    "RadialVortex",
    "SampledSteady",
    "curl_from_stream",
    "sampled_divergence",
]


class VelocityField:
    """Base class: evaluable at (t, points), periodic in space."""

    divergence_free = True

    def velocity(self, t: float, pts: np.ndarray) -> np.ndarray:
        """Velocity vectors at the given (m, 2) positions, shape (m, 2)."""
        raise NotImplementedError

    def switch_times(self, t0: float, t1: float) -> np.ndarray:
        """Interior times in (t0, t1) where the profile jumps in t."""
        return np.empty(0)

    def min_time_scale(self) -> float:
        """Shortest intrinsic time scale (switching period), or inf."""
        return np.inf

    def snapshot_key(self, t: float):
        """Hashable identifier of the spatial profile at time t, for caches."""
        return round(float(t), 12)

    def sample(self, t: float, n: int, box: float = 1.0) -> tuple[GridField, GridField]:
        """Both velocity components sampled on the n x n grid."""
        x = np.arange(n) * (box / n)
        p1, p2 = np.meshgrid(x, x, indexing="ij")
        pts = np.stack([p1.ravel(), p2.ravel()], axis=1)
        vel = self.velocity(t, pts)
        return (GridField(vel[:, 0].reshape(n, n), box),
                GridField(vel[:, 1].reshape(n, n), box))

    def grad_mag_field(self, t: float, n: int, box: float = 1.0) -> GridField:
        """Pointwise Frobenius norm of the velocity gradient, sampled.

        Derivatives are taken spectrally from the sampled components, which
        is exact up to aliasing for smooth fields.
        """
        u1, u2 = self.sample(t, n, box)
        k = wavenumbers(n, box)
        sq = np.zeros((n, n))
        for comp in (u1, u2):
            c = to_spectrum(comp).coeffs
            d1 = np.fft.ifft2(1j * k[:, None] * c).real * n**2
            d2 = np.fft.ifft2(1j * k[None, :] * c).real * n**2
            sq += d1**2 + d2**2
        return GridField(np.sqrt(sq), box)


class ZeroVelocity(VelocityField):
    def velocity(self, t, pts):
        return np.zeros_like(np.asarray(pts, dtype=np.float64))

    def snapshot_key(self, t):
        return "zero"


class SteadyShear(VelocityField):
    """b = (A sin(2 pi x2 / L), 0): the classical closed-form test field."""

    def __init__(self, amplitude: float = 1.0, box: float = 1.0):
        self.amplitude = amplitude
        self.box = box

    def velocity(self, t, pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = np.zeros_like(pts)
        out[:, 0] = self.amplitude * np.sin(2.0 * np.pi * pts[:, 1] / self.box)
        return out

    def snapshot_key(self, t):
        return "shear"


class RadialVortex(VelocityField):
    """Azimuthal field with Gaussian angular-rate profile, centered in the box.

    Particles move along circles around the center at rate
    peak_rate * exp(-r^2 / (2 sigma^2)), so radially symmetric scalars are
    invariant.  Any radial rate profile is divergence-free; the default
    width keeps the wrapped Gaussian tails at machine-negligible size, and
    parametrizing by the peak rate keeps the core non-stiff for the
    integrator.
    """

    def __init__(self, peak_rate: float = 5.0, sigma: float = 0.06,
                 center: tuple[float, float] = (0.5, 0.5), box: float = 1.0):
        self.peak_rate = peak_rate
        self.sigma = sigma
        self.center = np.asarray(center, dtype=np.float64)
        self.box = box

    def velocity(self, t, pts):
        pts = np.asarray(pts, dtype=np.float64)
        d = min_image(pts - self.center, self.box)
        rate = self.peak_rate * np.exp(-(d[:, 0] ** 2 + d[:, 1] ** 2)
                                       / (2.0 * self.sigma**2))
        out = np.empty_like(pts)
        out[:, 0] = d[:, 1] * rate
        out[:, 1] = -d[:, 0] * rate
        return out

    def snapshot_key(self, t):
        return "vortex"


class SampledSteady(VelocityField):
    """Steady field defined by sampled components, bilinearly interpolated."""

    def __init__(self, u1: GridField, u2: GridField):
        if u1.n != u2.n or u1.box != u2.box:
            raise ValueError("components must share a grid")
        self.u1 = u1
        self.u2 = u2
        self.box = u1.box

    def velocity(self, t, pts):
        from .grid import sample_field
        pts = np.asarray(pts, dtype=np.float64)
        return np.stack([sample_field(self.u1, pts), sample_field(self.u2, pts)],
                        axis=1)

    def sample(self, t, n, box=1.0):
        if n == self.u1.n and box == self.box:
            return self.u1, self.u2
        return super().sample(t, n, box)

    def snapshot_key(self, t):
        return "sampled-steady"


def curl_from_stream(psi_values: np.ndarray, box: float = 1.0) -> tuple[GridField, GridField]:
    """Velocity components (-d2 psi, d1 psi) by spectral differentiation.

    Derivatives of a sampled stream function taken in Fourier space give a
    snapshot whose discrete divergence vanishes identically, regardless of
    how well the grid resolves the stream.  The Nyquist band is projected
    out first: the odd derivative is not representable there, and keeping
    it would leave a spurious residue in the discrete divergence.
    """
    n = psi_values.shape[0]
    k = wavenumbers(n, box)
    c = np.fft.fft2(psi_values) / n**2
    if n % 2 == 0:
        c[n // 2, :] = 0.0
        c[:, n // 2] = 0.0
    u1 = np.fft.ifft2(-1j * k[None, :] * c).real * n**2
    u2 = np.fft.ifft2(1j * k[:, None] * c).real * n**2
    return GridField(u1, box), GridField(u2, box)


def sampled_divergence(b: VelocityField, t: float, n: int, box: float = 1.0) -> float:
    """L^2 norm of the spectral divergence of a sampled snapshot."""
    u1, u2 = b.sample(t, n, box)
    k = wavenumbers(n, box)
    div = (1j * k[:, None] * to_spectrum(u1).coeffs
           + 1j * k[None, :] * to_spectrum(u2).coeffs)
    return float(np.sqrt(box**2 * np.sum(np.abs(div) ** 2)))

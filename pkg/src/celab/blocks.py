"""Mixing building block and the multiscale patched construction.

The building block is an alternating sinusoidal shear on the unit cell,
switched every ``switch_period``: one phase shears horizontally with
profile A sin(2 pi x2), the other vertically with A sin(2 pi x1).  Each
phase is generated by a stream function multiplied by a smooth cutoff that
vanishes at the cell boundary, so the field is exactly divergence-free,
compactly supported in the cell, and C-infinity.  Advection under this
family is the standard numerically mixing flow; its exponential mixing
rate is measured, not assumed.

The patched construction places rescaled copies of the block on disjoint
cubes: copy n lives on a cube of side 3*lambda_n, carries amplitude factor
gamma_n, and runs on its own clock t/tau_n, with the schedule
lambda_n = e^-n, gamma_n = 1/n^2, tau_n = (n^2 e^-dn)^(1/p).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .flow import solve_ce
from .grid import (
    GridField,
    coords,
    demean,
    sample_field,
    sobolev_neg_norm,
    to_spectrum,
    wavenumbers,
)
from .velocity import VelocityField, curl_from_stream

__all__ = [
    "BuildingBlock",
    "BuildingBlockVelocity",
    "BlockDecayFit",
    "ScheduleN",
    "PatchedVelocity",
    "ResolutionGuardError",
    "building_block_field",
    "measure_block_decay",
    "patched_field",
    "patched_solution",
    "evolve_unit_blocks",
    "divergence_series_terms",
    "DivergenceSeries",
    "block_w1p_norm",
    "patched_w1p_norm",
    "fit_loglinear",
]

MIN_CUBE_CELLS = 32


# ---------------------------------------------------------------------------
# C-infinity cutoff: the exponential smoothstep rises from 0 to 1 on [0, 1]
# with all derivatives vanishing at both ends, so the stream function keeps
# spectral (faster than any polynomial) decay.


def _smoothstep(u):
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    out[u >= 1.0] = 1.0
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    with np.errstate(over="ignore"):
        f = np.exp(-1.0 / um)
        g = np.exp(-1.0 / (1.0 - um))
    out[mid] = f / (f + g)
    return out


def _smoothstep_d(u):
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    with np.errstate(over="ignore"):
        f = np.exp(-1.0 / um)
        g = np.exp(-1.0 / (1.0 - um))
    out[mid] = f * g * (1.0 / um**2 + 1.0 / (1.0 - um) ** 2) / (f + g) ** 2
    return out


def _cutoff(s, w):
    """1-d cutoff: 0 at 0 and 1, identically 1 on [w, 1-w]."""
    return _smoothstep(s / w) * _smoothstep((1.0 - s) / w)


def _cutoff_d(s, w):
    return (_smoothstep_d(s / w) * _smoothstep((1.0 - s) / w)
            - _smoothstep(s / w) * _smoothstep_d((1.0 - s) / w)) / w


@dataclass(frozen=True)
class BuildingBlock:
    """Parameters of the alternating-shear mixing block on the unit cell.

    The shear axis alternates every switch period, and each period applies
    its own phase offset from an equidistributed aperiodic schedule (see
    BuildingBlockVelocity.phase_offset).  A fixed-phase alternating sine
    shear traps scalar in elliptic islands of its period map and stalls at
    a mix-norm plateau; sliding the shear crests aperiodically removes the
    islands so the advected datum keeps mixing exponentially.
    """

    switch_period: float = 1.0
    amplitude: float = 1.0
    cutoff_width: float = 1.0 / 16.0

    def __post_init__(self):
        if self.switch_period <= 0:
            raise ValueError("switch period must be positive")
        if not 0 < self.cutoff_width < 0.5:
            raise ValueError("cutoff width must lie in (0, 1/2)")

    def rho0(self, n: int) -> GridField:
        """Mean-zero initial datum sin(2 pi x1) sin(2 pi x2) on the cell."""
        return GridField.from_function(
            lambda x1, x2: np.sin(2.0 * np.pi * x1) * np.sin(2.0 * np.pi * x2), n)


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class BuildingBlockVelocity(VelocityField):
    """Evaluable alternating-shear field of a BuildingBlock, cell-periodic."""

    def __init__(self, block: BuildingBlock):
        self.block = block
        self.box = 1.0

    def period_index(self, t: float) -> int:
        return int(math.floor(t / self.block.switch_period))

    def phase(self, t: float) -> int:
        """Active shear axis: 0 moves rows along x1, 1 moves columns."""
        return self.period_index(t) % 2

    @staticmethod
    def phase_offset(k: int) -> float:
        """Deterministic phase of period k: 2 pi frac((k+1) golden ratio).

        Equidistributed and aperiodic, so no shear crest ever realigns with
        an earlier one and the period map has no persistent islands.
        """
        return 2.0 * np.pi * float(np.modf((k + 1) * _GOLDEN)[0])

    def _profile(self, t, s):
        """Stream profile and its slope in the sheared coordinate s.

        psi(s) = (A / 2 pi) (cos(2 pi s + phi) - cos(phi)) vanishes at both
        cell walls for every phase phi, keeping the cutoff terms bounded.
        """
        A = self.block.amplitude
        phi = self.phase_offset(self.period_index(t))
        psi = (A / (2.0 * np.pi)) * (np.cos(2.0 * np.pi * s + phi)
                                     - np.cos(phi))
        dpsi = -A * np.sin(2.0 * np.pi * s + phi)
        return psi, dpsi

    def velocity(self, t, pts):
        pts = np.mod(np.asarray(pts, dtype=np.float64), 1.0)
        w = self.block.cutoff_width
        x1, x2 = pts[:, 0], pts[:, 1]
        out = np.empty_like(pts)
        c1, c2 = _cutoff(x1, w), _cutoff(x2, w)
        if self.phase(t) == 0:
            psi, dpsi = self._profile(t, x2)
            out[:, 0] = -dpsi * c1 * c2 - psi * c1 * _cutoff_d(x2, w)
            out[:, 1] = psi * _cutoff_d(x1, w) * c2
        else:
            psi, dpsi = self._profile(t, x1)
            out[:, 0] = psi * c1 * _cutoff_d(x2, w)
            out[:, 1] = -dpsi * c1 * c2 - psi * _cutoff_d(x1, w) * c2
        return out

    def stream_at(self, t, pts):
        """Stream function values (velocity = spectral curl of these)."""
        pts = np.mod(np.asarray(pts, dtype=np.float64), 1.0)
        w = self.block.cutoff_width
        x1, x2 = pts[:, 0], pts[:, 1]
        cut = _cutoff(x1, w) * _cutoff(x2, w)
        if self.phase(t) == 0:
            psi, _ = self._profile(t, x2)
            return psi * cut
        psi, _ = self._profile(t, x1)
        return -psi * cut

    def stream_values(self, t, n, box=1.0):
        x = coords(n, box)
        p1, p2 = np.meshgrid(x, x, indexing="ij")
        pts = np.stack([p1.ravel(), p2.ravel()], axis=1)
        return self.stream_at(t, pts).reshape(n, n)

    def sample(self, t, n, box=1.0):
        # spectral curl of the sampled stream: discretely divergence-free
        return curl_from_stream(self.stream_values(t, n, box), box)

    def switch_times(self, t0, t1):
        T = self.block.switch_period
        k0 = math.floor(t0 / T) + 1
        k1 = math.ceil(t1 / T) - 1
        return np.arange(k0, k1 + 1) * T

    def min_time_scale(self):
        return self.block.switch_period

    def snapshot_key(self, t):
        # each switch period carries its own phase offset, so the field is
        # only frozen within a single period
        return ("block", self.period_index(t))


def building_block_field(bb: BuildingBlock) -> BuildingBlockVelocity:
    return BuildingBlockVelocity(bb)


# ---------------------------------------------------------------------------
# measured exponential mixing


def fit_loglinear(times, values):
    """Least-squares fit of log(values) vs times: (slope, intercept, R^2)."""
    t = np.asarray(times, dtype=np.float64)
    y = np.log(np.asarray(values, dtype=np.float64))
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), float(intercept), r2


@dataclass(frozen=True)
class BlockDecayFit:
    """Fitted exponential mix-norm decay rate of the advected block datum."""

    c_hat: float
    amplitude: float
    r_squared: float
    times: np.ndarray
    norms: np.ndarray
    coarse_norms: np.ndarray
    window: np.ndarray
    floor_onset: float
    coarse_c_hat: float
    states: dict | None = None


def _decay_series(b, u0, times, ode_tol, keep=False):
    out = np.empty(len(times))
    states = {} if keep else None
    for k, t in enumerate(times):
        ut = solve_ce(b, u0, float(t), ode_tol=ode_tol, interp="spectral")
        if keep:
            states[float(t)] = ut
        # the continuum solution is mean-zero; the numerical mean is
        # interpolation noise and would poison the negative-order norm
        out[k] = sobolev_neg_norm(demean(ut), 1.0)
    return out, states


def measure_block_decay(bb: BuildingBlock, t_max: float = 10.0, n: int = 512,
                        n_times: int = 11, ode_tol: float = 1e-6,
                        keep_states: bool = False) -> BlockDecayFit:
    """Advect the block datum and fit its mix-norm decay rate.

    The datum is evolved on the n grid and on the n/2 grid; the resolved
    window ends where the two measurements first disagree by more than 10%
    (under-resolved mixing fakes decay), and values within 10^3 of the
    arithmetic floor are excluded as well.  Returns the least-squares fit
    of log ||rho_t||_(H^-1) over that window, together with the fit of the
    half-resolution series over the same window (a grid-stability readout)
    and, when keep_states is set, the evolved fields themselves.
    """
    b = building_block_field(bb)
    times = np.linspace(0.0, t_max, n_times)
    norms, states = _decay_series(b, bb.rho0(n), times, ode_tol, keep=keep_states)
    coarse, _ = _decay_series(b, bb.rho0(n // 2), times, ode_tol)

    disagree = np.abs(norms - coarse) > 0.1 * norms
    onset = int(np.argmax(disagree)) if disagree.any() else len(times)
    floor_onset = float(norms[onset]) if onset < len(times) else 0.0
    window = np.zeros(len(times), dtype=bool)
    window[:onset] = True
    window &= norms >= 1e3 * np.finfo(float).eps * norms[0]
    if window.sum() < 3:
        raise ValueError("decay hits the grid floor immediately; grid too coarse")

    slope, intercept, r2 = fit_loglinear(times[window], norms[window])
    coarse_slope, _, _ = fit_loglinear(times[window], coarse[window])
    return BlockDecayFit(c_hat=-slope, amplitude=float(np.exp(intercept)),
                         r_squared=r2, times=times, norms=norms,
                         coarse_norms=coarse, window=window,
                         floor_onset=floor_onset, coarse_c_hat=-coarse_slope,
                         states=states)


# ---------------------------------------------------------------------------
# schedule and packing


@dataclass(frozen=True)
class ScheduleN:
    """Scales, amplitudes, clocks, and cube centers of the patched field.

    Cube n has side 3*lambda_n and hosts the block copy on the concentric
    cell of side lambda_n, leaving a margin of lambda_n between the copy's
    support and the cube boundary.
    """

    N: int
    p: float
    box: float
    lam: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    centers: np.ndarray

    @classmethod
    def build(cls, N: int, p: float, box: float = 2.0, d: int = 2,
              edge_margin: float = 0.02, gap: float = 0.02) -> "ScheduleN":
        if N < 1:
            raise ValueError("need at least one scale")
        if p < 1:
            raise ValueError("the Sobolev exponent must satisfy p >= 1")
        ns = np.arange(1, N + 1, dtype=np.float64)
        lam = np.exp(-ns)
        gamma = 1.0 / ns**2
        tau = (ns**2 * np.exp(-d * ns)) ** (1.0 / p)
        centers = cls._pack(3.0 * lam, box, edge_margin, gap)
        return cls(N=N, p=p, box=box, lam=lam, gamma=gamma, tau=tau,
                   centers=centers)

    @staticmethod
    def _pack(sides, box, edge_margin, gap):
        """Deterministic shelf packing, largest cube first."""
        centers = []
        x = edge_margin
        y = edge_margin
        row_h = 0.0
        for s in sides:
            if x + s > box - edge_margin:
                y += row_h + gap
                x = edge_margin
                row_h = 0.0
            if x + s > box - edge_margin or y + s > box - edge_margin:
                raise ValueError("cubes do not fit inside the box")
            centers.append((x + 0.5 * s, y + 0.5 * s))
            x += s + gap
            row_h = max(row_h, s)
        return np.asarray(centers)

    def cube_side(self, idx: int) -> float:
        return 3.0 * float(self.lam[idx])

    def to_json(self) -> str:
        return json.dumps({
            "N": self.N, "p": self.p, "box": self.box,
            "lam": self.lam.tolist(), "gamma": self.gamma.tolist(),
            "tau": self.tau.tolist(), "centers": self.centers.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ScheduleN":
        d = json.loads(text)
        return cls(N=d["N"], p=d["p"], box=d["box"],
                   lam=np.asarray(d["lam"]), gamma=np.asarray(d["gamma"]),
                   tau=np.asarray(d["tau"]), centers=np.asarray(d["centers"]))


class ResolutionGuardError(ValueError):
    """The composite grid cannot resolve the smallest scheduled cube."""


def _check_resolution(sched: ScheduleN, n: int):
    cells_across = n * 3.0 * sched.lam[-1] / sched.box
    if cells_across < MIN_CUBE_CELLS:
        raise ResolutionGuardError(
            f"smallest cube spans {cells_across:.1f} grid cells,"
            f" fewer than the required {MIN_CUBE_CELLS}")


# ---------------------------------------------------------------------------
# the patched field


class PatchedVelocity(VelocityField):
    """Superposition of rescaled block copies on disjoint cubes.

    Copy n contributes (lambda_n / tau_n) v(t / tau_n, y) at the cell point
    y = (x - corner_n) / lambda_n, and zero elsewhere.
    """

    def __init__(self, sched: ScheduleN, bb: BuildingBlock):
        self.sched = sched
        self.block_velocity = BuildingBlockVelocity(bb)
        self.box = sched.box
        self.corners = sched.centers - 0.5 * sched.lam[:, None]

    def _local(self, pts, idx):
        local = (pts - self.corners[idx]) / self.sched.lam[idx]
        inside = np.all((local >= 0.0) & (local < 1.0), axis=1)
        return local, inside

    def velocity(self, t, pts):
        pts = np.mod(np.asarray(pts, dtype=np.float64), self.box)
        out = np.zeros_like(pts)
        for idx in range(self.sched.N):
            local, inside = self._local(pts, idx)
            if not inside.any():
                continue
            scale = self.sched.lam[idx] / self.sched.tau[idx]
            out[inside] = scale * self.block_velocity.velocity(
                t / self.sched.tau[idx], local[inside])
        return out

    def stream_values(self, t, n, box=None):
        box = self.box if box is None else box
        x = coords(n, box)
        p1, p2 = np.meshgrid(x, x, indexing="ij")
        pts = np.stack([p1.ravel(), p2.ravel()], axis=1)
        psi = np.zeros(pts.shape[0])
        for idx in range(self.sched.N):
            local, inside = self._local(pts, idx)
            if not inside.any():
                continue
            scale = self.sched.lam[idx] ** 2 / self.sched.tau[idx]
            psi[inside] = scale * self.block_velocity.stream_at(
                t / self.sched.tau[idx], local[inside])
        return psi.reshape(n, n)

    def sample(self, t, n, box=None):
        box = self.box if box is None else box
        return curl_from_stream(self.stream_values(t, n, box), box)

    def switch_times(self, t0, t1):
        pieces = []
        for idx in range(self.sched.N):
            T = self.sched.tau[idx] * self.block_velocity.block.switch_period
            k0 = math.floor(t0 / T) + 1
            k1 = math.ceil(t1 / T) - 1
            if k1 >= k0:
                pieces.append(np.arange(k0, k1 + 1) * T)
        if not pieces:
            return np.empty(0)
        return np.unique(np.concatenate(pieces))

    def min_time_scale(self):
        return float(self.sched.tau.min()) * self.block_velocity.block.switch_period

    def snapshot_key(self, t):
        periods = tuple(self.block_velocity.period_index(t / tau)
                        for tau in self.sched.tau)
        return ("patched", periods)


def patched_field(sched: ScheduleN, bb: BuildingBlock) -> PatchedVelocity:
    return PatchedVelocity(sched, bb)


# ---------------------------------------------------------------------------
# the patched solution, block by block


def evolve_unit_blocks(sched: ScheduleN, bb: BuildingBlock, t: float,
                       block_n: int = 256, ode_tol: float = 1e-6) -> dict:
    """Unit-cell states rho(t / tau_n) for every scheduled block."""
    b = building_block_field(bb)
    u0 = bb.rho0(block_n)
    states = {}
    for idx in range(sched.N):
        states[idx] = solve_ce(b, u0, t / float(sched.tau[idx]),
                               ode_tol=ode_tol, interp="spectral")
    return states


def patched_solution(sched: ScheduleN, bb: BuildingBlock, t: float, n: int,
                     block_n: int = 256, ode_tol: float = 1e-6,
                     unit_states: dict | None = None) -> GridField:
    """The transported multiscale datum at time t on the composite grid.

    Each block is evolved once on its own unit-cell grid at its own clock
    and composited by interpolation; the composite grid only has to carry
    the result, so the guard merely requires the smallest cube to span at
    least MIN_CUBE_CELLS composite cells.
    """
    _check_resolution(sched, n)
    if unit_states is None:
        unit_states = evolve_unit_blocks(sched, bb, t, block_n, ode_tol)
    x = coords(n, sched.box)
    p1, p2 = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([p1.ravel(), p2.ravel()], axis=1)
    vals = np.zeros(pts.shape[0])
    corners = sched.centers - 0.5 * sched.lam[:, None]
    for idx in range(sched.N):
        local = (pts - corners[idx]) / sched.lam[idx]
        inside = np.all((local >= 0.0) & (local < 1.0), axis=1)
        if not inside.any():
            continue
        vals[inside] = sched.gamma[idx] * sample_field(
            unit_states[idx], local[inside], method="bilinear")
    return GridField(vals.reshape(n, n), sched.box)


# ---------------------------------------------------------------------------
# norms and series


def _component_norms(u1: GridField, u2: GridField, p: float):
    """(||v||_p^p, ||grad v||_p^p) with the Frobenius gradient magnitude."""
    n, box = u1.n, u1.box
    k = wavenumbers(n, box)
    speed = np.hypot(u1.values, u2.values)
    gsq = np.zeros((n, n))
    for comp in (u1, u2):
        c = to_spectrum(comp).coeffs
        d1 = np.fft.ifft2(1j * k[:, None] * c).real * n**2
        d2 = np.fft.ifft2(1j * k[None, :] * c).real * n**2
        gsq += d1**2 + d2**2
    cell = (box / n) ** 2
    return (float(np.sum(speed**p) * cell),
            float(np.sum(np.sqrt(gsq) ** p) * cell))


def block_w1p_norm(bv: BuildingBlockVelocity, t: float, p: float,
                   n: int = 256) -> float:
    """W^(1,p) norm of the block snapshot at time t, sampled at n."""
    u1, u2 = bv.sample(t, n, 1.0)
    vp, gp = _component_norms(u1, u2, p)
    return (vp + gp) ** (1.0 / p)


def patched_w1p_norm(sched: ScheduleN, bb: BuildingBlock, t: float, p: float,
                     block_n: int = 256) -> float:
    """Closed-form W^(1,p) norm of the patched field from unit-cell norms.

    Rescaling multiplies the L^p part by lambda^(d+p)/tau^p and the
    gradient part by lambda^d/tau^p; with the schedule the gradient parts
    sum to sup-norm times sum(1/n^2).
    """
    bv = BuildingBlockVelocity(bb)
    d = 2
    total = 0.0
    for idx in range(sched.N):
        u1, u2 = bv.sample(t / float(sched.tau[idx]), block_n, 1.0)
        vp, gp = _component_norms(u1, u2, p)
        lam, tau = float(sched.lam[idx]), float(sched.tau[idx])
        total += (lam ** (d + p) / tau**p) * vp + (lam**d / tau**p) * gp
    return total ** (1.0 / p)


@dataclass(frozen=True)
class DivergenceSeries:
    """Per-scale lower-bound terms for the gamma-weighted functional."""

    terms: np.ndarray
    raw_growth: np.ndarray
    corrections: np.ndarray
    partial_sums: np.ndarray
    divergent: bool
    gamma: float
    t: float
    c_hat: float


def divergence_series_terms(sched: ScheduleN, gamma: float, t: float,
                            c_hat: float, rho_l2_sq: float = 0.25,
                            constant: float = 1.0) -> DivergenceSeries:
    """Predicted per-scale contributions gamma_n^2 lambda_n^d tau_n^(gamma-1)
    * C (c_hat t)^(1-gamma), less the disjoint-support correction
    (4 ||rho0||_2^2 / (1-gamma)) gamma_n^2 lambda_n^d |log lambda_n|^(1-gamma).

    The partial sums grow without bound exactly when gamma + p - 1 < 0.
    """
    if gamma >= 1:
        raise ValueError("the weight exponent must satisfy gamma < 1")
    d = 2
    weight = sched.gamma**2 * sched.lam**d
    raw = weight * sched.tau ** (gamma - 1.0) * constant * rho_l2_sq \
        * (c_hat * t) ** (1.0 - gamma)
    corr = (4.0 * rho_l2_sq / (1.0 - gamma)) * weight \
        * np.abs(np.log(sched.lam)) ** (1.0 - gamma)
    terms = raw - corr
    return DivergenceSeries(terms=terms, raw_growth=raw, corrections=corr,
                            partial_sums=np.cumsum(terms),
                            divergent=bool(gamma + sched.p - 1.0 < 0.0),
                            gamma=gamma, t=t, c_hat=c_hat)

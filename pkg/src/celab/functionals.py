"""Two-point functionals of grid fields and numerical inequality checkers.

The central object is the log-weighted increment functional

    F_gamma(f) = integral over offsets h in an annulus of
                 ( integral |f(x+h)-f(x)|^2 dx ) / ( |h|^d * log(1/|h|)^gamma ),

whose order-p variant (gamma = 1-p) measures a derivative of logarithmic
order.  The offset integral is discretized by a polar quadrature with
log-spaced shells (HQuadrature); the inner integral is evaluated spectrally
and is exact for band-limited fields.  For broadband fields on large grids
a second discretization sums over every grid-aligned offset instead
(log_weighted_functional_grid), which costs one transform pair total.

The module also provides the Fourier-side counterpart of the order-p
functional, a capped variant used by the pointwise-to-integral checker,
the geometric mixing scale, and verifiers for three inequalities that the
experiment layer exercises: an interpolation bound, its mix-norm endpoint,
and a lower bound for sums of fields with disjoint supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridField,
    ball_average,
    coords,
    lp_norm,
    min_image,
    shift,
    sobolev_neg_norm,
    to_spectrum,
    wavenumbers,
)

__all__ = [
    "HQuadrature",
    "LogSobolevResult",
    "InterpolationReport",
    "MixLogBoundReport",
    "KeyLemmaReport",
    "SupportPart",
    "SubadditivityReport",
    "PairCheckError",
    "inner_sq_increment",
    "grid_offset_increments",
    "increment_profile",
    "log_weighted_functional",
    "log_weighted_functional_grid",
    "log_sobolev",
    "log_sobolev_fourier",
    "capped_increment",
    "capped_log_weighted",
    "sup_log_increment",
    "geometric_mixing_scale",
    "default_radius_ladder",
    "check_interpolation",
    "check_mixing_log_bound",
    "check_key_lemma",
    "subadditivity_gap",
]


class PairCheckError(ValueError):
    """The sampled pointwise Lipschitz precondition failed."""


# ---------------------------------------------------------------------------
# offset quadrature


@dataclass(frozen=True)
class HQuadrature:
    """Polar quadrature over the annulus r_min <= |h| <= r_max.

    Shells are log-spaced in radius with trapezoid weights (the integrands
    of interest vary over decades in |h|); angles are uniform.  `weights`
    holds one area weight per node, shell-major, so that sum(weights)
    approximates the annulus area.
    """

    r_min: float
    r_max: float
    n_shells: int
    n_angles: int
    radii: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, r_min: float, r_max: float, n_shells: int = 64,
              n_angles: int = 32) -> "HQuadrature":
        if not 0 < r_min < r_max:
            raise ValueError("need 0 < r_min < r_max")
        if n_shells < 8 or n_angles < 4:
            raise ValueError("quadrature too coarse (need >= 8 shells, >= 4 angles)")
        radii = np.geomspace(r_min, r_max, n_shells)
        # each shell owns the annulus between geometric midpoints, so the
        # weights add up to the annulus area exactly at any shell count
        edges = np.empty(n_shells + 1)
        edges[0], edges[-1] = r_min, r_max
        edges[1:-1] = np.sqrt(radii[:-1] * radii[1:])
        shell_w = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2) / n_angles
        weights = np.repeat(shell_w, n_angles)
        q = cls(r_min, r_max, n_shells, n_angles, radii, weights)
        area = np.pi * (r_max**2 - r_min**2)
        if abs(q.weights.sum() - area) > 0.01 * area:
            raise ValueError("quadrature weights miss the annulus area by > 1%")
        return q

    @classmethod
    def for_grid(cls, f: GridField, r_max: float = 1.0 / 3.0,
                 n_shells: int = 64, n_angles: int = 32) -> "HQuadrature":
        """Default quadrature for a field: shells from the grid spacing out."""
        return cls.build(f.dx, r_max, n_shells, n_angles)

    def nodes(self) -> np.ndarray:
        """All offset vectors, shape (n_shells * n_angles, 2), shell-major."""
        theta = np.arange(self.n_angles) * (2.0 * np.pi / self.n_angles)
        h1 = np.outer(self.radii, np.cos(theta)).ravel()
        h2 = np.outer(self.radii, np.sin(theta)).ravel()
        return np.stack([h1, h2], axis=1)

    def node_radii(self) -> np.ndarray:
        return np.repeat(self.radii, self.n_angles)

    def area(self) -> float:
        return float(self.weights.sum())


def _require_resolved(f: GridField, q: HQuadrature) -> None:
    if q.r_min < f.dx * (1.0 - 1e-12):
        raise ValueError(
            f"quadrature r_min {q.r_min:g} probes below the grid spacing {f.dx:g}")


# ---------------------------------------------------------------------------
# squared increments


def inner_sq_increment(f: GridField, h) -> float:
    """Integral of |f(x+h) - f(x)|^2 dx, evaluated spectrally.

    Exact for band-limited fields: the translation is a phase factor, so the
    value is 2 L^d sum |f_hat|^2 (1 - cos(k.h)) over physical wavevectors k.
    """
    h = np.asarray(h, dtype=np.float64)
    spec = to_spectrum(f).coeffs
    k = wavenumbers(f.n, f.box)
    phase = k[:, None] * h[0] + k[None, :] * h[1]
    power = np.abs(spec) ** 2
    return float(2.0 * f.box**f.dim * np.sum(power * (1.0 - np.cos(phase))))


def grid_offset_increments(f: GridField) -> np.ndarray:
    """Squared-increment integrals for every grid-aligned offset at once.

    Returns an (n, n) array whose [i, j] entry is the integral of
    |f(x + h_ij) - f(x)|^2 dx for h_ij = (i, j) * L / n, computed from the
    periodic autocorrelation in one transform pair.
    """
    F = np.fft.fft2(f.values)
    corr = np.fft.ifft2(np.abs(F) ** 2).real / f.n**2 * f.box**f.dim
    return 2.0 * (corr[0, 0] - corr)


def increment_profile(f: GridField, nodes: np.ndarray,
                      rel_tol: float = 1e-16) -> np.ndarray:
    """Squared-increment integrals at arbitrary offset nodes, shape (m,).

    Spectral coefficients carrying less than rel_tol of the total power are
    dropped before the phase sum; this is lossless at the stated tolerance
    and makes band-limited fields cheap.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    spec = to_spectrum(f).coeffs
    power = (np.abs(spec) ** 2).ravel()
    total = power.sum()
    if total == 0.0:
        return np.zeros(len(nodes))
    keep = power > rel_tol * total
    k = wavenumbers(f.n, f.box)
    k1 = np.broadcast_to(k[:, None], spec.shape).ravel()[keep]
    k2 = np.broadcast_to(k[None, :], spec.shape).ravel()[keep]
    kept_power = power[keep] * (2.0 * f.box**f.dim)
    out = np.empty(len(nodes))
    # chunk the (modes x nodes) phase matrix to ~64 MB
    chunk = max(1, int(8_000_000 // max(len(kept_power), 1)))
    for i in range(0, len(nodes), chunk):
        blk = nodes[i:i + chunk]
        phase = np.outer(k1, blk[:, 0]) + np.outer(k2, blk[:, 1])
        out[i:i + chunk] = kept_power @ (1.0 - np.cos(phase))
    return out


# ---------------------------------------------------------------------------
# log-weighted functionals


def _log_weights(q: HQuadrature, gamma: float, delta: float, d: int) -> np.ndarray:
    """Per-node quadrature weight divided by |h|^d |log(delta |h|)|^gamma."""
    if not 0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if delta * q.r_max >= 1.0:
        raise ValueError("need delta * r_max < 1 so the log weight is positive")
    r = q.node_radii()
    return q.weights / (r**d * np.abs(np.log(delta * r)) ** gamma)


def log_weighted_functional(f: GridField, gamma: float, q: HQuadrature,
                            delta: float = 1.0,
                            profile: np.ndarray | None = None) -> float:
    """The increment functional with weight 1 / (|h|^d |log(delta |h|)|^gamma).

    `profile` may carry a precomputed increment_profile(f, q.nodes()) so a
    single profile can be reweighted for several gamma values.
    """
    _require_resolved(f, q)
    if profile is None:
        profile = increment_profile(f, q.nodes())
    return float(_log_weights(q, gamma, delta, f.dim) @ profile)


def log_weighted_functional_grid(f: GridField, gamma: float,
                                 r_max: float = 1.0 / 3.0,
                                 delta: float = 1.0) -> float:
    """The same functional summed over every grid-aligned offset.

    Each offset h = (i, j) L/n with 0 < |h| <= r_max (minimal-image length)
    contributes its squared-increment integral times dx^d divided by
    |h|^d |log(delta |h|)|^gamma.  One transform pair covers all offsets, so
    this stays cheap on grids where a per-node spectral profile would not,
    and it requires no band-limitedness.
    """
    if not 0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if delta * r_max >= 1.0:
        raise ValueError("need delta * r_max < 1 so the log weight is positive")
    if r_max > 0.5 * f.box:
        raise ValueError("r_max must not exceed half the box (offset aliasing)")
    inc = grid_offset_increments(f)
    disp = min_image(coords(f.n, f.box), f.box)
    r = np.hypot(disp[:, None], disp[None, :])
    mask = (r > 0.0) & (r <= r_max)
    weights = np.zeros_like(r)
    rm = r[mask]
    weights[mask] = f.dx**f.dim / (rm**f.dim * np.abs(np.log(delta * rm)) ** gamma)
    return float(np.sum(weights * inc))


@dataclass(frozen=True)
class LogSobolevResult:
    value: float
    order_p: float
    quadrature: HQuadrature
    truncation_note: str


def log_sobolev(f: GridField, p: float, q: HQuadrature | None = None,
                profile: np.ndarray | None = None) -> LogSobolevResult:
    """Order-p log-weighted increment functional (weight log(1/|h|)^(p-1)).

    Offsets below the grid spacing are truncated, not extrapolated; the cut
    is recorded in the result.
    """
    if not p > 0:
        raise ValueError("order p must be positive")
    if q is None:
        q = HQuadrature.for_grid(f)
    if q.r_max >= 1.0:
        raise ValueError("r_max must be < 1 so log(1/|h|) stays positive")
    value = log_weighted_functional(f, 1.0 - p, q, profile=profile)
    note = (f"offsets |h| < {q.r_min:.3e} truncated (grid spacing {f.dx:.3e}); "
            f"r_max = {q.r_max:.3e}")
    return LogSobolevResult(value, p, q, note)


def log_sobolev_fourier(f: GridField, p: float) -> float:
    """Fourier-side counterpart of the order-p functional.

    Modes with physical wavenumber kappa = |2 pi xi / L| at least 10 are
    weighted by log(kappa)^p, lower modes by kappa^2; the threshold is fixed
    in physical units so boxes of different size are comparable.
    """
    if not p > 0:
        raise ValueError("order p must be positive")
    spec = to_spectrum(f).coeffs
    k = wavenumbers(f.n, f.box)
    kappa = np.hypot(k[:, None], k[None, :])
    weight = np.where(kappa >= 10.0,
                      np.log(np.maximum(kappa, 10.0)) ** p,
                      kappa**2)
    return float(f.box**f.dim * np.sum(weight * np.abs(spec) ** 2))


def capped_increment(f: GridField, h) -> float:
    """Integral of min(1, |f(x+h) - f(x)|^2) dx.

    The cap breaks the spectral shortcut, so the shifted field is brought
    back to real space and capped pointwise.
    """
    diff = shift(f, h).values - f.values
    return float(np.mean(np.minimum(1.0, diff**2)) * f.box**f.dim)


def capped_log_weighted(f: GridField, gamma: float, q: HQuadrature) -> float:
    """Capped variant of log_weighted_functional (one transform per node)."""
    _require_resolved(f, q)
    profile = np.array([capped_increment(f, h) for h in q.nodes()])
    return float(_log_weights(q, gamma, 1.0, f.dim) @ profile)


def sup_log_increment(f: GridField, p: float, q: HQuadrature | None = None) -> float:
    """max over offsets of log(1/|h|)^p * integral min(1, |f(x+h)-f(x)|^2) dx."""
    if q is None:
        q = HQuadrature.for_grid(f)
    if q.r_max >= 1.0:
        raise ValueError("r_max must be < 1 so log(1/|h|) stays positive")
    _require_resolved(f, q)
    r = q.node_radii()
    vals = np.array([capped_increment(f, h) for h in q.nodes()])
    return float(np.max(np.log(1.0 / r) ** p * vals))


# ---------------------------------------------------------------------------
# geometric mixing scale


def default_radius_ladder(f: GridField, n_radii: int = 25) -> np.ndarray:
    """Fixed log-spaced probe radii, from two grid cells up to a quarter box."""
    return np.geomspace(2.0 * f.dx, 0.25 * f.box, n_radii)


def geometric_mixing_scale(f: GridField, kappa: float,
                           radii: np.ndarray | None = None) -> float | None:
    """Smallest probed radius at which every ball average of f is below kappa.

    The field must already be normalized to |f| <= 1.  Returns None when no
    probed radius qualifies (unmixed at all probed scales).
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    if lp_norm(f, np.inf) > 1.0 + 1e-12:
        raise ValueError("field must satisfy |f| <= 1; rescale first")
    if radii is None:
        radii = default_radius_ladder(f)
    best = None
    for r in sorted(float(r) for r in radii):
        if np.max(np.abs(ball_average(f, r))) < kappa:
            best = r
            break
    return best


# ---------------------------------------------------------------------------
# inequality checkers


@dataclass(frozen=True)
class InterpolationReport:
    """Term-by-term evaluation of the two-scale interpolation bound.

    The inequality states lhs <= C (term_functional + term_mix) for a
    dimensional constant C; `constant` is the smallest C that works for
    this field, and `functional_raw` is the unscaled increment functional.
    """

    lhs: float
    term_functional: float
    term_mix: float
    constant: float
    functional_raw: float
    gamma: float
    lam: float
    delta: float


def check_interpolation(f: GridField, gamma: float, lam: float, delta: float,
                        q: HQuadrature | None = None) -> InterpolationReport:
    """Evaluate both sides of the interpolation bound

        ||f||_2^2 <= C [ F_(gamma,delta)(f) / |log(delta lam)|^(1-gamma)
                         + |log lam| ||f||_2^2 / log(2 + ||f||_2/||f||_(-1)) ]

    where F is the increment functional over |h| <= 1/(5 delta) with weight
    1/(|h|^d |log(delta |h|)|^gamma).  Requires mean-zero f.
    """
    if not gamma < 1:
        raise ValueError("gamma must be < 1")
    if not 0 < lam < 0.01:
        raise ValueError("lambda must lie in (0, 1/100)")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    l2 = lp_norm(f, 2)
    if l2 == 0.0:
        return InterpolationReport(0.0, 0.0, 0.0, 1.0, 0.0, gamma, lam, delta)
    if q is None:
        r_max = min(1.0 / (5.0 * delta), f.box / 3.0)
        q = HQuadrature.for_grid(f, r_max=r_max)
    raw = log_weighted_functional(f, gamma, q, delta=delta)
    t1 = raw / np.abs(np.log(delta * lam)) ** (1.0 - gamma)
    neg = sobolev_neg_norm(f, 1.0)
    t2 = np.abs(np.log(lam)) * l2**2 / np.log(2.0 + l2 / neg)
    constant = l2**2 / (t1 + t2)
    return InterpolationReport(l2**2, float(t1), float(t2), float(constant),
                               raw, gamma, lam, delta)


@dataclass(frozen=True)
class MixLogBoundReport:
    """Endpoint of the interpolation bound: the mix-norm log factor against
    the gamma-weighted functional.  constant = lhs / functional."""

    lhs: float
    functional: float
    constant: float
    gamma: float


def check_mixing_log_bound(f: GridField, gamma: float,
                           q: HQuadrature | None = None) -> MixLogBoundReport:
    """Evaluate lhs = log(2 + ||f||_2/||f||_(-1))^(1-gamma) ||f||_2^2 against
    the weight-gamma increment functional over |h| <= 1/5 (mean-zero f)."""
    if not gamma < 1:
        raise ValueError("gamma must be < 1")
    l2 = lp_norm(f, 2)
    if l2 == 0.0:
        return MixLogBoundReport(0.0, 0.0, 0.0, gamma)
    if q is None:
        q = HQuadrature.for_grid(f, r_max=0.2)
    value = log_weighted_functional(f, gamma, q)
    neg = sobolev_neg_norm(f, 1.0)
    lhs = np.log(2.0 + l2 / neg) ** (1.0 - gamma) * l2**2
    return MixLogBoundReport(float(lhs), value, float(lhs / value), gamma)


@dataclass(frozen=True)
class KeyLemmaReport:
    lhs: float
    rhs: float
    ratio: float
    pairs_checked: int
    max_violation: float


def check_key_lemma(f: GridField, g: GridField, p: float,
                    q: HQuadrature | None = None, n_pairs: int = 10_000,
                    seed: int = 0) -> KeyLemmaReport:
    """Check the capped order-p functional of f against ||g||_p^p + ||f||_1.

    The pair (f, g) must satisfy the pointwise bound
    |f(x) - f(y)| <= |x - y| exp(g(x) + g(y)); this precondition is
    spot-checked on n_pairs random node pairs (min-image distances) and a
    violation beyond 1e-9 raises PairCheckError.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if f.n != g.n or f.box != g.box:
        raise ValueError("f and g must share a grid")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, f.n, size=(2, n_pairs, 2))
    x, y = idx[0], idx[1]
    pos = coords(f.n, f.box)
    dist = np.hypot(*min_image(pos[x] - pos[y], f.box).T)
    df = np.abs(f.values[x[:, 0], x[:, 1]] - f.values[y[:, 0], y[:, 1]])
    with np.errstate(over="ignore"):  # exp overflow -> inf, a vacuous bound
        bound = dist * np.exp(
            g.values[x[:, 0], x[:, 1]] + g.values[y[:, 0], y[:, 1]])
    violation = float(np.max(df - bound, initial=0.0))
    if violation > 1e-9:
        raise PairCheckError(
            f"pointwise Lipschitz bound violated by {violation:.3e} "
            f"on {int(np.sum(df > bound + 1e-9))} of {n_pairs} sampled pairs")
    if q is None:
        q = HQuadrature.for_grid(f)
    lhs = capped_log_weighted(f, 1.0 - p, q)
    rhs = lp_norm(g, p) ** p + lp_norm(f, 1)
    return KeyLemmaReport(lhs, rhs, lhs / rhs, n_pairs, violation)


# ---------------------------------------------------------------------------
# disjoint-support lower bound


@dataclass(frozen=True)
class SupportPart:
    """One summand: a field supported in the open box [lo, hi] with the
    stated margin between its support and the box complement."""

    field: GridField
    lo: tuple[float, float]
    hi: tuple[float, float]
    margin: float


@dataclass(frozen=True)
class SubadditivityReport:
    lhs: float
    rhs: float
    slack: float
    holds: bool
    part_functionals: tuple[float, ...]
    part_corrections: tuple[float, ...]


def _verify_part_geometry(parts: list[SupportPart], box: float) -> None:
    for a in parts:
        if not 0 < a.margin < 0.4:
            raise ValueError("margins must lie in (0, 0.4)")
        for lo, hi in zip(a.lo, a.hi):
            if not 0 <= lo < hi <= box:
                raise ValueError("support boxes must be ordered and inside the domain")
    for i, a in enumerate(parts):
        for b in parts[i + 1:]:
            overlap = all(a.lo[ax] < b.hi[ax] - 1e-12 and b.lo[ax] < a.hi[ax] - 1e-12
                          for ax in range(2))
            if overlap:
                raise ValueError("support boxes overlap")
    # every node carrying mass must keep the stated distance from the complement
    for part in parts:
        vals = np.abs(part.field.values)
        if vals.max() == 0.0:
            continue
        ii, jj = np.nonzero(vals > 1e-13 * vals.max())
        pos = coords(part.field.n, part.field.box)
        for ax, sel in ((0, ii), (1, jj)):
            gap = np.minimum(pos[sel] - part.lo[ax], part.hi[ax] - pos[sel])
            if gap.min() < part.margin - 1e-9:
                raise ValueError(
                    f"support margin {gap.min():.3e} below stated {part.margin:.3e}")


def subadditivity_gap(parts: list[SupportPart], gamma: float,
                      q: HQuadrature | None = None,
                      tol: float = 1e-8, method: str = "polar",
                      r_max: float = 1.0 / 3.0) -> SubadditivityReport:
    """Lower bound for the weight-gamma functional of a sum of fields with
    pairwise disjoint supports:

        F_gamma(sum f_n) >= sum_n [ F_gamma(f_n)
                                    - 4 ||f_n||_2^2 |log margin_n|^(1-gamma) / (1-gamma) ].

    Geometry (disjointness and margins) is verified from the data.  Both
    sides are evaluated with the same offset discretization: the polar
    quadrature q ("polar", good for band-limited parts) or the all-offsets
    grid sum out to r_max ("grid", good for broadband composites).
    """
    if not gamma < 1:
        raise ValueError("gamma must be < 1")
    if not parts:
        raise ValueError("need at least one part")
    if method not in ("polar", "grid"):
        raise ValueError("method must be 'polar' or 'grid'")
    first = parts[0].field
    if any(p.field.n != first.n or p.field.box != first.box for p in parts):
        raise ValueError("all parts must share one grid")
    _verify_part_geometry(parts, first.box)
    total = GridField(np.sum([p.field.values for p in parts], axis=0), first.box)
    if method == "polar":
        if q is None:
            q = HQuadrature.for_grid(first)
        evaluate = lambda g: log_weighted_functional(g, gamma, q)
    else:
        evaluate = lambda g: log_weighted_functional_grid(g, gamma, r_max=r_max)
    lhs = evaluate(total)
    funs, corrs = [], []
    for part in parts:
        funs.append(evaluate(part.field))
        l2sq = lp_norm(part.field, 2) ** 2
        corrs.append(4.0 * l2sq * np.abs(np.log(part.margin)) ** (1.0 - gamma)
                     / (1.0 - gamma))
    rhs = float(np.sum(funs) - np.sum(corrs))
    slack = lhs - rhs
    return SubadditivityReport(lhs, rhs, slack, bool(slack >= -tol),
                               tuple(funs), tuple(corrs))

"""Scaling transformations, data collapse and exponent extraction.

Coordinates transform under a scale factor b as

    T -> b^z T,  L -> L / b,  h -> b^(1/nu) h,  r -> r / b,  t -> b^(-z) t,

and, for global (or general) operators, the OTOC picks up b^(Delta_F).
Here h = lambda - lambda_c is kept signed.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import math
from collections.abc import Callable, Sequence

import numpy as np
import scipy.interpolate
import scipy.stats

from .models import ModelSpec, OperatorSpec
from .otoc import OTOCSeries, normalized_series, thermal_otoc_series

DEFAULT_EPSILON = 0.05
EPSILON_SWEEP = (0.02, 0.05, 0.1)


@dataclasses.dataclass(frozen=True)
class ExponentSet:
    nu: float
    z: float
    delta_F: float = 0.0
    lambda_c: float | None = None

    def __post_init__(self):
        if self.nu <= 0 or self.z <= 0:
            raise ValueError("nu and z must be positive")
        if self.delta_F < 0:
            raise ValueError("delta_F must be non-negative")

    def replace(self, **changes) -> ExponentSet:
        return dataclasses.replace(self, **changes)


LMG_EXPONENTS = ExponentSet(nu=1.5, z=1 / 3, delta_F=4 / 3, lambda_c=1.0)
ISING_EXPONENTS = ExponentSet(nu=1.0, z=1.0, delta_F=0.0)


class RescaleMode(str, enum.Enum):
    LOCAL_UNITARY = "LocalUnitary"
    GLOBAL = "Global"
    GENERAL = "General"


class AnalysisError(ValueError):
    """Data do not support the requested analysis."""


# ---------------------------------------------------------------------------
# rescaling


def rescale_series(s: OTOCSeries, e: ExponentSet, b: float, mode: RescaleMode | str) -> OTOCSeries:
    """Map a series to the coordinates of its scale-``b`` partner.

    The result predicts the OTOC at the partner configuration recorded in
    ``meta["partner"]``. Applying ``1/b`` to a partner series maps it back
    onto the original frame.
    """
    mode = RescaleMode(mode)
    if b <= 0:
        raise ValueError(f"scale factor must be positive, got {b}")
    meta = s.meta
    if mode is RescaleMode.GLOBAL and meta.get("r") is not None:
        raise ValueError("Global mode needs global operators; this series has a separation r")
    if mode is RescaleMode.LOCAL_UNITARY:
        for key in ("W", "V"):
            op = meta.get(key)
            if op is not None and not op.is_unitary:
                raise ValueError(f"LocalUnitary mode needs unitary operators, {key} = {op}")

    prefactor = 1.0 if mode is RescaleMode.LOCAL_UNITARY else b**e.delta_F
    new = dict(meta)
    new["T"] = None if meta.get("T") is None else b**e.z * meta["T"]
    new["L"] = meta["L"] / b
    new["h"] = None if meta.get("h") is None else b ** (1 / e.nu) * meta["h"]
    new["r"] = None if meta.get("r") is None else meta["r"] / b
    new["scale"] = meta.get("scale", 1.0) * b
    lam_c = meta.get("lambda_c", e.lambda_c)
    new["partner"] = {
        "L": new["L"],
        "T": new["T"],
        "h": new["h"],
        "lam": None if lam_c is None or new["h"] is None else lam_c + new["h"],
        "r": new["r"],
    }
    return OTOCSeries(b ** (-e.z) * s.times, prefactor * s.values, new)


# ---------------------------------------------------------------------------
# collapse cost


def _monotone_interpolant(x, y):
    order = np.argsort(x)
    x, y = np.asarray(x, float)[order], np.asarray(y, float)[order]
    keep = np.concatenate([[True], np.diff(x) > 0])
    return scipy.interpolate.PchipInterpolator(x[keep], y[keep], extrapolate=False)


def collapse_cost(curves: Sequence[tuple[np.ndarray, np.ndarray]], n_grid: int = 200):
    """Grid-mean variance across curves divided by the squared range of
    their pointwise mean, on the intersection of the curves' supports.

    Returns ``(cost, grid, master)``.
    """
    if not curves:
        raise AnalysisError("no curves to collapse")
    lo = max(np.min(x) for x, _ in curves)
    hi = min(np.max(x) for x, _ in curves)
    if not hi > lo:
        raise AnalysisError("rescaled curves have no common support")
    grid = np.linspace(lo, hi, n_grid)
    ys = np.array([_monotone_interpolant(x, y)(grid) for x, y in curves])
    master = ys.mean(axis=0)
    spread = ys.var(axis=0).mean()
    span = master.max() - master.min()
    if span == 0:
        return (0.0 if spread == 0 else math.inf), grid, master
    return float(spread / span**2), grid, master


@dataclasses.dataclass
class CollapseReport:
    curves: list  # (label, x, y)
    cost: float
    exponents: ExponentSet
    master: tuple  # (grid, values)
    notes: list = dataclasses.field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "exponents": dataclasses.asdict(self.exponents),
            "curves": [{"label": lab, "x": list(map(float, x)), "y": list(map(float, y))}
                       for lab, x, y in self.curves],
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# scaling invariance of the OTOC


@dataclasses.dataclass(frozen=True)
class InvarianceBase:
    """Base configuration of an invariance check.

    ``lam`` is the field of the base point; ``r`` is the operator
    separation for local operators (None for global ones) and ``site`` the
    position of W (default: ceil(L/4)).
    """

    spec: ModelSpec
    T: float
    times: np.ndarray
    r: int | None = None
    site: int | None = None
    axis: str = "x"


def operator_pair(spec: ModelSpec, r: int | None, site: int | None = None, axis: str = "x"):
    if r is None:
        op = OperatorSpec.collective(axis)
        return op, op
    j = site if site is not None else -(-spec.L // 4)
    return OperatorSpec.pauli(axis, j), OperatorSpec.pauli(axis, j + r)


def _integral(x, what):
    k = round(x)
    if abs(x - k) > 1e-9:
        raise AnalysisError(f"{what} = {x:g} is not an integer")
    return int(k)


def partner_base(base: InvarianceBase, e: ExponentSet, b: float) -> InvarianceBase:
    """Physical configuration whose OTOC matches ``base`` after rescaling by b."""
    if e.lambda_c is None:
        raise AnalysisError("the invariance check needs lambda_c to define h")
    L = _integral(base.spec.L / b, "L/b")
    r = None if base.r is None else _integral(base.r / b, "r/b")
    site = None if base.site is None else max(1, _integral(base.site / b, "site/b"))
    h = base.spec.lam - e.lambda_c
    lam = e.lambda_c + b ** (1 / e.nu) * h
    return InvarianceBase(base.spec.replace(L=L, lam=lam), b**e.z * base.T,
                          b ** (-e.z) * np.asarray(base.times), r, site, base.axis)


SeriesFn = Callable[..., OTOCSeries]


def scaling_invariance_check(base: InvarianceBase, b_list: Sequence[float], e: ExponentSet,
                             mode: RescaleMode | str, series_fn: SeriesFn | None = None,
                             n_grid: int = 200) -> CollapseReport:
    """Compute the OTOC at every partner configuration, map each back onto
    the base frame and measure how well the curves collapse (on Re F)."""
    mode = RescaleMode(mode)
    series_fn = series_fn or thermal_otoc_series
    curves = []
    notes = []
    for b in b_list:
        cfg = partner_base(base, e, b)
        W, V = operator_pair(cfg.spec, cfg.r, cfg.site, cfg.axis)
        s = series_fn(cfg.spec, W, V, cfg.T, cfg.times, lambda_c=e.lambda_c)
        notes.extend(n for n in s.meta.get("notes", []) if n not in notes)
        back = rescale_series(s, e, 1 / b, mode)
        curves.append((f"b={b:g}", back.times, back.values.real))
    cost, grid, master = collapse_cost([(x, y) for _, x, y in curves], n_grid)
    return CollapseReport(curves, cost, e, (grid, master), notes)


# ---------------------------------------------------------------------------
# first minimum and exponents


@dataclasses.dataclass(frozen=True)
class MinimumPoint:
    t_min: float
    F_min: float
    index: int
    grid_t: float
    grid_F: float


def find_first_minimum(s: OTOCSeries) -> MinimumPoint:
    """First interior local minimum of Re F, refined by a parabola through
    the bracketing grid points. Plateaus resolve to their earliest index
    and are not refined."""
    t, y = s.times, s.values.real
    if len(t) < 5:
        raise AnalysisError("need at least 5 points to locate a minimum")
    n = len(y)
    i = 1
    while i < n - 1:
        if y[i] < y[i - 1]:
            k = i
            while k < n - 1 and y[k + 1] == y[i]:
                k += 1
            if k < n - 1 and y[k + 1] > y[i]:
                break
            i = k + 1
        else:
            i += 1
    else:
        raise AnalysisError("no interior local minimum on the grid (grid too short?)")
    tt, yy = t[i - 1 : i + 2], y[i - 1 : i + 2]
    a, bcoef, c = np.polyfit(tt - t[i], yy, 2)
    if a > 0 and y[i + 1] != y[i]:
        dt = -bcoef / (2 * a)
        dt = min(max(dt, tt[0] - t[i]), tt[2] - t[i])
        t_min, f_min = t[i] + dt, a * dt**2 + bcoef * dt + c
    else:
        t_min, f_min = t[i], y[i]
    return MinimumPoint(float(t_min), float(f_min), int(i), float(t[i]), float(y[i]))


@dataclasses.dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    stderr: float
    prefactor: float
    residual: float


def fit_dynamical_exponent(points) -> PowerLawFit:
    """Least-squares slope of ln t_min against ln L."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise AnalysisError("need at least 3 (L, t_min) points")
    if np.any(pts <= 0):
        raise AnalysisError("L and t_min must be positive")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    fit = scipy.stats.linregress(x, y)
    resid = y - (fit.intercept + fit.slope * x)
    return PowerLawFit(float(fit.slope), float(fit.stderr), float(np.exp(fit.intercept)),
                       float(np.sqrt(np.mean(resid**2))))


def _fmin_curves(points, nu):
    pts = np.asarray(list(points), dtype=float)
    curves = []
    for L in np.unique(pts[:, 0]):
        sel = pts[pts[:, 0] == L]
        curves.append((L, L ** (1 / nu) * sel[:, 1], sel[:, 2]))
    return curves


def fmin_collapse(points, nu: float, n_grid: int = 200) -> float:
    """Collapse cost of F_min(L, h) plotted against L^(1/nu) h."""
    curves = _fmin_curves(points, nu)
    if len(curves) < 2:
        return 0.0
    return collapse_cost([(x, y) for _, x, y in curves], n_grid)[0]


def golden_section(f, a, b, tol=1e-4, max_iter=200):
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


@dataclasses.dataclass(frozen=True)
class NuFit:
    nu: float
    cost: float
    scan: tuple  # (nu values, costs)


def fit_nu(points, bracket=(0.2, 5.0), n_scan=49, tol=1e-4) -> NuFit:
    """Minimize the F_min collapse cost over nu.

    A log-spaced scan picks the best cell; golden-section search refines
    inside the neighbouring cells.
    """
    pts = list(points)
    if len({p[0] for p in pts}) < 2:
        raise AnalysisError("nu is unidentifiable from a single system size")
    lo, hi = bracket
    grid = np.geomspace(lo, hi, n_scan)
    costs = np.array([fmin_collapse(pts, nu) for nu in grid])
    k = int(np.argmin(costs))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_scan - 1)]
    nu = golden_section(lambda v: fmin_collapse(pts, v), a, b, tol)
    return NuFit(float(nu), float(fmin_collapse(pts, nu)), (grid, costs))


# ---------------------------------------------------------------------------
# scrambling time and light cone


def extract_scrambling_time(s: OTOCSeries, epsilon: float = DEFAULT_EPSILON) -> float | None:
    """First time Re F/F(0) drops below 1 - epsilon, linearly interpolated.

    Returns None when the series never crosses on its grid.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    y = s.values.real / s.values[0].real
    level = 1 - epsilon
    below = np.flatnonzero(y < level)
    if below.size == 0:
        return None
    i = below[0]
    if i == 0:
        return float(s.times[0])
    t0, t1, y0, y1 = s.times[i - 1], s.times[i], y[i - 1], y[i]
    return float(t0 + (y0 - level) / (y0 - y1) * (t1 - t0))


def scrambling_sensitivity(s: OTOCSeries, epsilons=EPSILON_SWEEP) -> dict:
    return {eps: extract_scrambling_time(s, eps) for eps in epsilons}


@dataclasses.dataclass
class LightConeFit:
    points: list  # (r, t_s)
    v_B: float
    intercept: float
    residual: float
    epsilon: float | None = None

    @property
    def relative_residual(self) -> float:
        r = [p[0] for p in self.points]
        return self.residual / (max(r) - min(r))

    def to_dict(self) -> dict:
        return {"points": [list(map(float, p)) for p in self.points], "v_B": self.v_B,
                "intercept": self.intercept, "residual": self.residual,
                "relative_residual": self.relative_residual, "epsilon": self.epsilon}


def fit_butterfly_velocity(cone, epsilon: float | None = None) -> LightConeFit:
    """Least-squares line r = v_B t_s + c through the light-cone points."""
    pts = sorted((float(r), float(t)) for r, t in cone)
    if len(pts) < 3:
        raise AnalysisError("need at least 3 distances for a light-cone fit")
    r, t = np.array(pts).T
    if np.ptp(t) == 0:
        raise AnalysisError("all scrambling times are equal")
    slope, intercept = np.polyfit(t, r, 1)
    resid = r - (slope * t + intercept)
    return LightConeFit(pts, float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), epsilon)


def light_cone(series_by_r: dict, epsilon: float = DEFAULT_EPSILON) -> LightConeFit:
    cone = []
    for r, s in sorted(series_by_r.items()):
        ts = extract_scrambling_time(s, epsilon)
        if ts is None:
            raise AnalysisError(f"no scrambling on grid at r = {r}")
        cone.append((r, ts))
    return fit_butterfly_velocity(cone, epsilon)


# ---------------------------------------------------------------------------
# butterfly-velocity scaling forms


def predicted_slopes(e: ExponentSet) -> dict:
    """Log-log slopes of v_B against L (h=T=0), T (h=0) and h (T=0)."""
    return {"L": 1 - e.z, "T": 1 - 1 / e.z, "h": e.nu * (e.z - 1)}


@dataclasses.dataclass
class FormCheck:
    form: str
    variable: str
    expected_slope: float
    slope: float | None
    passed: bool
    detail: dict


def _loglog_slope(x, y):
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if len(x) < 2 or np.ptp(x) == 0:
        return None
    return float(np.polyfit(x, y, 1)[0])


def butterfly_form_checks(data, e: ExponentSet, slope_tol: float = 0.3, pair_tol: float = 0.2,
                          match_tol: float = 1e-6) -> list[FormCheck]:
    """Check measured v_B(T, h, L) against the quantum-critical scaling forms.

    ``data`` holds records ``(T, h, L, v_B)``; ``L = inf`` marks the
    thermodynamic limit. Only forms with at least two usable records are
    tested.
    """
    if e.z < 1:
        raise ValueError("butterfly-velocity scaling forms require z >= 1")
    recs = [tuple(map(float, d)) for d in data]
    slopes = predicted_slopes(e)
    checks = []

    def add(form, var, rows, xcol):
        if len(rows) < 2:
            return
        slope = _loglog_slope([row[xcol] for row in rows], [row[3] for row in rows])
        if slope is None:
            return
        exp = slopes[var]
        checks.append(FormCheck(form, var, exp, slope, abs(slope - exp) <= slope_tol,
                                {"points": rows}))

    critical = [d for d in recs if d[1] == 0]
    # v_B(0, 0, L) ~ L^-(z-1)
    add("critical point, finite size", "L",
        [d for d in critical if d[0] == 0 and math.isfinite(d[2])], 2)
    # v_B(T, 0) ~ T^(1 - 1/z), at each fixed L
    for L in sorted({d[2] for d in critical if d[0] > 0}):
        add(f"critical line, L={L:g}", "T", [d for d in critical if d[0] > 0 and d[2] == L], 0)
    # v_B(0, h) ~ h^(nu (z - 1))
    for L in sorted({d[2] for d in recs if d[0] == 0 and d[1] != 0}):
        rows = [(d[0], abs(d[1]), d[2], d[3]) for d in recs if d[0] == 0 and d[1] != 0 and d[2] == L]
        add(f"zero temperature, L={L:g}", "h", rows, 1)

    # matched pairs: equal (h T^(-1/(nu z)), T^(-1/z) / L) => equal v_B T^(1/z - 1)
    thermal = [d for d in recs if d[0] > 0]
    for a, b in itertools.combinations(thermal, 2):
        ka = (a[1] * a[0] ** (-1 / (e.nu * e.z)), a[0] ** (-1 / e.z) / a[2])
        kb = (b[1] * b[0] ** (-1 / (e.nu * e.z)), b[0] ** (-1 / e.z) / b[2])
        if all(math.isclose(x, y, rel_tol=match_tol, abs_tol=match_tol) for x, y in zip(ka, kb)):
            ga = a[3] * a[0] ** (1 / e.z - 1)
            gb = b[3] * b[0] ** (1 / e.z - 1)
            ratio = max(ga, gb) / min(ga, gb)
            checks.append(FormCheck("matched pair", "G", 0.0, None, ratio - 1 <= pair_tol,
                                    {"pair": [a, b], "ratio": ratio}))
    return checks


# ---------------------------------------------------------------------------
# critical point


@dataclasses.dataclass
class CriticalPointEstimate:
    lambda_c: float
    uncertainty: float
    crossings: list  # (L1, L2, lambda)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _pair_crossings(lam, ya, yb, La, Lb):
    """Sign changes of yb - ya, interpolated linearly; only crossings where
    both curves move the same way and the larger size is steeper count."""
    d = yb - ya
    out = []
    for i in range(len(lam) - 1):
        if d[i] == 0:
            cand = lam[i]
        elif d[i] * d[i + 1] < 0:
            cand = lam[i] + d[i] / (d[i] - d[i + 1]) * (lam[i + 1] - lam[i])
        else:
            continue
        j = min(i, len(lam) - 2)
        sa = (ya[j + 1] - ya[j]) / (lam[j + 1] - lam[j])
        sb = (yb[j + 1] - yb[j]) / (lam[j + 1] - lam[j])
        big, small = (sb, sa) if Lb > La else (sa, sb)
        if sa * sb > 0 and abs(big) > abs(small):
            out.append(float(cand))
    return out


def crossing_estimate(curves: dict) -> CriticalPointEstimate:
    """Estimate lambda_c from curves ``{L: (lam, F_min)}`` on a shared grid."""
    if len(curves) < 2:
        raise AnalysisError("need at least 2 sizes to locate a crossing")
    crossings = []
    for La, Lb in itertools.combinations(sorted(curves), 2):
        lam_a, ya = map(np.asarray, curves[La])
        lam_b, yb = map(np.asarray, curves[Lb])
        if lam_a.shape != lam_b.shape or np.any(lam_a != lam_b):
            raise AnalysisError("curves must share one lambda grid")
        found = _pair_crossings(lam_a, ya, yb, La, Lb)
        if found:
            centre = (lam_a[0] + lam_a[-1]) / 2
            crossings.append((La, Lb, min(found, key=lambda x: abs(x - centre))))
    if not crossings:
        raise AnalysisError("no crossing of F_min curves on the lambda grid")
    values = np.array([c[2] for c in crossings])
    spread = float(values.max() - values.min()) if len(values) > 1 else 0.0
    return CriticalPointEstimate(float(values.mean()), spread, crossings)


def fmin_point(spec: ModelSpec, T: float, times, series_fn: SeriesFn | None = None,
               r: int | None = None, axis: str = "x") -> MinimumPoint:
    series_fn = series_fn or thermal_otoc_series
    W, V = operator_pair(spec, r, axis=axis)
    return find_first_minimum(normalized_series(series_fn(spec, W, V, T, times)))


def locate_critical_point(template: ModelSpec, L_list, lam_grid, times, T: float = 0.0,
                          series_fn: SeriesFn | None = None, r: int | None = None) -> CriticalPointEstimate:
    """Crossing point of F_min(L, lambda) curves for different sizes."""
    lam_grid = np.asarray(lam_grid, dtype=float)
    if len(L_list) < 2:
        raise AnalysisError("need at least 2 sizes")
    curves = {}
    for L in L_list:
        fmins = [fmin_point(template.replace(L=L, lam=lam), T, times, series_fn, r).F_min
                 for lam in lam_grid]
        curves[L] = (lam_grid, np.array(fmins))
    return crossing_estimate(curves)

"""Behavior of the composed symbol toward x -> +/-infinity.

Three services live here:

- :func:`limit_ratio` estimates the coefficient ratios
  ``r_j(lambda) = lim p_j(x, lambda) / p_m(x, lambda)`` along a geometric
  trajectory ``x = sign * x0 * rho**t`` and attaches a convergence
  certificate to every ratio. The tail polynomial
  ``xi**m + sum_j r_j(lambda) xi**j`` built from these limits is what the
  singular-part sweep solves for real ``xi``.
- :func:`limit_points_at_infinity` estimates the set of finite limit
  points of the lower-right coefficient ``d`` at infinity by clustering
  its values over the largest dyadic windows. The estimate is heuristic
  by design and can be overridden by declaring the set in the config.
- :func:`check_assumptions` runs the sampled hypothesis diagnostics
  (B1/B2/B3: boundedness, invertible leading coefficient, bounded
  resolvent-weighted couplings; C: sector condition; D: existence of the
  coefficient limits) and reports one record per (assumption, probe).

Everything is pure and therefore safe to call concurrently with a shared
symbol; no caches are mutated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import SolverConfig
from .errors import NotConvergent, PoleError
from .expr import LAM, Div, Expr, Sub, differentiate, evaluate_array, simplify
from .model import DiagnosticRecord, Diagnostics, OperatorMatrix, delta
from .schur import SchurSymbol

INVERSE_FLOOR = 1e-8
"""Smallest sampled |p_m| accepted as evidence that 1/p_m stays bounded."""


# ---------------------------------------------------------------------------
# Convergence certificates for coefficient ratios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    """Evidence attached to one estimated limit.

    ``status`` is ``"converged"`` or ``"not-convergent"``; a converged
    certificate promises ``last_increment <= limit_tol * (1 + |value|)``
    and that ``sample_count`` trajectory samples sufficed.
    """

    status: str
    sample_count: int
    last_increment: float
    value: complex

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _trajectory(side: str, cfg: SolverConfig) -> np.ndarray:
    if side not in ("+", "-"):
        raise ValueError(f"side must be '+' or '-', got {side!r}")
    sign = 1.0 if side == "+" else -1.0
    return sign * cfg.x0 * cfg.rho ** np.arange(cfg.T + 1, dtype=float)


def _ratio_samples(symbol: SchurSymbol, lams: np.ndarray, side: str,
                   cfg: SolverConfig) -> np.ndarray:
    """Sample r_j = p_j/p_m on the trajectory; shape (m, T+1, K)."""
    xs = _trajectory(side, cfg)
    shape = (xs.size, lams.size)
    x_grid = xs[:, None]
    lam_grid = lams[None, :]
    denom = np.broadcast_to(
        np.asarray(evaluate_array(symbol.p[symbol.m], x=x_grid, lam=lam_grid),
                   dtype=np.complex128), shape)
    out = np.empty((symbol.m, *shape), dtype=np.complex128)
    with np.errstate(all="ignore"):
        for j in range(symbol.m):
            numer = np.broadcast_to(
                np.asarray(evaluate_array(symbol.p[j], x=x_grid, lam=lam_grid),
                           dtype=np.complex128), shape)
            out[j] = numer / denom
    return out


def _certify_block(samples: np.ndarray, tol: float):
    """Vectorized certificate scan.

    ``samples`` has shape (m, S, K). Returns (values, t_index, last_inc,
    converged, saw_pole) with shapes (m, K); ``t_index`` is the increment
    index at which the three-increment window closed (the newest sample
    used is ``t_index + 1``).
    """
    m, S, K = samples.shape
    finite = np.isfinite(samples)
    prefix_finite = np.logical_and.accumulate(finite, axis=1)
    with np.errstate(all="ignore"):
        inc = np.abs(np.diff(samples, axis=1))  # (m, S-1, K)
        scale = tol * (1.0 + np.abs(samples[:, 3:, :]))  # newest sample r[t+1]
        window = (
            (inc[:, 2:, :] <= scale)
            & (inc[:, 1:-1, :] <= scale)
            & (inc[:, :-2, :] <= scale)
            & prefix_finite[:, 3:, :]
        )  # index i corresponds to t = i + 2
    first = np.argmax(window, axis=1)
    converged = window.any(axis=1)
    t_index = np.where(converged, first + 2, S - 2)
    sample_index = t_index + 1
    take = np.take_along_axis(samples, sample_index[:, None, :], axis=1)
    values = take[:, 0, :]
    last_inc = np.take_along_axis(inc, t_index[:, None, :], axis=1)[:, 0, :]
    saw_pole = ~converged & ~prefix_finite[:, -1, :]
    return values, t_index, last_inc, converged, saw_pole


def limit_ratio(symbol: SchurSymbol, lam: complex, side: str,
                cfg: SolverConfig | None = None, *,
                delta_samples: np.ndarray | None = None,
                exceptional: "ExceptionalSet | None" = None,
                ) -> tuple[list[complex], list[Certificate]]:
    """Estimate r_j(lambda) = lim p_j/p_m toward one end of the line.

    Returns ``m`` limit values (j = 0..m-1) and their certificates.
    Raises :class:`NotConvergent` when any ratio refuses to settle within
    the trajectory (the witness carries the oscillating tail) and
    :class:`PoleError` when a needed trajectory sample lands on a pole of
    the symbol (lambda = d(x) or an overflowing coefficient).

    ``delta_samples``/``exceptional`` enable a soft precondition check:
    when ``lam`` sits within ``probe_margin`` of the sampled decoupling
    curve or of the exceptional-set estimate, a warning is emitted (the
    limits may genuinely fail to exist there).
    """
    cfg = cfg or SolverConfig()
    _warn_if_probe_is_delicate(lam, delta_samples, exceptional, cfg)
    lams = np.asarray([lam], dtype=np.complex128)
    samples = _ratio_samples(symbol, lams, side, cfg)
    values, t_idx, last_inc, converged, saw_pole = _certify_block(
        samples, cfg.limit_tol)
    xs = _trajectory(side, cfg)
    if saw_pole.any():
        j = int(np.argmax(saw_pole[:, 0]))
        bad = np.where(~np.isfinite(samples[j, :, 0]))[0][0]
        raise PoleError(
            f"trajectory sample x = {xs[bad]!r} hits a pole of the symbol "
            f"(ratio p_{j}/p_{symbol.m} is not finite there)")
    if not converged.all():
        j = int(np.argmax(~converged[:, 0]))
        tail = [
            (float(xs[t + 1]), float(abs(samples[j, t + 1, 0] - samples[j, t, 0])))
            for t in range(max(0, cfg.T - 6), cfg.T)
        ]
        raise NotConvergent(
            f"ratio p_{j}/p_{symbol.m} did not settle after {cfg.T + 1} "
            f"samples toward {side}infinity (last increment "
            f"{last_inc[j, 0]:.3e})", witness=tail)
    certificates = [
        Certificate(
            status="converged",
            sample_count=int(t_idx[j, 0]) + 2,
            last_increment=float(last_inc[j, 0]),
            value=complex(values[j, 0]),
        )
        for j in range(symbol.m)
    ]
    return [complex(v) for v in values[:, 0]], certificates


def limit_ratio_batch(symbol: SchurSymbol, lams, side: str,
                      cfg: SolverConfig | None = None):
    """Batched, non-raising variant of :func:`limit_ratio`.

    Returns ``(values, status)`` where ``values`` has shape (K, m) (NaN
    rows where estimation failed) and ``status`` is a length-K array of
    strings: ``"ok"``, ``"pole"`` or ``"not-convergent"``.
    """
    cfg = cfg or SolverConfig()
    lam_arr = np.asarray(lams, dtype=np.complex128).ravel()
    samples = _ratio_samples(symbol, lam_arr, side, cfg)
    values, _t, _inc, converged, saw_pole = _certify_block(
        samples, cfg.limit_tol)
    ok = converged.all(axis=0)
    pole = saw_pole.any(axis=0) & ~ok
    status = np.where(ok, "ok", np.where(pole, "pole", "not-convergent"))
    out = values.T.copy()
    out[~ok] = np.nan
    return out, status


@dataclass(frozen=True)
class LimitProfile:
    """Limit coefficients toward one end of the line, as a function of lambda.

    The profile does not precompute anything: each query estimates the m
    ratios afresh and is only defined where every certificate converges
    (otherwise :class:`NotConvergent`/:class:`PoleError` propagate).
    """

    side: str
    symbol: SchurSymbol
    cfg: SolverConfig = field(default_factory=SolverConfig)

    def coefficients(self, lam: complex) -> tuple[list[complex], list[Certificate]]:
        return limit_ratio(self.symbol, lam, self.side, self.cfg)

    def tail_coefficients(self, lam: complex) -> np.ndarray:
        """Ascending coefficients of xi**m + sum_j r_j(lambda) xi**j."""
        values, _certs = self.coefficients(lam)
        return np.asarray([*values, 1.0 + 0j], dtype=np.complex128)

    def tail_value(self, lam: complex, xi: float) -> complex:
        coeffs = self.tail_coefficients(lam)
        return complex(np.polyval(coeffs[::-1], xi))


def _warn_if_probe_is_delicate(lam, delta_samples, exceptional, cfg) -> None:
    if delta_samples is not None and len(delta_samples):
        closest = float(np.min(np.abs(np.asarray(delta_samples) - lam)))
        if closest <= cfg.probe_margin:
            warnings.warn(
                f"probe {lam!r} is within {closest:.2e} of the sampled "
                "decoupling curve; coefficient limits may not exist there",
                stacklevel=3)
    if exceptional is not None and exceptional.points:
        closest = min(abs(lam - p) for p in exceptional.points)
        if closest <= cfg.probe_margin:
            warnings.warn(
                f"probe {lam!r} is within {closest:.2e} of the estimated "
                "exceptional set; coefficient limits may not exist there",
                stacklevel=3)


# ---------------------------------------------------------------------------
# Limit points of d at infinity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExceptionalSet:
    """Cluster representatives of the finite limit values of d at infinity.

    Invariants: every clustered value lies within ``cluster_tol`` of its
    representative (``radii[i] <= cluster_tol``) and representatives are
    pairwise separated by more than ``2 * cluster_tol``. ``declared`` marks
    a user-supplied override, which skips estimation entirely.
    """

    points: tuple[complex, ...]
    radii: tuple[float, ...]
    window_exponents: tuple[int, ...]
    sides: str
    declared: bool = False

    def contains(self, lam: complex, tol: float) -> bool:
        return any(abs(lam - p) <= tol for p in self.points)

    def to_json_dict(self) -> dict:
        return {
            "points": [[p.real, p.imag] for p in self.points],
            "radii": list(self.radii),
            "window_exponents": list(self.window_exponents),
            "sides": self.sides,
            "declared": self.declared,
        }


def _cluster(values: np.ndarray, tol: float):
    """Greedy clustering with a discard annulus.

    Sweeping values in sorted order: a value within ``tol`` of an existing
    representative joins it; a value farther than ``2*tol`` from every
    representative founds a new cluster; anything in between is discarded.
    This enforces both set invariants by construction. Buckets of side
    ``tol`` keep the sweep near-linear.
    """
    order = np.lexsort((values.imag, values.real))
    reps: list[complex] = []
    radii: list[float] = []
    buckets: dict[tuple[int, int], list[int]] = {}

    def neighbors(z: complex):
        bx, by = int(np.floor(z.real / tol)), int(np.floor(z.imag / tol))
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                for idx in buckets.get((bx + dx, by + dy), ()):
                    yield idx

    for value in values[order]:
        z = complex(value)
        best_idx, best_dist = -1, np.inf
        for idx in neighbors(z):
            dist = abs(z - reps[idx])
            if dist < best_dist:
                best_idx, best_dist = idx, dist
        if best_dist <= tol:
            radii[best_idx] = max(radii[best_idx], best_dist)
        elif best_dist > 2.0 * tol:
            reps.append(z)
            radii.append(0.0)
            key = (int(np.floor(z.real / tol)), int(np.floor(z.imag / tol)))
            buckets.setdefault(key, []).append(len(reps) - 1)
        # else: inside the annulus (tol, 2*tol] of some representative —
        # discarded so the separation invariant survives.
    return reps, radii


def limit_points_at_infinity(d: Expr, cfg: SolverConfig | None = None
                             ) -> ExceptionalSet:
    """Heuristic estimate of the finite limit points of d at infinity.

    Samples d over dyadic windows [2^s, 2^(s+1)] (both signs of x by
    default; ``infinity_sides="positive"`` restores the literal one-sided
    reading), drops windows whose smallest |d| exceeds ``escape_bound``,
    and clusters the values retained from the ``cluster_windows`` largest
    windows. An empty result is meaningful: every window escaped.
    """
    cfg = cfg or SolverConfig()
    if cfg.declared_exceptional_set is not None:
        pts = tuple(complex(z) for z in cfg.declared_exceptional_set)
        return ExceptionalSet(
            points=pts, radii=(0.0,) * len(pts), window_exponents=(),
            sides=cfg.infinity_sides, declared=True)
    signs = (1.0, -1.0) if cfg.infinity_sides == "both" else (1.0,)
    lowest = cfg.windows - cfg.cluster_windows
    retained: list[np.ndarray] = []
    exponents: set[int] = set()
    for sign in signs:
        for s in range(cfg.windows):
            xs = sign * np.linspace(2.0**s, 2.0 ** (s + 1),
                                    cfg.points_per_window)
            vals = np.broadcast_to(
                np.asarray(evaluate_array(d, x=xs), dtype=np.complex128),
                xs.shape)
            finite = np.isfinite(vals)
            if not finite.any():
                continue
            if float(np.min(np.abs(vals[finite]))) > cfg.escape_bound:
                continue
            if s >= lowest:
                retained.append(vals[finite])
                exponents.add(s)
    if not retained:
        return ExceptionalSet((), (), (), cfg.infinity_sides)
    reps, radii = _cluster(np.concatenate(retained), cfg.cluster_tol)
    return ExceptionalSet(
        points=tuple(reps), radii=tuple(radii),
        window_exponents=tuple(sorted(exponents)), sides=cfg.infinity_sides)


# ---------------------------------------------------------------------------
# Assumption diagnostics
# ---------------------------------------------------------------------------

def check_assumptions(op: OperatorMatrix, symbol: SchurSymbol,
                      probes, grid: np.ndarray,
                      cfg: SolverConfig | None = None) -> Diagnostics:
    """Sampled evidence for the hypotheses, one record per (assumption, probe).

    B1: p_j and its first two x-derivatives stay below ``bound_cap`` on the
    grid. B2: sampled |p_m| stays above a floor, so 1/p_m is bounded.
    B3: c_gamma/(d-lambda) and two derivative orders of b_beta/(d-lambda)
    stay below ``bound_cap``. C: some angle theta keeps
    Re(e^{i theta} p_m) >= delta > 0 across the grid (the record carries
    the best theta and margin). D: the coefficient limits converge on both
    sides. Failures are records, never exceptions. A probe lying within
    ``probe_margin`` of the sampled decoupling curve downgrades its
    failures to "inconclusive": the hypotheses are genuinely violated on
    the curve itself, and a sampled check cannot distinguish the curve
    from its immediate neighborhood.
    """
    cfg = cfg or SolverConfig()
    grid = np.asarray(grid, dtype=float)
    records: list[DiagnosticRecord] = []

    coeff_trees = _coefficient_derivative_trees(symbol)
    weighted_trees = _resolvent_weighted_trees(op)
    delta_vals = np.broadcast_to(
        np.asarray(evaluate_array(delta(op), x=grid), dtype=np.complex128),
        grid.shape)
    delta_vals = delta_vals[np.isfinite(delta_vals)]
    theta_grid = np.linspace(0.0, np.pi, cfg.theta_points)

    for probe in probes:
        probe = complex(probe)
        near_curve = bool(delta_vals.size) and float(
            np.min(np.abs(delta_vals - probe))) <= cfg.probe_margin
        batch = [
            _check_b1(coeff_trees, probe, grid, cfg),
            _check_b2(symbol, probe, grid),
            _check_b3(weighted_trees, probe, grid, cfg),
            _check_c(symbol, probe, grid, theta_grid),
            _check_d(symbol, probe, cfg),
        ]
        for record in batch:
            if near_curve and record.status == "fail":
                label, location, measured = record.witness
                record = DiagnosticRecord(
                    assumption=record.assumption,
                    status="inconclusive",
                    probe=record.probe,
                    witness=(f"probe within {cfg.probe_margin:g} of the "
                             f"sampled decoupling curve; {label}",
                             location, measured),
                    theta=record.theta,
                    delta_margin=record.delta_margin,
                )
            records.append(record)
    return Diagnostics(records=tuple(records))


def _coefficient_derivative_trees(symbol: SchurSymbol):
    trees = []
    for j, p in enumerate(symbol.p):
        first = simplify(differentiate(p, "x"))
        second = simplify(differentiate(first, "x"))
        trees.append((j, (p, first, second)))
    return trees


def _resolvent_weighted_trees(op: OperatorMatrix):
    """c_gamma/(d-lambda) plain; b_beta/(d-lambda) with two derivatives."""
    resolvent_den = Sub(op.d, LAM)
    trees = []
    for gamma, c in enumerate(op.c):
        trees.append((f"c_{gamma}/(d-lambda)", (simplify(Div(c, resolvent_den)),)))
    for beta, b in enumerate(op.b):
        base = simplify(Div(b, resolvent_den))
        first = simplify(differentiate(base, "x"))
        second = simplify(differentiate(first, "x"))
        trees.append((f"b_{beta}/(d-lambda)", (base, first, second)))
    return trees


def _grid_values(tree: Expr, grid: np.ndarray, probe: complex) -> np.ndarray:
    return np.broadcast_to(
        np.asarray(evaluate_array(tree, x=grid, lam=probe),
                   dtype=np.complex128), grid.shape)


def _check_b1(coeff_trees, probe, grid, cfg) -> DiagnosticRecord:
    worst = (0.0, 0.0, "")
    for j, orders in coeff_trees:
        for order, tree in enumerate(orders):
            mags = np.abs(_grid_values(tree, grid, probe))
            mags = np.where(np.isfinite(mags), mags, np.inf)
            at = int(np.argmax(mags))
            if mags[at] > worst[0]:
                worst = (float(mags[at]), float(grid[at]),
                         f"d^{order} p_{j} / dx^{order}")
    if worst[0] <= cfg.bound_cap:
        return DiagnosticRecord("B1", "pass", probe=probe)
    return DiagnosticRecord(
        "B1", "fail", probe=probe,
        witness=(f"sampled |{worst[2]}| exceeds bound cap", worst[1], worst[0]))


def _check_b2(symbol, probe, grid) -> DiagnosticRecord:
    mags = np.abs(_grid_values(symbol.p[symbol.m], grid, probe))
    finite = np.isfinite(mags)
    if not finite.any():
        return DiagnosticRecord(
            "B2", "inconclusive", probe=probe,
            witness=("p_m not finite anywhere on the grid", float(grid[0]),
                     np.inf))
    mags = np.where(finite, mags, np.inf)
    at = int(np.argmin(mags))
    smallest = float(mags[at])
    if smallest >= INVERSE_FLOOR:
        return DiagnosticRecord("B2", "pass", probe=probe)
    return DiagnosticRecord(
        "B2", "fail", probe=probe,
        witness=("sampled |p_m| falls below the invertibility floor",
                 float(grid[at]), smallest))


def _check_b3(weighted_trees, probe, grid, cfg) -> DiagnosticRecord:
    worst = (0.0, 0.0, "")
    for label, orders in weighted_trees:
        for order, tree in enumerate(orders):
            mags = np.abs(_grid_values(tree, grid, probe))
            mags = np.where(np.isfinite(mags), mags, np.inf)
            at = int(np.argmax(mags))
            if mags[at] > worst[0]:
                worst = (float(mags[at]), float(grid[at]),
                         f"d^{order}/dx^{order} of {label}")
    if worst[0] <= cfg.bound_cap:
        return DiagnosticRecord("B3", "pass", probe=probe)
    return DiagnosticRecord(
        "B3", "fail", probe=probe,
        witness=(f"sampled |{worst[2]}| exceeds bound cap", worst[1], worst[0]))


def _check_c(symbol, probe, grid, theta_grid) -> DiagnosticRecord:
    vals = _grid_values(symbol.p[symbol.m], grid, probe)
    finite = np.isfinite(vals)
    if not finite.any():
        return DiagnosticRecord(
            "C", "inconclusive", probe=probe,
            witness=("p_m not finite anywhere on the grid", float(grid[0]),
                     np.inf))
    vals = vals[finite]
    rotated = (np.cos(theta_grid)[:, None] * vals.real[None, :]
               - np.sin(theta_grid)[:, None] * vals.imag[None, :])
    margins = rotated.min(axis=1)
    best = int(np.argmax(margins))
    theta = float(theta_grid[best])
    margin = float(margins[best])
    if margin > 0.0:
        return DiagnosticRecord("C", "pass", probe=probe, theta=theta,
                                delta_margin=margin)
    return DiagnosticRecord(
        "C", "fail", probe=probe,
        witness=("no rotation angle gives a positive sector margin",
                 theta, margin),
        theta=theta, delta_margin=margin)


def _check_d(symbol, probe, cfg) -> DiagnosticRecord:
    for side in ("+", "-"):
        try:
            limit_ratio(symbol, probe, side, cfg)
        except NotConvergent as exc:
            tail_increment = exc.witness[-1][1] if exc.witness else np.inf
            return DiagnosticRecord(
                "D", "fail", probe=probe,
                witness=(f"coefficient limits toward {side}infinity did not "
                         "converge", probe, float(tail_increment)))
        except PoleError as exc:
            return DiagnosticRecord(
                "D", "fail", probe=probe,
                witness=(f"trajectory toward {side}infinity hit a pole: {exc}",
                         probe, np.inf))
    return DiagnosticRecord("D", "pass", probe=probe)

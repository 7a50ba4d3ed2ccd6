"""Limits toward infinity: coefficient ratios, limit points of d, diagnostics.

Reference values for the two worked operators are closed forms computed
directly in the tests; the exceptional-set coverage test compares against a
dense brute-force sampling of the target function far from the origin.
"""

from __future__ import annotations

import cmath
import random
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from factories import (
    parabolic_potential,
    quartic_coupled,
    random_constant_operator,
)
from oracles import directed_hausdorff
from matspectra.asymptotics import (
    Certificate,
    ExceptionalSet,
    LimitProfile,
    check_assumptions,
    limit_points_at_infinity,
    limit_ratio,
    limit_ratio_batch,
)
from matspectra.config import SolverConfig
from matspectra.errors import NotConvergent, PoleError
from matspectra.expr import Call, Lit, Sub, X, evaluate, parse
from matspectra.model import OperatorMatrix, validation_grid
from matspectra.schur import SchurSymbol, build_schur

CFG = SolverConfig()


def quartic_tail_ratios(lam: complex) -> list[complex]:
    """Closed-form limit ratios of the quartic example, ascending in xi."""
    return [
        (lam - lam * lam) / (1j + lam),
        1.0 / (1j + lam),
        1j * lam / (1j + lam),
        0j,
    ]


# ---------------------------------------------------------------------------
# limit_ratio on the worked examples
# ---------------------------------------------------------------------------

def test_parabolic_ratios_at_2i_reach_minus_lambda_and_zero():
    symbol = build_schur(parabolic_potential())
    for side in ("+", "-"):
        values, certs = limit_ratio(symbol, 2j, side, CFG)
        assert len(values) == 2
        assert abs(values[0] - (-2j)) <= 1e-7
        assert abs(values[1]) <= 1e-7
        assert all(c.converged for c in certs)


@pytest.mark.parametrize("lam", [1.0 + 0j, 2.0 - 1j, -3.0 + 2j])
def test_quartic_ratios_match_closed_forms(lam):
    symbol = build_schur(quartic_coupled())
    values, certs = limit_ratio(symbol, lam, "+", CFG)
    expected = quartic_tail_ratios(lam)
    for got, want in zip(values, expected):
        assert abs(got - want) <= 1e-7
    for cert in certs:
        assert cert.converged
        assert cert.last_increment <= CFG.limit_tol * (1.0 + abs(cert.value))


def test_side_symmetry_for_even_coefficients():
    # Every coefficient of both examples is invariant under x -> -x.
    for op in (parabolic_potential(), quartic_coupled()):
        symbol = build_schur(op)
        plus, _ = limit_ratio(symbol, 2j, "+", CFG)
        minus, _ = limit_ratio(symbol, 2j, "-", CFG)
        for a, b in zip(plus, minus):
            assert abs(a - b) <= 1e-9


def test_constant_coefficients_certify_at_first_window():
    rng = random.Random(90210)
    for _ in range(5):
        op = random_constant_operator(rng, rng.choice([2, 4]))
        symbol = build_schur(op)
        lam = complex(rng.uniform(2.5, 4.0), rng.uniform(2.5, 4.0))
        for side in ("+", "-"):
            values, certs = limit_ratio(symbol, lam, side, CFG)
            for j, (value, cert) in enumerate(zip(values, certs)):
                want = evaluate(symbol.p[j], x=1.0, lam=lam) / evaluate(
                    symbol.p[symbol.m], x=1.0, lam=lam)
                assert abs(value - want) <= 1e-14 * (1.0 + abs(want))
                assert cert.converged
                assert cert.sample_count == 4
                assert cert.last_increment == 0.0


def test_oscillating_ratio_raises_not_convergent_with_witness():
    symbol = SchurSymbol(m=1, p=(Call("sin", X), Lit(1 + 0j)))
    with pytest.raises(NotConvergent) as info:
        limit_ratio(symbol, 0.5j, "+", CFG)
    witness = info.value.witness
    assert len(witness) >= 3
    # The witness increments stay order-one: persistent oscillation.
    assert max(step for _, step in witness) > 1e-3


def test_trajectory_pole_raises_pole_error():
    # p_m vanishes exactly at x = 32 = x0 * rho, the second sample.
    symbol = SchurSymbol(m=1, p=(Lit(1 + 0j), Sub(X, Lit(32.0 + 0j))))
    with pytest.raises(PoleError, match="32"):
        limit_ratio(symbol, 1j, "+", CFG)


def test_batch_matches_scalar_and_flags_failures():
    symbol = build_schur(quartic_coupled())
    lams = np.array([1.0 + 0j, 2.0 - 1j, -3.0 + 2j])
    values, status = limit_ratio_batch(symbol, lams, "+", CFG)
    assert values.shape == (3, 4)
    assert list(status) == ["ok", "ok", "ok"]
    for row, lam in zip(values, lams):
        scalar_values, _ = limit_ratio(symbol, complex(lam), "+", CFG)
        assert np.allclose(row, scalar_values, rtol=0, atol=0)

    wobble = SchurSymbol(m=1, p=(Call("sin", X), Lit(1 + 0j)))
    _, bad_status = limit_ratio_batch(wobble, np.array([1j]), "+", CFG)
    assert list(bad_status) == ["not-convergent"]


def test_limit_profile_tail_polynomial():
    symbol = build_schur(quartic_coupled())
    profile = LimitProfile(side="+", symbol=symbol, cfg=CFG)
    lam = 2.0 - 1j
    coeffs = profile.tail_coefficients(lam)
    assert coeffs.shape == (5,)
    assert coeffs[-1] == 1.0 + 0j
    expected = quartic_tail_ratios(lam)
    assert np.allclose(coeffs[:4], expected, rtol=0, atol=1e-7)
    # Value at xi=0 is exactly the estimated constant coefficient.
    assert profile.tail_value(lam, 0.0) == complex(coeffs[0])


def test_probe_near_sampled_curve_warns():
    symbol = build_schur(parabolic_potential())
    # The decoupling function -x^2 - 1 passes through -2 at x = 1.
    with pytest.warns(UserWarning, match="decoupling"):
        limit_ratio(symbol, -2.0 + 0j, "+", CFG,
                    delta_samples=np.array([-2.0 + 0j, -1.0 + 0j]))


def test_probe_near_exceptional_estimate_warns():
    symbol = build_schur(quartic_coupled())
    exceptional = ExceptionalSet(points=(0j,), radii=(0.0,),
                                 window_exponents=(), sides="both")
    with pytest.warns(UserWarning, match="exceptional"):
        limit_ratio(symbol, 1e-5 + 0j, "+", CFG, exceptional=exceptional)


def test_concurrent_calls_are_deterministic():
    symbol = build_schur(quartic_coupled())
    probes = [1.0 + 0j, 2.0 - 1j, -3.0 + 2j, 0.5 + 2.5j, -1.0 - 2j, 4.0 + 1j]

    def run(lam):
        return limit_ratio(symbol, lam, "+", CFG)

    sequential = [run(lam) for lam in probes]
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = list(pool.map(run, probes))
    for (seq_vals, _), (thr_vals, _) in zip(sequential, threaded):
        assert seq_vals == thr_vals


# ---------------------------------------------------------------------------
# Limit points of d at infinity
# ---------------------------------------------------------------------------

def test_quartic_d_has_single_limit_point_at_zero():
    result = limit_points_at_infinity(quartic_coupled().d, CFG)
    assert len(result.points) == 1
    assert abs(result.points[0]) <= 1e-4
    assert all(r <= CFG.cluster_tol for r in result.radii)
    expected_windows = tuple(range(CFG.windows - CFG.cluster_windows,
                                   CFG.windows))
    assert result.window_exponents == expected_windows


def test_parabolic_d_escapes_everywhere():
    result = limit_points_at_infinity(parabolic_potential().d, CFG)
    assert result.points == ()
    assert result.window_exponents == ()


def test_declared_exceptional_set_short_circuits_estimation():
    cfg = CFG.with_overrides(declared_exceptional_set=(1 + 2j, -0.5j))
    result = limit_points_at_infinity(parse("sin(x)"), cfg)
    assert result.declared
    assert result.points == (1 + 2j, -0.5j)
    assert result.radii == (0.0, 0.0)
    assert result.contains(1 + 2j, 1e-12)
    assert not result.contains(5.0, 1e-3)


def test_oscillating_d_fills_its_range():
    cfg = CFG.with_overrides(cluster_tol=1e-2)
    result = limit_points_at_infinity(parse("sin(x)"), cfg)
    reps = np.array(result.points)
    # Set invariants: tight clusters, separated representatives.
    assert all(r <= 1e-2 for r in result.radii)
    seps = np.abs(reps[:, None] - reps[None, :])
    seps[np.diag_indices_from(seps)] = np.inf
    assert seps.min() > 2e-2
    # Coverage: a dense far-field reference sampling of sin is everywhere
    # within 2.5 * cluster_tol of a representative (cluster radius plus
    # the discard annulus).
    reference = np.sin(np.linspace(1e6, 1e6 + 1e3, 20_001))
    assert directed_hausdorff(reference.astype(complex), reps) <= 2.5e-2


def test_exceptional_set_stable_under_window_doubling():
    base = CFG.with_overrides(cluster_tol=1e-2)
    doubled = base.with_overrides(windows=2 * CFG.windows)
    for d_text in ("sin(x)", "exp(-x^2/2) + i/(1 + x^2)"):
        one = limit_points_at_infinity(parse(d_text), base)
        two = limit_points_at_infinity(parse(d_text), doubled)
        a = np.array(one.points)
        b = np.array(two.points)
        # Representatives can be separated by up to ~2*tol plus the data
        # gap, so mutual deviation stays below 2.5*tol for a dense range.
        assert directed_hausdorff(a, b) <= 2.5 * base.cluster_tol
        assert directed_hausdorff(b, a) <= 2.5 * base.cluster_tol


# ---------------------------------------------------------------------------
# Assumption diagnostics
# ---------------------------------------------------------------------------

def by_assumption(diag, assumption, probe):
    for record in diag.records:
        if record.assumption == assumption and record.probe == probe:
            return record
    raise AssertionError(f"no {assumption} record for probe {probe}")


def test_quartic_probes_produce_no_failures():
    op = quartic_coupled()
    symbol = build_schur(op)
    grid = validation_grid(CFG)
    probes = [1.0 + 0j, 2j, -3.0 + 0j]
    diag = check_assumptions(op, symbol, probes, grid, CFG)
    assert diag.ok()
    assert len(diag.records) == 15  # five assumptions x three probes
    # Away from the decoupling curve everything passes outright.
    for probe in (2j, -3.0 + 0j):
        for assumption in ("B1", "B2", "B3", "C", "D"):
            assert by_assumption(diag, assumption, probe).status == "pass"
    # lambda = 1 lies on the sampled decoupling curve (its value at x = 0),
    # where p_m genuinely vanishes: sampled checks report inconclusive
    # rather than fail, and the limits themselves still converge.
    assert by_assumption(diag, "B2", 1.0 + 0j).status == "inconclusive"
    assert by_assumption(diag, "D", 1.0 + 0j).status == "pass"
    for record in diag.records:
        if record.assumption == "C":
            assert record.theta is not None
            assert record.delta_margin is not None
            if record.status == "pass":
                assert record.delta_margin > 0


def test_bounded_d_with_invertible_leading_coefficient_passes_b2():
    # Bounded d and |a_m| bounded away from zero make 1/p_m bounded for
    # every probe away from the curve.
    op = quartic_coupled()
    symbol = build_schur(op)
    grid = validation_grid(CFG)
    diag = check_assumptions(op, symbol, [5j, -7.0 + 0j, 3.0 + 3j], grid, CFG)
    for record in diag.records:
        if record.assumption == "B2":
            assert record.status == "pass"


def test_winding_leading_coefficient_fails_sector_condition():
    # p_m = cos(x) reaches both +1 and -1, so no rotation angle keeps
    # Re(e^{i theta} p_m) positive; C must fail with the witness margin.
    op = OperatorMatrix(
        a=(Lit(0j), Lit(0j), Call("cos", X)),
        b=(Lit(0j), Lit(0j)),
        c=(Lit(0j), Lit(0j)),
        d=Lit(100j),
    )
    symbol = build_schur(op)
    grid = validation_grid(CFG)
    diag = check_assumptions(op, symbol, [5.0 + 0j], grid, CFG)
    record = by_assumption(diag, "C", 5.0 + 0j)
    assert record.status == "fail"
    assert record.delta_margin is not None and record.delta_margin <= 0
    assert record.witness is not None


def test_unbounded_coefficient_fails_b1():
    # p_2 = x is unbounded; the sampled bound cap must flag it.
    op = OperatorMatrix(
        a=(Lit(0j), Lit(0j), X),
        b=(Lit(0j), Lit(0j)),
        c=(Lit(0j), Lit(0j)),
        d=Lit(100j),
    )
    symbol = build_schur(op)
    grid = validation_grid(CFG)
    cfg = CFG.with_overrides(bound_cap=1e3)
    diag = check_assumptions(op, symbol, [5.0 + 0j], grid, cfg)
    record = by_assumption(diag, "B1", 5.0 + 0j)
    assert record.status == "fail"
    label, location, measured = record.witness
    assert "p_2" in label
    assert measured > 1e3


def test_oscillating_limits_fail_assumption_d():
    op = OperatorMatrix(
        a=(Call("sin", X), Lit(0j), Lit(1 + 0j)),
        b=(Lit(0j), Lit(0j)),
        c=(Lit(0j), Lit(0j)),
        d=Lit(100j),
    )
    symbol = build_schur(op)
    grid = validation_grid(CFG)
    diag = check_assumptions(op, symbol, [5.0 + 0j], grid, CFG)
    record = by_assumption(diag, "D", 5.0 + 0j)
    assert record.status == "fail"
    assert record.witness is not None


def test_certificate_invariant_on_converged_records():
    symbol = build_schur(parabolic_potential())
    values, certs = limit_ratio(symbol, 3j, "+", CFG)
    for value, cert in zip(values, certs):
        assert isinstance(cert, Certificate)
        assert cert.value == value
        assert cert.status == "converged"
        assert cert.last_increment <= CFG.limit_tol * (1.0 + abs(value))
        assert 4 <= cert.sample_count <= CFG.T + 1

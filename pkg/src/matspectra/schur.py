"""First Schur complement of the operator matrix, built symbolically.

Eliminating the second component of the 2x2 operator turns the spectral
problem into a scalar one: the composed operator

    (sum_j a_j D^j) - lambda - (sum_b b_B D^B) (d - lambda)^(-1) (sum_g c_g D^g)

with D = -i d/dx. Pushing each D^B through the product with the Leibniz rule
and collecting powers of D yields coefficient expressions p_j(x, lambda),
j = 0..m. The composition is exact symbolic algebra: for each (B, g) pair,
D^B applied to (d - lambda)^(-1) c_g (D^g u) contributes
binom(B, r) * b_B * D^(B-r)[c_g/(d - lambda)] to the coefficient of
D^(r+g). The leading coefficient then automatically satisfies
p_m = a_m - b_n c_k/(d - lambda) = a_m (delta - lambda)/(d - lambda).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import SolverConfig
from .errors import ComplexityError
from .expr import (
    LAM,
    Div,
    Expr,
    Lit,
    Mul,
    Sub,
    differentiate,
    evaluate,
    node_count,
    simplify,
)
from .model import OperatorMatrix, check_structure

_ZERO = Lit(0j)


@dataclass(frozen=True)
class SchurSymbol:
    """Coefficients p_0..p_m of the scalar symbol sum_j p_j(x, lambda) xi^j."""

    m: int
    p: tuple[Expr, ...]

    def __post_init__(self):
        if len(self.p) != self.m + 1:
            raise ValueError("expected m+1 coefficient expressions")


def _guard_size(tree: Expr, ceiling: int) -> Expr:
    count = node_count(tree)
    if count > ceiling:
        raise ComplexityError(
            f"coefficient tree grew to {count} nodes (ceiling {ceiling})")
    return tree


def build_schur(op: OperatorMatrix, cfg: SolverConfig | None = None) -> SchurSymbol:
    """Compose the scalar symbol coefficients by exact Leibniz expansion."""
    if cfg is None:
        cfg = SolverConfig()
    check_structure(op)
    m, n, k = op.m, op.n, op.k
    resolvent_den = Sub(op.d, LAM)

    # terms[j] collects everything the coupling contributes at order D^j.
    terms: list[list[Expr]] = [[] for _ in range(m + 1)]
    for gamma in range(k + 1):
        if op.c[gamma] == _ZERO:
            continue
        ladder = [simplify(Div(op.c[gamma], resolvent_den))]
        for _ in range(n):
            step = simplify(Mul(Lit(-1j), differentiate(ladder[-1], "x")))
            ladder.append(_guard_size(step, cfg.node_ceiling))
        for beta in range(n + 1):
            if op.b[beta] == _ZERO:
                continue
            for r in range(beta + 1):
                weight = math.comb(beta, r)
                term = Mul(op.b[beta], ladder[beta - r])
                if weight != 1:
                    term = Mul(Lit(complex(weight)), term)
                terms[r + gamma].append(term)

    coefficients = []
    for j in range(m + 1):
        base: Expr = op.a[j]
        if j == 0:
            base = Sub(base, LAM)
        for term in terms[j]:
            base = Sub(base, term)
        coefficient = _guard_size(simplify(base), cfg.node_ceiling)
        coefficients.append(coefficient)
    return SchurSymbol(m=m, p=tuple(coefficients))


def symbol_eval(symbol: SchurSymbol, x: float, xi: float, lam: complex) -> complex:
    """Horner evaluation of sum_j p_j(x, lambda) xi^j."""
    acc = evaluate(symbol.p[symbol.m], x=x, lam=lam)
    for j in range(symbol.m - 1, -1, -1):
        acc = acc * xi + evaluate(symbol.p[j], x=x, lam=lam)
    return acc


def polynomial_derivative(coeffs: tuple[complex, ...]) -> tuple[complex, ...]:
    """d/dx of a polynomial given by ascending coefficients."""
    return tuple(r * coeffs[r] for r in range(1, len(coeffs)))


def polynomial_value(coeffs: tuple[complex, ...], x: float) -> complex:
    acc = 0j
    for coefficient in reversed(coeffs):
        acc = acc * x + coefficient
    return acc


def apply_operator(
    symbol: SchurSymbol, u_coeffs, x: float, lam: complex
) -> complex:
    """Apply sum_j p_j(x, lambda) D^j to the polynomial u at the point x.

    ``u_coeffs`` lists u's complex coefficients in ascending powers of x;
    derivatives of u are computed exactly, and D^j contributes (-i)^j times
    the j-th derivative.
    """
    current = tuple(complex(c) for c in u_coeffs)
    total = 0j
    momentum_phase = 1 + 0j  # (-i)^j
    for j in range(symbol.m + 1):
        if not current:
            break
        total += (
            evaluate(symbol.p[j], x=x, lam=lam)
            * momentum_phase
            * polynomial_value(current, x)
        )
        current = polynomial_derivative(current)
        momentum_phase *= -1j
    return total

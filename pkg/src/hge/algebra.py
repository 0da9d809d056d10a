"""Elementwise arithmetic in the complex, split-complex and dual number systems.

All three systems are two-component algebras q = a + b*u over the reals; they
differ only in what the imaginary unit squares to: u*u = -1 (complex),
u*u = +1 (split-complex, with u != +-1) or u*u = 0 (dual, with u != 0). The
scalar kernels below are the per-dimension building blocks of the embedding
scorer; the ``*_arrays`` variants broadcast them over numpy arrays.

Everything here is a pure function of its inputs and safe to call from any
number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Geometry",
    "HNum",
    "TrilinearGrad",
    "hmul",
    "conj",
    "trilinear",
    "trilinear_grad",
    "mul_arrays",
    "trilinear_arrays",
]


class Geometry(Enum):
    """One of the three two-component number systems."""

    COMPLEX = "complex"
    SPLIT_COMPLEX = "split_complex"
    DUAL = "dual"

    @property
    def unit_square(self) -> float:
        """The value g the imaginary unit squares to: -1, +1 or 0."""
        return _UNIT_SQUARE[self]


_UNIT_SQUARE = {
    Geometry.COMPLEX: -1.0,
    Geometry.SPLIT_COMPLEX: 1.0,
    Geometry.DUAL: 0.0,
}


@dataclass(frozen=True)
class HNum:
    """A number a + b*u with real part ``a`` and imaginary part ``b``."""

    a: float
    b: float


def hmul(g: Geometry, x: HNum, y: HNum) -> HNum:
    """Multiply two numbers in the algebra ``g``.

    (a + b*u)(c + d*u) = (ac + g*bd) + (ad + bc)*u with g = u*u, which
    specializes to (ac-bd, ad+bc) for complex, (ac+bd, ad+bc) for
    split-complex and (ac, ad+bc) for dual inputs.
    """
    gg = _UNIT_SQUARE_EXACT[g]
    if gg == 0:
        real = x.a * y.a
    elif gg == 1:
        real = x.a * y.a + x.b * y.b
    else:
        real = x.a * y.a - x.b * y.b
    return HNum(real, x.a * y.b + x.b * y.a)


# Integer unit squares so hmul stays exact on Fraction/int inputs.
_UNIT_SQUARE_EXACT = {
    Geometry.COMPLEX: -1,
    Geometry.SPLIT_COMPLEX: 1,
    Geometry.DUAL: 0,
}


def conj(x: HNum) -> HNum:
    """Conjugation a + b*u -> a - b*u (an involution in all three algebras)."""
    return HNum(x.a, -x.b)


def trilinear(g: Geometry, s: HNum, p: HNum, o: HNum) -> HNum:
    """Three-way product s * p * o in the algebra ``g``, fully expanded.

    The expansion is written out monomial by monomial so that the scoring
    kernel is pinned coefficient-for-coefficient; the regression suite checks
    it against both hmul composition and a symbolic oracle. Note there is no
    conjugation on ``o`` here.
    """
    if g is Geometry.COMPLEX:
        return HNum(
            s.a * p.a * o.a - s.b * p.b * o.a - s.a * p.b * o.b - s.b * p.a * o.b,
            s.a * p.a * o.b - s.b * p.b * o.b + s.a * p.b * o.a + s.b * p.a * o.a,
        )
    if g is Geometry.SPLIT_COMPLEX:
        return HNum(
            s.a * p.a * o.a + s.b * p.b * o.a + s.a * p.b * o.b + s.b * p.a * o.b,
            s.a * p.a * o.b + s.b * p.b * o.b + s.a * p.b * o.a + s.b * p.a * o.a,
        )
    if g is Geometry.DUAL:
        return HNum(
            s.a * p.a * o.a,
            s.a * p.a * o.b + s.a * p.b * o.a + s.b * p.a * o.a,
        )
    raise ValueError(f"unknown geometry: {g!r}")


@dataclass(frozen=True)
class TrilinearGrad:
    """Partial derivatives of trilinear() with respect to its six scalars.

    ``real`` holds (d real/d s, d real/d p, d real/d o) where each entry packs
    the derivatives with respect to the (a, b) components of that factor;
    ``imag`` does the same for the imaginary part of the product.
    """

    real: tuple[HNum, HNum, HNum]
    imag: tuple[HNum, HNum, HNum]


def trilinear_grad(g: Geometry, s: HNum, p: HNum, o: HNum) -> TrilinearGrad:
    """Analytic gradient of the three-way product (checked against central
    finite differences in the test suite)."""
    gg = g.unit_square
    real = (
        HNum(p.a * o.a + gg * p.b * o.b, gg * (p.b * o.a + p.a * o.b)),
        HNum(s.a * o.a + gg * s.b * o.b, gg * (s.b * o.a + s.a * o.b)),
        HNum(s.a * p.a + gg * s.b * p.b, gg * (s.a * p.b + s.b * p.a)),
    )
    imag = (
        HNum(p.a * o.b + p.b * o.a, gg * p.b * o.b + p.a * o.a),
        HNum(s.a * o.b + s.b * o.a, gg * s.b * o.b + s.a * o.a),
        HNum(s.a * p.b + s.b * p.a, s.a * p.a + gg * s.b * p.b),
    )
    return TrilinearGrad(real, imag)


def mul_arrays(
    g: Geometry,
    xa: np.ndarray,
    xb: np.ndarray,
    ya: np.ndarray,
    yb: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise hmul over component arrays; returns (real, imaginary)."""
    gg = g.unit_square
    if gg == 0.0:
        real = xa * ya
    else:
        real = xa * ya + gg * (xb * yb)
    return real, xa * yb + xb * ya


def trilinear_arrays(
    g: Geometry,
    sa: np.ndarray,
    sb: np.ndarray,
    pa: np.ndarray,
    pb: np.ndarray,
    oa: np.ndarray,
    ob: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise three-way product over component arrays."""
    xa, xb = mul_arrays(g, sa, sb, pa, pb)
    return mul_arrays(g, xa, xb, oa, ob)

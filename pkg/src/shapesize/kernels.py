"""Kernel families and bandwidth rules used by the rate smoothers.

Two families are supported. The quartic fourth-order kernel drives the
shape objectives, where bias reduction matters more than positivity; it
takes negative values, which is why downstream estimators floor the
smoothed rate at a small positive constant. The Epanechnikov kernel is
second order and nonnegative, used on the size side where the smoothed
quantity feeds an exponential and must stay well behaved.

Bandwidths follow the power rule h = a1 * n ** (-a2). Each family has an
admissible window for the exponent a2; choosing a rate outside the window
breaks the bias/variance balancing the estimators rely on, so it is
rejected unless explicitly overridden.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

QUARTIC4 = "quartic4"
EPANECHNIKOV = "epanechnikov"

FAMILIES = (QUARTIC4, EPANECHNIKOV)

# open (low, high) windows for the bandwidth exponent a2
_RATE_WINDOWS = {
    QUARTIC4: (1.0 / 8.0, 1.0 / 6.0),
    EPANECHNIKOV: (1.0 / 4.0, 1.0 / 2.0),
}

_DEFAULT_A2 = {QUARTIC4: 2.0 / 15.0, EPANECHNIKOV: 2.0 / 7.0}


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth rule h = a1 * n**(-a2).

    Parameters
    ----------
    family : str
        One of ``quartic4`` or ``epanechnikov``.
    a1 : float
        Bandwidth multiplier, must be positive.
    a2 : float
        Bandwidth exponent. Must lie in the family's admissible open
        window, (1/8, 1/6) for quartic4 and (1/4, 1/2) for epanechnikov,
        unless ``allow_any_rate`` is set.
    r0 : float
        Positivity floor applied by downstream rate estimators.
    allow_any_rate : bool
        Skip the exponent window check. Intended for experiments only.
    """

    family: str = QUARTIC4
    a1: float = 1.0
    a2: float = 2.0 / 15.0
    r0: float = 1e-6
    allow_any_rate: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(
                f"unknown kernel family {self.family!r}; expected one of {FAMILIES}"
            )
        if not (self.a1 > 0.0 and np.isfinite(self.a1)):
            raise KernelError(f"bandwidth multiplier a1 must be positive, got {self.a1}")
        if not (self.r0 > 0.0):
            raise KernelError(f"rate floor r0 must be positive, got {self.r0}")
        lo, hi = _RATE_WINDOWS[self.family]
        if not self.allow_any_rate and not (lo < self.a2 < hi):
            raise KernelError(
                f"bandwidth exponent a2={self.a2} outside the admissible window "
                f"({lo}, {hi}) for family {self.family!r}; pass allow_any_rate=True "
                "to override"
            )

    def bandwidth(self, n: int) -> float:
        """Bandwidth for sample size n."""
        if n < 1:
            raise KernelError(f"sample size must be >= 1, got {n}")
        return self.a1 * float(n) ** (-self.a2)


def shape_kernel(a1: float = 1.0, a2: float = 2.0 / 15.0, r0: float = 1e-6) -> KernelSpec:
    """Default kernel for the shape objectives (fourth order)."""
    return KernelSpec(family=QUARTIC4, a1=a1, a2=a2, r0=r0)


def size_kernel(a1: float = 1.0, a2: float = 2.0 / 7.0) -> KernelSpec:
    """Default kernel for the size-side survival smoother (second order)."""
    return KernelSpec(family=EPANECHNIKOV, a1=a1, a2=a2)


def _values(family: str, u: np.ndarray) -> np.ndarray:
    # raw kernel on the [-1, 1] support; exact zero outside
    u2 = u * u
    inside = u2 < 1.0
    out = np.zeros_like(u, dtype=float)
    if family == QUARTIC4:
        v = 1.0 - u2[inside]
        out[inside] = (315.0 / 512.0) * (3.0 - 11.0 * u2[inside]) * v * v * v
    else:
        out[inside] = 0.75 * (1.0 - u2[inside])
    return out


def kernel_eval(spec: KernelSpec, u) -> np.ndarray | float:
    """Evaluate the unscaled kernel K(u); exactly 0 for |u| >= 1."""
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    out = _values(spec.family, np.atleast_1d(arr))
    return float(out[0]) if scalar else out.reshape(arr.shape)


def scaled_kernel(spec: KernelSpec, n: int, u) -> np.ndarray | float:
    """Evaluate K_h(u) = K(u / h) / h with h = spec.bandwidth(n)."""
    h = spec.bandwidth(n)
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    out = _values(spec.family, np.atleast_1d(arr) / h) / h
    return float(out[0]) if scalar else out.reshape(arr.shape)


def kernel_moments(spec: KernelSpec, upto: int = 4) -> np.ndarray:
    """Moments m_k = integral of u**k K(u) over the support, k = 0..upto.

    Adaptive quadrature; used for order checks. The quartic4 family has
    m_0 = 1 and m_1 = m_2 = m_3 = 0, epanechnikov has m_0 = 1, m_1 = 0.
    """
    fam = spec.family

    def f(u, k):
        return float(u**k) * float(_values(fam, np.atleast_1d(np.float64(u)))[0])

    out = np.empty(upto + 1)
    for k in range(upto + 1):
        val, _ = quad(f, -1.0, 1.0, args=(k,), epsabs=1e-13, epsrel=1e-13, limit=200)
        out[k] = val
    return out

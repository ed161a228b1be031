"""Regenerate the frozen values in tests/reference_values.py.

Every number comes from scipy's QUADPACK wrappers applied directly to the
defining integrals, without using any openqx code. Run from the repository
root: ``python3 tests/oracles/generate_reference_values.py``.
"""

import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq
from scipy.special import expit

TWO_PI = 2 * np.pi


def band_lorentzian(x, amp=1.0, center=0.0, width=0.5):
    return amp * width**2 / ((x - center) ** 2 + width**2)


def sigma_band_real_axis(eps, lo=-1.0, hi=1.0):
    # P int J(x)/(eps - x) dx / 2pi ; quad's cauchy weight gives P int J/(x - eps)
    pv = quad(band_lorentzian, lo, hi, weight="cauchy", wvar=eps, epsabs=1e-14, epsrel=1e-12, limit=500)[0]
    return complex(-pv / TWO_PI, -band_lorentzian(eps) / 2)


def sigma_band_complex(z, lo=-1.0, hi=1.0):
    re = quad(lambda x: (band_lorentzian(x) / (z - x)).real, lo, hi, epsabs=1e-15, epsrel=1e-12, limit=400)[0]
    im = quad(lambda x: (band_lorentzian(x) / (z - x)).imag, lo, hi, epsabs=1e-15, epsrel=1e-12, limit=400)[0]
    return complex(re, im) / TWO_PI


def ohmic(x, amp=2.0, cutoff=1.0):
    return amp * x * np.exp(-x / cutoff)


def ohmic_bound_state(w0=0.2, amp=2.0, cutoff=1.0, top=40.0):
    def sigma(e):
        return quad(lambda x: ohmic(x, amp, cutoff) / (e - x), 0, top, epsabs=1e-15, epsrel=1e-12, limit=400)[0] / TWO_PI

    def dsigma(e):
        return -quad(lambda x: ohmic(x, amp, cutoff) / (e - x) ** 2, 0, top, epsabs=1e-15, epsrel=1e-12, limit=400)[0] / TWO_PI

    e = brentq(lambda e: e - w0 - sigma(e), -5.0, -1e-12, xtol=1e-15, rtol=1e-15)
    return e, 1.0 / (1.0 - dsigma(e))


def fermion_lorentzian_noise(s, amp=0.5, center=0.0, width=1.0, beta=2.0, mu=0.1):
    def fj(x):
        return expit(-beta * (x - mu)) * band_lorentzian(x, amp, center, width)

    if s == 0:
        val = quad(fj, -np.inf, np.inf, epsabs=1e-15, epsrel=1e-12)[0]
        return complex(val / TWO_PI)
    # int f J e^{-i x s} = int_0^inf [fj(x) + fj(-x)] cos(xs) - i [fj(x) - fj(-x)] sin(xs)
    even = lambda x: fj(x) + fj(-x)
    odd = lambda x: fj(x) - fj(-x)
    cut = 50.0
    parts = []
    for g, w in ((even, "cos"), (odd, "sin")):
        head = quad(g, 0, cut, weight=w, wvar=s, epsabs=1e-16, epsrel=1e-12, limit=2000)[0]
        tail = quad(g, cut, np.inf, weight=w, wvar=s, epsabs=1e-14, limlst=200)[0]
        parts.append(head + tail)
    return complex(parts[0], -parts[1]) / TWO_PI


if __name__ == "__main__":
    # tolerances sit near machine precision, so QUADPACK reports roundoff; the
    # frozen values are compared at 1e-10 or looser
    warnings.simplefilter("ignore", IntegrationWarning)
    print("SIGMA_BAND_REAL =", {e: sigma_band_real_axis(e) for e in (-0.6, 0.0, 0.3, 0.9)})
    print("SIGMA_BAND_COMPLEX =", {z: sigma_band_complex(z) for z in (2 + 0.5j, -0.2 + 0.1j, 1.5 - 0.3j)})
    print("OHMIC_BOUND_STATE =", ohmic_bound_state())
    print("LORENTZ_NOISE =", {s: fermion_lorentzian_noise(s) for s in (0.0, 0.3, 2.0, 10.0, 40.0)})

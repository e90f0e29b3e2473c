"""Reference computations that share no code with the package."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate


def chi2_pdf(x: float, dof: int) -> float:
    if x <= 0:
        return 0.0
    k = dof / 2.0
    return math.exp((k - 1) * math.log(x) - x / 2 - k * math.log(2) - math.lgamma(k))


def chi2_cdf_quad(x: float, dof: int) -> float:
    val, _ = integrate.quad(chi2_pdf, 0.0, x, args=(dof,), epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def chi2_quantile_bisect(p: float, dof: int) -> float:
    lo, hi = 0.0, 1.0
    while chi2_cdf_quad(hi, dof) < p:
        hi *= 2
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if chi2_cdf_quad(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def placement_lp_vertices(b: np.ndarray, storage: float) -> float:
    """Minimum of sum (1 - c) b over the box-and-budget polytope by vertex enumeration.

    Vertices have every coordinate in {0, 1} except possibly one, which then
    takes the leftover budget (best spent on the most popular uncached file).
    """
    b = np.asarray(b, dtype=float)
    F = len(b)
    bits = np.array(list(itertools.product((0.0, 1.0), repeat=F)))
    used = bits.sum(axis=1)
    ok = used <= storage + 1e-12
    bits, used = bits[ok], used[ok]
    obj = (1 - bits) @ b
    rest = storage - used
    frac = (rest > 0) & (rest < 1)
    spare = np.where(bits == 0, b[None, :], -np.inf).max(axis=1)
    gain = np.where(frac & np.isfinite(spare), rest * spare, 0.0)
    return float(np.min(obj - gain))


def harmonic(n: int, s: float = 1.0) -> float:
    total = 0.0
    for i in range(1, n + 1):
        total += i ** (-s)
    return total


def taylor_bound_direct(w, w0, e, e0, h, G) -> float:
    """First-order lower bound of |(h^H + e^H G) w|^2 around (w0, e0) at a fixed cascade G."""
    c = np.conj(h) @ w + np.conj(e) @ G @ w
    c0 = np.conj(h) @ w0 + np.conj(e0) @ G @ w0
    return float(2 * np.real(c0 * np.conj(c)) - abs(c0) ** 2)


def useful_power(w, e, h, G) -> float:
    return float(abs(np.conj(h) @ w + np.conj(e) @ G @ w) ** 2)


def mrt_power(h, noise: float, gamma: float) -> float:
    return noise * (2.0**gamma - 1.0) / float(np.sum(np.abs(h) ** 2))


def phase_grid_power(h, G, noise: float, gamma: float, step: float = 1e-3):
    """Single-user, single-element optimum over a phase grid: (power, theta)."""
    thetas = np.arange(0.0, 2 * np.pi, step)
    # effective channel h + G^H e with e = exp(j theta)
    eff = h[None, :] + np.exp(1j * thetas)[:, None] * np.conj(G[0])[None, :]
    gains = np.sum(np.abs(eff) ** 2, axis=1)
    i = int(np.argmax(gains))
    return noise * (2.0**gamma - 1.0) / gains[i], thetas[i]


def sinr_loop(W, e, h, G, noise):
    """Per-user SINR by explicit loops."""
    K = W.shape[1]
    out = []
    for k in range(K):
        row = np.conj(h[k]) + np.conj(e) @ G[k]
        pw = [abs(row @ W[:, j]) ** 2 for j in range(K)]
        out.append(pw[k] / (sum(pw) - pw[k] + noise[k]))
    return np.array(out)


def random_hermitian(rng, n, psd=False):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T if psd else 0.5 * (A + A.conj().T)


def barrier_sdp(c, F0, Fs, x0, t_final=1e9):
    """Minimise c'x s.t. F0 + sum x_i Fs[i] >= 0 with a plain log-det barrier.

    Damped Newton on t c'x - logdet F(x), t grown geometrically; ``x0`` must
    be strictly feasible.
    """
    c = np.asarray(c, float)
    x = np.asarray(x0, float).copy()

    def F(x):
        return F0 + np.tensordot(x, Fs, axes=1)

    def phi(x, t):
        ev = np.linalg.eigvalsh(F(x))
        return np.inf if ev[0] <= 0 else t * c @ x - np.sum(np.log(ev))

    t = 1.0
    while t <= t_final:
        for _ in range(200):
            Fi = np.linalg.inv(F(x))
            P = [Fi @ A for A in Fs]
            g = t * c - np.array([np.trace(p) for p in P])
            H = np.array([[np.trace(p @ q) for q in P] for p in P])
            dx = -np.linalg.solve(H, g)
            dec = -g @ dx
            if dec / 2 < 1e-12:
                break
            s, f0 = 1.0, phi(x, t)
            while phi(x + s * dx, t) > f0 - 0.25 * s * dec:
                s *= 0.5
                if s < 1e-14:
                    break
            x = x + s * dx
        t *= 8
    return x, float(c @ x)

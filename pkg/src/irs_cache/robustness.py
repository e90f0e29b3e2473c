"""Independent falsification of robust designs: ball sampling, exact rates,
projected-descent worst-case search and Gaussian outage estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelScene

# rates this close below the target are solver round-off, not violations
RATE_TOL = 1e-6


@dataclass
class RobustnessReport:
    min_rate: np.ndarray  # per user, bit/s/Hz
    violations: int
    samples: int
    worst_dG: np.ndarray  # K x M x N
    empirical_outage: float = float("nan")

    def summary(self) -> dict:
        return {
            "min_rate_certified": float(np.min(self.min_rate)) if self.min_rate.size else float("nan"),
            "violations": int(self.violations),
            "samples": int(self.samples),
            "empirical_outage": float(self.empirical_outage),
        }


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_error_ball(xi: float, rows: int, cols: int, mode: str = "interior", seed=0, count: int | None = None) -> np.ndarray:
    """Uniform draw from the complex Frobenius ball (``interior``) or sphere (``boundary``).

    Returns one ``rows x cols`` matrix, or ``count`` of them stacked.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if xi < 0:
        raise ValueError("xi must be >= 0")
    if mode not in ("interior", "boundary"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = 1 if count is None else count
    z = _complex_normal(rng, (n, rows, cols))
    norms = np.linalg.norm(z.reshape(n, -1), axis=1)
    radius = np.full(n, float(xi))
    if mode == "interior":
        radius = radius * rng.uniform(size=n) ** (1.0 / (2 * rows * cols))
    out = z * (radius / np.where(norms > 0, norms, 1.0))[:, None, None]
    return out[0] if count is None else out


def _project(dG: np.ndarray, xi: float) -> np.ndarray:
    norms = np.linalg.norm(dG.reshape(dG.shape[0], -1), axis=1)
    scale = np.where(norms > xi, xi / np.where(norms > 0, norms, 1.0), 1.0)
    return dG * scale[:, None, None]


def _user_sinr(W, e, h_k, G_k, k, noise):
    """SINR of user k for a stack of cascades ``G_k`` (S x M x N)."""
    g = h_k.conj()[None, :] + np.einsum("m,smn->sn", e.conj(), G_k)  # S x N effective rows
    s = g @ W  # S x K
    p = np.abs(s) ** 2
    return p[:, k] / (p.sum(axis=1) - p[:, k] + noise)


def rate_under_error(W, e, scene: ChannelScene, dG) -> np.ndarray:
    """Achievable rates log2(1 + SINR_k) with cascades ``G_hat_k + dG_k``."""
    W = np.asarray(W, dtype=complex)
    e = np.asarray(e, dtype=complex)
    dG = np.asarray(dG, dtype=complex)
    K = scene.k_users
    rates = np.empty(K)
    for k in range(K):
        sinr = _user_sinr(W, e, scene.h[k], (scene.G_hat[k] + dG[k])[None], k, scene.noise_power[k])
        rates[k] = np.log2(1.0 + sinr[0])
    return rates


def _sinr_gradient(W, e, h_k, G_k, k, noise):
    """d SINR / d conj(G) for a stack of cascades."""
    g = h_k.conj()[None, :] + np.einsum("m,smn->sn", e.conj(), G_k)
    s = g @ W
    p = np.abs(s) ** 2
    num = p[:, k]
    den = p.sum(axis=1) - num + noise
    # d|s_j|^2 / d conj(G) = s_j e w_j^H
    dnum = s[:, k, None, None] * np.einsum("m,n->mn", e, W[:, k].conj())[None]
    mask = np.ones(W.shape[1], bool)
    mask[k] = False
    dden = np.einsum("sj,m,nj->smn", s[:, mask], e, W[:, mask].conj())
    return (dnum * den[:, None, None] - num[:, None, None] * dden) / (den**2)[:, None, None]


def _descend(W, e, scene, k, xi, starts, iters, step):
    """Projected normalised-gradient descent on user k's SINR from each start."""
    G_hat = scene.G_hat[k]
    dG = starts.copy()
    best = _user_sinr(W, e, scene.h[k], G_hat[None] + dG, k, scene.noise_power[k])
    best_dG = dG.copy()
    for t in range(1, iters + 1):
        grad = _sinr_gradient(W, e, scene.h[k], G_hat[None] + dG, k, scene.noise_power[k])
        gn = np.linalg.norm(grad.reshape(len(dG), -1), axis=1)
        direction = grad / np.where(gn > 0, gn, 1.0)[:, None, None]
        dG = _project(dG - step * xi / math.sqrt(t) * direction, xi)
        val = _user_sinr(W, e, scene.h[k], G_hat[None] + dG, k, scene.noise_power[k])
        better = val < best
        best = np.where(better, val, best)
        best_dG[better] = dG[better]
    i = int(np.argmin(best))
    return float(best[i]), best_dG[i]


def worst_case_certificate(W, e, scene: ChannelScene, gamma, n_samples: int = 500, seed: int = 0,
                           descent_iters: int = 100, descent_starts: int = 10, step: float = 0.1,
                           tol: float = 1e-3) -> RobustnessReport:
    """Search each user's error ball for the lowest achievable rate.

    Evaluates the zero error, ``n_samples`` ball points (half on the
    boundary, half inside), then refines with multistart projected descent
    started from the worst sample and random boundary points.  A violation
    is any evaluated point with rate below ``gamma_k - tol``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    W = np.asarray(W, dtype=complex)
    e = np.asarray(e, dtype=complex)
    K, M, N = scene.k_users, scene.m_elements, scene.n_antennas
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (K,))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A3]))
    min_rate = np.empty(K)
    worst = np.zeros((K, M, N), complex)
    violations = samples = 0
    for k in range(K):
        xi = float(scene.xi[k])
        nb = n_samples // 2
        pts = np.concatenate([
            np.zeros((1, M, N), complex),
            sample_error_ball(xi, M, N, "boundary", rng, count=nb),
            sample_error_ball(xi, M, N, "interior", rng, count=n_samples - nb),
        ])
        sinr = _user_sinr(W, e, scene.h[k], scene.G_hat[k][None] + pts, k, scene.noise_power[k])
        rates = np.log2(1.0 + sinr)
        violations += int(np.sum(rates < g[k] - tol))
        samples += len(rates)
        i = int(np.argmin(rates))
        best, best_dG = float(rates[i]), pts[i]
        if xi > 0 and descent_starts > 0 and descent_iters > 0:
            starts = np.concatenate([pts[i][None], sample_error_ball(xi, M, N, "boundary", rng, count=descent_starts - 1)])
            s_min, s_dG = _descend(W, e, scene, k, xi, starts, descent_iters, step)
            r = math.log2(1.0 + s_min)
            samples += 1
            if r < g[k] - tol:
                violations += 1
            if r < best:
                best, best_dG = r, s_dG
        min_rate[k] = best
        worst[k] = best_dG
    return RobustnessReport(min_rate=min_rate, violations=violations, samples=samples, worst_dG=worst)


def error_variance(scene: ChannelScene) -> np.ndarray:
    """Per-entry error variance delta_g^2 ||vec(G_hat_k)||^2 for each user."""
    return scene.delta_g**2 * np.array([float(np.vdot(G, G).real) for G in scene.G_hat])


def empirical_outage(W, e, scene: ChannelScene, gamma, n_draws: int = 2000, seed: int = 0,
                     tol: float = RATE_TOL) -> float:
    """Fraction of unclipped Gaussian error draws where some user misses its target."""
    if n_draws < 100:
        raise ValueError("n_draws must be >= 100")
    W = np.asarray(W, dtype=complex)
    e = np.asarray(e, dtype=complex)
    K, M, N = scene.k_users, scene.m_elements, scene.n_antennas
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (K,))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0C7]))
    var = error_variance(scene)
    miss = np.zeros(n_draws, bool)
    for k in range(K):
        dG = math.sqrt(var[k]) * _complex_normal(rng, (n_draws, M, N))
        sinr = _user_sinr(W, e, scene.h[k], scene.G_hat[k][None] + dG, k, scene.noise_power[k])
        miss |= np.log2(1.0 + sinr) < g[k] - tol
    return float(miss.mean())

"""Zipf popularity, content placement and backhaul cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CachePlacement:
    popularity: np.ndarray
    placement: np.ndarray
    storage: float
    zipf: float

    @property
    def n_files(self) -> int:
        return len(self.popularity)

    def miss_probability(self) -> float:
        return float(np.sum((1.0 - self.placement) * self.popularity))


def zipf_popularity(n_files: int, skew: float) -> np.ndarray:
    """b_f = f^-skew / sum_i i^-skew for f = 1..n_files."""
    if n_files < 1:
        raise ValueError("n_files must be >= 1")
    if skew < 0:
        raise ValueError("skew must be >= 0")
    w = np.arange(1, n_files + 1, dtype=float) ** (-float(skew))
    return w / w.sum()


def solve_content_placement(popularity: np.ndarray, storage: float) -> np.ndarray:
    """Minimise sum_f (1 - c_f) b_f over c in [0,1]^F with sum c <= storage.

    The objective is linear, so the optimum caches files greedily by
    popularity; ties go to the lower index and the last file may be fractional.
    """
    b = np.asarray(popularity, dtype=float)
    if storage < 0:
        raise ValueError("storage must be >= 0")
    c = np.zeros_like(b)
    budget = float(storage)
    for f in np.argsort(-b, kind="stable"):
        if budget <= 0.0:
            break
        c[f] = min(1.0, budget)
        budget -= c[f]
    return c


def backhaul_cost(placement: np.ndarray, popularity: np.ndarray, delivery_rates, n_users: int | None = None) -> float:
    """sum_f sum_k (1 - c_f) b_f R0_k.

    ``delivery_rates`` may be a scalar (shared by all ``n_users``) or a length-K vector.
    """
    c = np.asarray(placement, dtype=float)
    b = np.asarray(popularity, dtype=float)
    if c.shape != b.shape:
        raise ValueError(f"placement {c.shape} vs popularity {b.shape}")
    r = np.atleast_1d(np.asarray(delivery_rates, dtype=float))
    if r.size == 1 and n_users is not None:
        r = np.full(n_users, r[0])
    elif n_users is not None and r.size != n_users:
        raise ValueError(f"{r.size} delivery rates for {n_users} users")
    return float(np.sum((1.0 - c) * b) * np.sum(r))


def uniform_placement(n_files: int, storage: float) -> np.ndarray:
    """Equal caching probability storage/F for every file (capped at 1)."""
    return np.full(n_files, min(1.0, storage / n_files))


def make_placement(n_files: int, skew: float, storage: float, scheme: str = "OC") -> CachePlacement:
    b = zipf_popularity(n_files, skew)
    if scheme == "OC":
        c = solve_content_placement(b, storage)
    elif scheme == "UC":
        c = uniform_placement(n_files, storage)
    else:
        raise ValueError(f"unknown caching scheme {scheme!r}")
    return CachePlacement(popularity=b, placement=c, storage=float(storage), zipf=float(skew))

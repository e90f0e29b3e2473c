"""Scene geometry, Rician fading channels and bounded cascaded-channel errors."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, gammaincinv

# ULA axes: BS array along y, IRS along x (elements on a wall parallel to x-z).
BS_AXIS = np.array([0.0, 1.0, 0.0])
IRS_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class SceneConfig:
    n_antennas: int = 6
    m_elements: int = 6
    k_users: int = 3
    pos_bs: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pos_irs: tuple[float, float, float] = (50.0, 10.0, 2.0)
    user_disc_center: tuple[float, float, float] = (45.0, 0.0, 0.0)
    user_disc_radius: float = 5.0
    ple_direct: float = 4.0
    ple_bs_irs: float = 2.2
    ple_irs_ue: float = 2.0
    pl_ref_db: float = -30.0
    rician_br_db: float = 10.0
    rician_ru_db: float = 10.0
    rician_bu_db: float = 1.0
    noise_dbm: float = -80.0
    bandwidth_hz: float = 10e6
    spacing_wl: float = 0.5
    seed: int = 0
    # explicit user positions (K x 3); drawn from the disc when None
    user_positions: tuple | None = None

    def validate(self) -> None:
        for name in ("n_antennas", "m_elements", "k_users"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("ple_direct", "ple_bs_irs", "ple_irs_ue"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("rician_br_db", "rician_ru_db", "rician_bu_db"):
            if math.isnan(getattr(self, name)):
                raise ValueError(f"{name} is NaN; Rician mixture undefined")
        if self.user_disc_radius < 0:
            raise ValueError("user_disc_radius must be >= 0")
        if self.spacing_wl <= 0:
            raise ValueError("spacing_wl must be > 0")

    @property
    def noise_power_w(self) -> float:
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)


_TUPLE_KEYS = {"pos_bs", "pos_irs", "user_disc_center"}
_INT_KEYS = {"n_antennas", "m_elements", "k_users", "seed"}


def parse_scene_values(values: dict[str, str]) -> SceneConfig:
    """Build a SceneConfig from raw ``key -> text`` pairs (unknown keys rejected)."""
    known = {f.name for f in fields(SceneConfig)} - {"user_positions"}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise KeyError(f"unknown scene key {key!r}")
        if key in _TUPLE_KEYS:
            parts = [float(p) for p in raw.replace(",", " ").split()]
            if len(parts) != 3:
                raise ValueError(f"{key} needs 3 coordinates, got {raw!r}")
            kwargs[key] = tuple(parts)
        elif key in _INT_KEYS:
            kwargs[key] = int(raw)
        else:
            kwargs[key] = float(raw)
    cfg = SceneConfig(**kwargs)
    cfg.validate()
    return cfg


def load_scene_config(path: str | Path) -> SceneConfig:
    """Read a flat ``key = value`` scene file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string("[scene]\n" + Path(path).read_text())
    return parse_scene_values(dict(parser["scene"]))


@dataclass
class ChannelScene:
    """All channels of one drop.

    Arrays are stacked over users: ``h`` is K x N (row k is h_k), ``h_r`` is
    K x M, and ``G``/``G_hat``/``dG`` are K x M x N.  ``G_hat = G - dG`` is the
    estimate known to the transmitter; the direct channels are exact.
    """

    h: np.ndarray
    H_br: np.ndarray
    h_r: np.ndarray
    G: np.ndarray
    G_hat: np.ndarray
    dG: np.ndarray
    xi: np.ndarray
    noise_power: np.ndarray
    delta_g: float = 0.0
    outage: float = 0.05
    bandwidth_hz: float = 10e6
    user_positions: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_antennas(self) -> int:
        return self.h.shape[1]

    @property
    def m_elements(self) -> int:
        return self.H_br.shape[0]

    @property
    def k_users(self) -> int:
        return self.h.shape[0]

    def normalized(self) -> ChannelScene:
        """Same scene with every user's channels divided by its noise std.

        SINR and transmit power are unchanged; solvers see O(1) numbers.
        """
        s = 1.0 / np.sqrt(self.noise_power)
        return replace(
            self,
            h=self.h * s[:, None],
            h_r=self.h_r * s[:, None],
            G=self.G * s[:, None, None],
            G_hat=self.G_hat * s[:, None, None],
            dG=self.dG * s[:, None, None],
            xi=self.xi * s,
            noise_power=np.ones_like(self.noise_power),
        )


def inverse_chi2_cdf(dof: int, p: float) -> float:
    """Quantile of the chi-square distribution with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return float(2.0 * gammaincinv(0.5 * dof, p))


def error_radius(delta_g: float, G_hat: np.ndarray, outage: float) -> float:
    """Radius of the CSI error ball covering 1 - outage of the Gaussian error mass.

    The per-entry error variance is ``delta_g**2 * ||vec(G_hat)||**2``, so
    ``||dG||_F**2`` is that variance over two times a chi-square with 2MN dof.
    """
    if not 0.0 < outage < 1.0:
        raise ValueError("outage must lie in (0, 1)")
    if not 0.0 <= delta_g < 1.0:
        raise ValueError("delta_g must lie in [0, 1)")
    G_hat = np.atleast_2d(G_hat)
    dof = 2 * G_hat.size
    eps2 = delta_g**2 * float(np.vdot(G_hat, G_hat).real)
    return math.sqrt(0.5 * eps2 * inverse_chi2_cdf(dof, 1.0 - outage))


def cascaded_channel(h_rk: np.ndarray, H_br: np.ndarray) -> np.ndarray:
    """diag(h_rk^H) @ H_br."""
    h_rk = np.asarray(h_rk)
    H_br = np.asarray(H_br)
    if h_rk.ndim != 1 or H_br.ndim != 2 or H_br.shape[0] != h_rk.shape[0]:
        raise ValueError(f"shape mismatch: h_rk {h_rk.shape}, H_br {H_br.shape}")
    return np.conj(h_rk)[:, None] * H_br


def ula_response(n: int, axis: np.ndarray, direction: np.ndarray, spacing_wl: float) -> np.ndarray:
    """Far-field ULA response toward ``direction`` (need not be unit length)."""
    u = direction / np.linalg.norm(direction)
    return np.exp(2j * np.pi * spacing_wl * np.arange(n) * float(axis @ u))


def _rician(rng: np.random.Generator, los: np.ndarray, k_db: float, gain: float) -> np.ndarray:
    # expit gives K/(K+1) and 1/(K+1) without overflow for huge K in dB
    x = k_db * math.log(10.0) / 10.0
    w_los, w_nlos = float(expit(x)), float(expit(-x))
    scatter = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / math.sqrt(2.0)
    return math.sqrt(gain) * (math.sqrt(w_los) * los + math.sqrt(w_nlos) * scatter)


def _path_gain(cfg: SceneConfig, d: float, exponent: float) -> float:
    return 10.0 ** (cfg.pl_ref_db / 10.0) * d ** (-exponent)


def _user_positions(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.user_positions is not None:
        pos = np.asarray(cfg.user_positions, dtype=float).reshape(cfg.k_users, 3)
        return pos
    r = cfg.user_disc_radius * np.sqrt(rng.uniform(size=cfg.k_users))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=cfg.k_users)
    c = np.asarray(cfg.user_disc_center, dtype=float)
    return np.column_stack([c[0] + r * np.cos(phi), c[1] + r * np.sin(phi), np.full(cfg.k_users, c[2])])


def _check_geometry(points: np.ndarray) -> None:
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if np.linalg.norm(points[i] - points[j]) < 1e-9:
                raise ValueError(f"coincident nodes at {points[i].tolist()}")


def draw_nominal_error(
    G: np.ndarray, z: np.ndarray, delta_g: float, outage: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Place a Gaussian error draw ``z`` inside the ball around the estimate.

    Returns ``(dG, G_hat, xi)`` with ``G_hat = G - dG`` and
    ``||dG||_F <= xi = error_radius(delta_g, G_hat)``.  The draw is scaled to
    per-entry std ``delta_g * ||G||_F`` and shrunk radially if it leaves the ball.
    """
    if delta_g == 0.0:
        return np.zeros_like(G), G.copy(), 0.0

    def slack(s: float) -> float:
        return error_radius(delta_g, G - s * z, outage) - s * np.linalg.norm(z)

    s = delta_g * np.linalg.norm(G)
    if slack(s) < 0.0:
        lo, hi = 0.0, s
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if slack(mid) >= 0.0:
                lo = mid
            else:
                hi = mid
        s = lo
    dG = s * z
    G_hat = G - dG
    return dG, G_hat, error_radius(delta_g, G_hat, outage)


def build_scene(
    h: np.ndarray,
    H_br: np.ndarray,
    h_r: np.ndarray,
    noise_power: float | np.ndarray,
    delta_g: float = 0.0,
    outage: float = 0.05,
    seed: int = 0,
    bandwidth_hz: float = 10e6,
    user_positions: np.ndarray | None = None,
) -> ChannelScene:
    """Assemble a scene from given physical channels, drawing the CSI errors."""
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    h_r = np.atleast_2d(np.asarray(h_r, dtype=complex))
    H_br = np.atleast_2d(np.asarray(H_br, dtype=complex))
    K, N = h.shape
    M = H_br.shape[0]
    if H_br.shape != (M, N) or h_r.shape != (K, M):
        raise ValueError(f"inconsistent shapes h {h.shape}, H_br {H_br.shape}, h_r {h_r.shape}")
    if not 0.0 < outage < 1.0:
        raise ValueError("outage must lie in (0, 1)")
    if not 0.0 <= delta_g < 1.0:
        raise ValueError("delta_g must lie in [0, 1)")
    noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (K,)).copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE44]))
    G = np.stack([cascaded_channel(h_r[k], H_br) for k in range(K)])
    dG = np.zeros_like(G)
    G_hat = np.empty_like(G)
    xi = np.zeros(K)
    for k in range(K):
        z = (rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))) / math.sqrt(2.0)
        dG[k], G_hat[k], xi[k] = draw_nominal_error(G[k], z, delta_g, outage)
    return ChannelScene(
        h=h, H_br=H_br, h_r=h_r, G=G, G_hat=G_hat, dG=dG, xi=xi,
        noise_power=noise, delta_g=float(delta_g), outage=float(outage),
        bandwidth_hz=float(bandwidth_hz), user_positions=user_positions,
    )


def generate_scene(
    config: SceneConfig, seed: int | None = None, delta_g: float = 0.0, outage: float = 0.05
) -> ChannelScene:
    """Draw one Rician drop for ``config``; fully determined by ``seed``.

    Fading depends on ``seed`` only, so sweeping ``delta_g`` reuses the same
    channels and the same normalized error direction.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC4A]))
    N, M, K = config.n_antennas, config.m_elements, config.k_users
    bs = np.asarray(config.pos_bs, dtype=float)
    irs = np.asarray(config.pos_irs, dtype=float)
    users = _user_positions(config, rng)
    _check_geometry(np.vstack([bs, irs, users]))

    sp = config.spacing_wl
    d_br = np.linalg.norm(irs - bs)
    los_br = np.outer(ula_response(M, IRS_AXIS, bs - irs, sp), ula_response(N, BS_AXIS, irs - bs, sp).conj())
    H_br = _rician(rng, los_br, config.rician_br_db, _path_gain(config, d_br, config.ple_bs_irs))

    h = np.empty((K, N), dtype=complex)
    h_r = np.empty((K, M), dtype=complex)
    for k, u in enumerate(users):
        los_d = ula_response(N, BS_AXIS, u - bs, sp)
        h[k] = _rician(rng, los_d, config.rician_bu_db, _path_gain(config, np.linalg.norm(u - bs), config.ple_direct))
        los_r = ula_response(M, IRS_AXIS, u - irs, sp)
        h_r[k] = _rician(rng, los_r, config.rician_ru_db, _path_gain(config, np.linalg.norm(u - irs), config.ple_irs_ue))

    return build_scene(
        h, H_br, h_r, config.noise_power_w, delta_g=delta_g, outage=outage, seed=seed,
        bandwidth_hz=config.bandwidth_hz, user_positions=users,
    )

"""Far/near-field channel synthesis for the transmissive-RIS uplink.

Geometry convention: the RIS is a UPA in the horizontal plane at
``cfg.ris_position`` with its broadside pointing down (-z) toward the ground
square where the users live.  Rows (index m_r, spacing d_r) run along x,
columns (index m_c, spacing d_c) along y.  For a user at ground position u
the arrival direction d = u - ris has polar angle theta measured from
broadside (cos theta = -d_z/|d|) and azimuth psi = atan2(d_y, d_x), so that
sin(theta)cos(psi) and sin(theta)sin(psi) are the x and y direction cosines
entering the steering ramps.

Element (m_c, m_r) maps to flat index (m_r - 1) * M_c + (m_c - 1); the
steering vector is kron(row ramp, column ramp) and the near-field vector is
flattened the same way, so cascading is elementwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .config import SPEED_OF_LIGHT, SystemConfig, rayleigh_distance
from .errors import GeometryError

__all__ = [
    "ChannelRealization", "rayleigh_distance", "upa_steering",
    "far_field_channel", "near_field_channel", "cascade", "modulation_gap",
    "snr_and_rate", "user_angles", "draw_user_positions",
    "synthesize_channels", "export_channels_csv",
]


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of every channel in the scenario.

    g[k, n] is the user->RIS vector, h[n] the RIS->antenna vector and
    v[k, n] the cascaded vector defined so that the scalar end-to-end
    channel for coefficient vector c is v[k, n]^H c.  All vectors have
    length M = M_c * M_r.  nu[k] is the SNR gap of user k's BER target.
    Instances are immutable and safe to share across workers.
    """

    cfg: SystemConfig
    g: np.ndarray            # (K, N, M) complex
    h: np.ndarray            # (N, M) complex
    v: np.ndarray            # (K, N, M) complex
    nu: np.ndarray           # (K,) float
    user_positions: np.ndarray   # (K, 3)
    distances: np.ndarray    # (K,)
    thetas: np.ndarray       # (K,)
    psis: np.ndarray         # (K,)
    rho: complex
    seed: int | None

    def __post_init__(self):
        for arr in ("g", "h", "v", "nu", "user_positions", "distances",
                    "thetas", "psis"):
            getattr(self, arr).setflags(write=False)


def upa_steering(theta: float, psi: float, cfg: SystemConfig) -> np.ndarray:
    """Planar-wave steering vector of the UPA for arrival angles (theta, psi).

    Entries are unit modulus and the first entry is 1.
    """
    fc_over_c = cfg.carrier_freq / SPEED_OF_LIGHT
    ux = math.sin(theta) * math.cos(psi)
    uy = math.sin(theta) * math.sin(psi)
    ramp_r = np.exp(
        -2j * math.pi * fc_over_c * cfg.element_spacing_r * ux * np.arange(cfg.ris_cols)
    )
    ramp_c = np.exp(
        -2j * math.pi * fc_over_c * cfg.element_spacing_c * uy * np.arange(cfg.ris_rows)
    )
    return np.kron(ramp_r, ramp_c)


def user_angles(position, cfg: SystemConfig):
    """(theta, psi, distance) of a user position w.r.t. the RIS broadside."""
    d = np.asarray(position, dtype=float) - cfg.ris_position
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise GeometryError("user is at the RIS position")
    theta = math.acos(min(1.0, max(-1.0, -d[2] / dist)))
    psi = math.atan2(d[1], d[0])
    return theta, psi, dist


def far_field_channel(k: int, n: int, cfg: SystemConfig, rng: np.random.Generator,
                      position=None) -> np.ndarray:
    """Rician user->RIS channel of user k on subcarrier n.

    The LoS steering part is frequency flat; only the delay phase
    exp(-j 2 pi n W d/c) moves with the subcarrier index.  The NLoS part is
    an i.i.d. standard CSCG draw from ``rng`` (one fresh draw per call).
    ``position`` defaults to ``cfg.user_positions[k]``.
    """
    if position is None:
        if cfg.user_positions is None:
            raise GeometryError("no user position available: pass `position` or "
                                "set cfg.user_positions")
        position = cfg.user_positions[k]
    theta, psi, dist = user_angles(position, cfg)
    if dist <= cfg.rayleigh_distance:
        raise GeometryError(
            f"user distance {dist:.4g} m is not beyond the Rayleigh distance "
            f"{cfg.rayleigh_distance:.4g} m; planar-wave model invalid"
        )
    los = upa_steering(theta, psi, cfg)
    m = cfg.num_elements
    nlos = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / math.sqrt(2.0)
    kappa = cfg.rician_factor
    delay_phase = np.exp(-2j * math.pi * n * cfg.subcarrier_bandwidth * dist / SPEED_OF_LIGHT)
    scale = math.sqrt(cfg.ref_gain / dist ** cfg.pathloss_exp)
    return scale * (
        math.sqrt(kappa / (1.0 + kappa)) * delay_phase * los
        + math.sqrt(1.0 / (1.0 + kappa)) * nlos
    )


def _element_center_distances(cfg: SystemConfig) -> np.ndarray:
    """Distance of each element to the RIS centre, in flat element order."""
    delta_c = (2.0 * np.arange(1, cfg.ris_rows + 1) - cfg.ris_rows - 1) / 2.0
    delta_r = (2.0 * np.arange(1, cfg.ris_cols + 1) - cfg.ris_cols - 1) / 2.0
    d2 = (delta_c[None, :] * cfg.element_spacing_c) ** 2 \
        + (delta_r[:, None] * cfg.element_spacing_r) ** 2
    return np.sqrt(d2).reshape(-1)  # (m_r, m_c) row-major matches kron order


def near_field_channel(n: int, cfg: SystemConfig, rho: complex = 1.0) -> np.ndarray:
    """Spherical-wave LoS RIS->antenna channel on subcarrier n.

    The per-element phase uses the exact element-to-antenna distance
    r = sqrt(r_tilde^2 + d_hat^2); entries carry the +j sign left by the
    conjugate-transpose definition of the LoS vector.
    """
    r_tilde = cfg.antenna_offset
    if cfg.num_elements > 1 and r_tilde >= cfg.rayleigh_distance:
        raise GeometryError(
            f"antenna offset {r_tilde:.4g} m is not below the Rayleigh distance "
            f"{cfg.rayleigh_distance:.4g} m; spherical-wave model invalid"
        )
    d_hat = _element_center_distances(cfg)
    r = np.sqrt(r_tilde ** 2 + d_hat ** 2)
    fc_over_c = cfg.carrier_freq / SPEED_OF_LIGHT
    h_los = np.exp(+2j * math.pi * fc_over_c * (r - r_tilde))
    delay_phase = np.exp(-2j * math.pi * n * cfg.subcarrier_bandwidth * r_tilde / SPEED_OF_LIGHT)
    return rho * delay_phase * h_los


def cascade(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Cascaded vector v with v^H c = h^H diag(g) c, i.e. v = h * conj(g).

    Broadcasts over leading axes, so cascade(real.g, real.h) fills all
    (k, n) pairs at once.
    """
    if g.shape[-1] != h.shape[-1]:
        raise ValueError(f"element-count mismatch: {g.shape[-1]} vs {h.shape[-1]}")
    return h * np.conj(g)


def modulation_gap(ber: float) -> float:
    """SNR gap nu = -1.5 / ln(5 BER) of an uncoded M-QAM BER target."""
    if not 0.0 < ber < 0.2:
        raise ValueError(f"BER target must lie in (0, 0.2), got {ber}")
    return -1.5 / math.log(5.0 * ber)


def snr_and_rate(p: float, v: np.ndarray, c: np.ndarray, nu: float,
                 cfg: SystemConfig):
    """(SNR, bit rate) of one user on one subcarrier at transmit power p."""
    gain = abs(np.vdot(v, c)) ** 2
    gamma = p * gain * nu / (cfg.noise_psd * cfg.subcarrier_bandwidth)
    rate = cfg.subcarrier_bandwidth * math.log2(1.0 + gamma)
    return gamma, rate


def draw_user_positions(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform positions in the ground square centred under the RIS."""
    half = cfg.square_side / 2.0
    xy = rng.uniform(-half, half, size=(cfg.num_users, 2))
    return np.column_stack([xy, np.zeros(cfg.num_users)])


def synthesize_channels(cfg: SystemConfig, seed: int | None = None) -> ChannelRealization:
    """Draw a full channel realization; pure function of (cfg, seed).

    Draw order (fixed for reproducibility): user positions if the config has
    none, then the near-field complex gain rho, then the NLoS vectors in
    (user, subcarrier) order.
    """
    if seed is None:
        seed = cfg.rng_seed
    rng = np.random.default_rng(seed)
    K, N, M = cfg.num_users, cfg.num_subcarriers, cfg.num_elements

    if cfg.user_positions is not None:
        positions = np.array(cfg.user_positions, dtype=float)
    else:
        positions = draw_user_positions(cfg, rng)

    rho = complex(rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2.0)

    h = np.empty((N, M), dtype=complex)
    for n in range(N):
        h[n] = near_field_channel(n, cfg, rho=rho)

    g = np.empty((K, N, M), dtype=complex)
    thetas = np.empty(K)
    psis = np.empty(K)
    dists = np.empty(K)
    for k in range(K):
        thetas[k], psis[k], dists[k] = user_angles(positions[k], cfg)
        for n in range(N):
            g[k, n] = far_field_channel(k, n, cfg, rng, position=positions[k])

    v = cascade(g, h[None, :, :])
    nu = np.array([modulation_gap(b) for b in cfg.ber_target])
    return ChannelRealization(
        cfg=cfg, g=g, h=h, v=v, nu=nu, user_positions=positions,
        distances=dists, thetas=thetas, psis=psis, rho=rho, seed=seed,
    )


def export_channels_csv(real: ChannelRealization, path) -> None:
    """Write the realization as rows (k, n, m, re_g, im_g, re_h, im_h)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "n", "m", "re_g", "im_g", "re_h", "im_h"])
        K, N, M = real.g.shape
        for k in range(K):
            for n in range(N):
                for m in range(M):
                    writer.writerow([
                        k, n, m,
                        repr(float(real.g[k, n, m].real)), repr(float(real.g[k, n, m].imag)),
                        repr(float(real.h[n, m].real)), repr(float(real.h[n, m].imag)),
                    ])

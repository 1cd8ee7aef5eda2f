"""Scenario configuration for the transmissive-RIS uplink simulator.

All quantities are stored in SI units (Hz, W, m, linear gains).  The default
scenario mirrors the desk-scale setup used throughout the test suite:
K=5 users, N=20 subcarriers over B=20 MHz, a 5x5 half-wavelength RIS at
(0, 0, 15 m) with the receiving antenna 0.2 m behind it, 3 GHz carrier,
200 mW per-user budget, -174 dBm/Hz noise, BER target 1e-3 and a 10 bit/s
per-user rate floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

SPEED_OF_LIGHT = 3.0e8  # m/s


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def dbm_per_hz_to_watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def rayleigh_distance(aperture: float, wavelength: float) -> float:
    """Far/near boundary 2*D^2/lambda for an array of aperture D."""
    if aperture < 0 or wavelength <= 0:
        raise ConfigError(
            f"rayleigh_distance needs aperture >= 0 and wavelength > 0, "
            f"got D={aperture}, lambda={wavelength}"
        )
    return 2.0 * aperture ** 2 / wavelength


@dataclass(frozen=True)
class SystemConfig:
    """Immutable bundle of every scenario parameter.

    Per-user quantities (``max_power``, ``ber_target``, ``min_rate``) are
    arrays of length ``num_users``; scalars are broadcast on construction.
    ``user_positions`` may be None, in which case each channel realization
    draws positions uniformly in the ``square_side`` x ``square_side``
    ground square centred under the RIS.
    """

    num_users: int = 5
    num_subcarriers: int = 20
    ris_rows: int = 5          # M_c, column direction (y axis)
    ris_cols: int = 5          # M_r, row direction (x axis)
    element_spacing_c: float = 0.05
    element_spacing_r: float = 0.05
    total_bandwidth: float = 20e6
    carrier_freq: float = 3e9
    noise_psd: float = dbm_per_hz_to_watt(-174.0)
    max_power: np.ndarray = field(default_factory=lambda: np.full(5, 0.2))
    ber_target: np.ndarray = field(default_factory=lambda: np.full(5, 1e-3))
    min_rate: np.ndarray = field(default_factory=lambda: np.full(5, 10.0))
    pathloss_exp: float = 3.0
    ref_gain: float = db_to_linear(-30.0)
    rician_factor: float = db_to_linear(3.0)
    ris_position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 15.0]))
    antenna_offset: float = 0.2
    square_side: float = 50.0
    user_positions: np.ndarray | None = None
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("max_power", "ber_target", "min_rate"):
            val = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if val.size == 1:
                val = np.full(self.num_users, val[0])
            if val.shape != (self.num_users,):
                raise ConfigError(f"{name} must be scalar or length-{self.num_users}")
            object.__setattr__(self, name, val)
        object.__setattr__(
            self, "ris_position", np.asarray(self.ris_position, dtype=float).reshape(3)
        )
        if self.user_positions is not None:
            pos = np.asarray(self.user_positions, dtype=float)
            if pos.shape != (self.num_users, 3):
                raise ConfigError("user_positions must have shape (K, 3)")
            object.__setattr__(self, "user_positions", pos)
        self.validate()

    # ---- derived quantities -------------------------------------------------

    @property
    def num_elements(self) -> int:
        return self.ris_rows * self.ris_cols

    @property
    def subcarrier_bandwidth(self) -> float:
        """W = B/N."""
        return self.total_bandwidth / self.num_subcarriers

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def aperture(self) -> float:
        """Diagonal aperture of the UPA."""
        return math.hypot(
            (self.ris_rows - 1) * self.element_spacing_c,
            (self.ris_cols - 1) * self.element_spacing_r,
        )

    @property
    def rayleigh_distance(self) -> float:
        return rayleigh_distance(self.aperture, self.wavelength)

    # ---- validation ---------------------------------------------------------

    def validate(self) -> None:
        if self.num_users < 1 or self.num_subcarriers < 1:
            raise ConfigError("need at least one user and one subcarrier")
        if self.ris_rows < 1 or self.ris_cols < 1:
            raise ConfigError("RIS needs at least one element")
        for name in ("element_spacing_c", "element_spacing_r", "total_bandwidth",
                     "carrier_freq", "noise_psd", "pathloss_exp", "ref_gain",
                     "rician_factor", "antenna_offset", "square_side"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        if np.any(self.max_power <= 0):
            raise ConfigError("max_power must be strictly positive")
        if np.any(self.min_rate < 0):
            raise ConfigError("min_rate must be nonnegative")
        if np.any(self.ber_target <= 0) or np.any(self.ber_target >= 0.2):
            raise ConfigError("ber_target must lie in (0, 0.2)")
        rd = self.rayleigh_distance
        if self.num_elements > 1 and self.antenna_offset >= rd:
            raise ConfigError(
                f"antenna offset {self.antenna_offset} m is not below the "
                f"Rayleigh distance {rd:.4g} m; the spherical-wave model does not apply"
            )
        if self.user_positions is not None:
            d = np.linalg.norm(self.user_positions - self.ris_position, axis=1)
            if np.any(d <= rd):
                raise ConfigError(
                    f"user distance {d.min():.4g} m does not exceed the "
                    f"Rayleigh distance {rd:.4g} m; planar-wave model does not apply"
                )

    def with_overrides(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


def default_config(**overrides) -> SystemConfig:
    """Default desk-scale scenario; keyword overrides are applied on top."""
    cfg = SystemConfig()
    if overrides:
        # re-broadcast per-user fields when K changes
        if "num_users" in overrides:
            k = overrides["num_users"]
            for name in ("max_power", "ber_target", "min_rate"):
                if name not in overrides:
                    overrides[name] = np.full(k, np.asarray(getattr(cfg, name))[0])
        cfg = replace(cfg, **overrides)
    return cfg


# ---- flat key=value config files --------------------------------------------

_SCALAR_FLOAT_KEYS = {
    "element_spacing_c", "element_spacing_r", "total_bandwidth", "carrier_freq",
    "noise_psd", "pathloss_exp", "ref_gain", "rician_factor", "antenna_offset",
    "square_side",
}
_INT_KEYS = {"num_users", "num_subcarriers", "ris_rows", "ris_cols", "rng_seed"}
_PER_USER_KEYS = {"max_power", "ber_target", "min_rate"}


def load_config(path) -> SystemConfig:
    """Read a flat ``key = value`` scenario file.

    Lines starting with ``#`` are comments.  Per-user keys accept a single
    value (broadcast) or a comma-separated list; ``ris_position`` takes three
    comma-separated coordinates and ``user_positions`` K semicolon-separated
    ``x,y,z`` triplets.
    """
    raw: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()

    kwargs = {}
    for key, value in raw.items():
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _SCALAR_FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _PER_USER_KEYS:
                kwargs[key] = np.array([float(v) for v in value.split(",")])
            elif key == "ris_position":
                kwargs[key] = np.array([float(v) for v in value.split(",")])
            elif key == "user_positions":
                rows = [r for r in value.split(";") if r.strip()]
                kwargs[key] = np.array(
                    [[float(v) for v in r.split(",")] for r in rows]
                )
            else:
                raise ConfigError(f"{path}: unknown config key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key!r}: {exc}") from exc
    return default_config(**kwargs)


def save_config(cfg: SystemConfig, path) -> None:
    """Write ``cfg`` in the same flat format ``load_config`` reads."""
    lines = []
    for key in sorted(_INT_KEYS):
        lines.append(f"{key} = {int(getattr(cfg, key))}")
    for key in sorted(_SCALAR_FLOAT_KEYS):
        lines.append(f"{key} = {float(getattr(cfg, key))!r}")
    for key in sorted(_PER_USER_KEYS):
        lines.append(f"{key} = {','.join(repr(float(v)) for v in getattr(cfg, key))}")
    lines.append(f"ris_position = {','.join(repr(float(v)) for v in cfg.ris_position)}")
    if cfg.user_positions is not None:
        rows = ";".join(",".join(repr(float(v)) for v in row)
                        for row in cfg.user_positions)
        lines.append(f"user_positions = {rows}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

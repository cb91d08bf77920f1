"""Indoor-office channel model: geometry, large-scale gains and slow fading.

Large-scale gains follow the TR 38.901 InH-Office pathloss/LOS model with
log-normal shadowing; they are drawn once per scenario and frozen. Small-scale
fading evolves slot by slot through a first-order IIR filter whose innovation
variance is normalised so the steady-state power of each coefficient is 1.
"""

import json
from dataclasses import dataclass, field

import numpy as np

BS_HEIGHT_M = 3.0
UE_HEIGHT_M = 1.5

# InH-Office pathloss coefficients (auditable/overridable via scenario files).
DEFAULT_PATHLOSS_COEFFS = {
    "los_const": 32.4,
    "los_dist": 17.3,
    "los_freq": 20.0,
    "los_shadow_db": 3.0,
    "nlos_const": 17.3,
    "nlos_dist": 38.3,
    "nlos_freq": 24.9,
    "nlos_shadow_db": 8.03,
}

# Distance floor before log10 so coincident nodes do not blow up the model.
MIN_DIST_M = 1.0


def los_probability(d2d):
    """LOS probability of a link from its 2D (floor) distance in meters."""
    d2d = np.asarray(d2d, dtype=np.float64)
    if np.any(d2d < 0):
        raise ValueError("d2d must be non-negative")
    p = np.where(
        d2d <= 5.0,
        1.0,
        np.where(
            d2d <= 49.0,
            np.exp(-(d2d - 5.0) / 70.8),
            0.54 * np.exp(-(d2d - 49.0) / 211.7),
        ),
    )
    return p if p.ndim else float(p)


def pathloss_db(d3d, fc_ghz, is_los, coeffs=None):
    """InH-Office pathloss in dB (no shadowing) at 3D distance d3d meters."""
    c = coeffs or DEFAULT_PATHLOSS_COEFFS
    d3d = np.asarray(d3d, dtype=np.float64)
    if np.any(d3d <= 0) or fc_ghz <= 0:
        raise ValueError("distance and frequency must be positive")
    d3d = np.maximum(d3d, MIN_DIST_M)
    pl_los = c["los_const"] + c["los_dist"] * np.log10(d3d) + c["los_freq"] * np.log10(fc_ghz)
    if np.all(np.asarray(is_los)):
        out = pl_los
    else:
        pl_nlos = (
            c["nlos_const"] + c["nlos_dist"] * np.log10(d3d) + c["nlos_freq"] * np.log10(fc_ghz)
        )
        out = np.where(np.asarray(is_los), pl_los, np.maximum(pl_los, pl_nlos))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ScenarioGeometry:
    """BS/UE positions and the BS -> candidate-UE association of a deployment."""

    bs_positions: np.ndarray  # (N, 3)
    ue_positions: np.ndarray  # (M, 3)
    association: dict  # bs index -> list of candidate UE indices
    carrier_freq_ghz: float = 6.0
    layout_id: str = "custom"

    def __post_init__(self):
        self.bs_positions = np.asarray(self.bs_positions, dtype=np.float64)
        self.ue_positions = np.asarray(self.ue_positions, dtype=np.float64)
        self.association = {int(k): list(map(int, v)) for k, v in self.association.items()}
        self.validate()

    @property
    def n_bs(self):
        return self.bs_positions.shape[0]

    @property
    def n_ue(self):
        return self.ue_positions.shape[0]

    def validate(self):
        if self.bs_positions.size and not np.allclose(self.bs_positions[:, 2], BS_HEIGHT_M):
            raise ValueError(f"all BS heights must be {BS_HEIGHT_M} m")
        if self.ue_positions.size and not np.allclose(self.ue_positions[:, 2], UE_HEIGHT_M):
            raise ValueError(f"all UE heights must be {UE_HEIGHT_M} m")
        seen = [u for ues in self.association.values() for u in ues]
        if sorted(seen) != list(range(self.n_ue)):
            raise ValueError("every UE must appear in exactly one BS candidate list")


@dataclass
class LargeScaleGains:
    """Frozen large-scale linear power gains for one scenario.

    ``g0_ue_full`` holds every BS -> candidate-UE link; episode-level N x N
    matrices are slices of it for the active UE set. The BS -> BS diagonal is
    identically zero (a BS does not interfere with its own sensing).
    """

    g0_ue_full: np.ndarray  # (N, M)
    g0_bs: np.ndarray  # (N, N), zero diagonal
    los_ue: np.ndarray  # (N, M) bool
    los_bs: np.ndarray  # (N, N) bool
    norm_ue: float  # sigma_gU
    norm_bs: float  # sigma_gg
    seed: int | None = None

    def __post_init__(self):
        self.g0_ue_full = np.asarray(self.g0_ue_full, dtype=np.float64)
        self.g0_bs = np.asarray(self.g0_bs, dtype=np.float64)
        if np.any(self.g0_ue_full < 0) or np.any(self.g0_bs < 0):
            raise ValueError("gains must be non-negative")
        if np.any(np.diag(self.g0_bs) != 0.0):
            raise ValueError("BS->BS diagonal must be exactly zero")
        if not (self.norm_ue > 0 and self.norm_bs > 0):
            raise ValueError("normalizers must be positive")

    def active_ue_matrix(self, active_ues):
        """N x N matrix g0[i, j] = gain BS i -> UE of BS j for the active set."""
        idx = np.asarray(active_ues, dtype=np.intp)
        return self.g0_ue_full[:, idx].copy()


def _link_distances(pos_a, pos_b):
    d3d = np.linalg.norm(pos_a[:, None, :] - pos_b[None, :, :], axis=-1)
    d2d = np.linalg.norm(pos_a[:, None, :2] - pos_b[None, :, :2], axis=-1)
    return d2d, d3d


def _draw_gain_matrix(pos_a, pos_b, fc_ghz, rng, coeffs):
    """Draw linear gains for all pos_a -> pos_b links with LOS and shadowing."""
    d2d, d3d = _link_distances(pos_a, pos_b)
    los = rng.random(d2d.shape) < los_probability(d2d)
    pl = pathloss_db(np.maximum(d3d, MIN_DIST_M), fc_ghz, los, coeffs)
    shadow_sigma = np.where(los, coeffs["los_shadow_db"], coeffs["nlos_shadow_db"])
    pl = pl + rng.normal(0.0, 1.0, size=pl.shape) * shadow_sigma
    return np.power(10.0, -pl / 10.0), los


def draw_large_scale_gains(geom, rng, coeffs=None, seed=None):
    """Draw the frozen large-scale gains of a scenario.

    Normalizers are the population standard deviation of all BS->UE gains
    (resp. off-diagonal BS->BS gains) of the full scenario.
    """
    coeffs = coeffs or DEFAULT_PATHLOSS_COEFFS
    g0_ue, los_ue = _draw_gain_matrix(
        geom.bs_positions, geom.ue_positions, geom.carrier_freq_ghz, rng, coeffs
    )
    g0_bs, los_bs = _draw_gain_matrix(
        geom.bs_positions, geom.bs_positions, geom.carrier_freq_ghz, rng, coeffs
    )
    np.fill_diagonal(g0_bs, 0.0)
    norm_ue = float(np.std(g0_ue))
    off_diag = g0_bs[~np.eye(geom.n_bs, dtype=bool)]
    norm_bs = float(np.std(off_diag)) if off_diag.size else 1.0
    if norm_ue == 0.0:
        norm_ue = float(np.mean(g0_ue)) or 1.0
    if norm_bs == 0.0:
        norm_bs = float(np.mean(off_diag)) or 1.0
    return LargeScaleGains(g0_ue, g0_bs, los_ue, los_bs, norm_ue, norm_bs, seed=seed)


def fading_innovation_var(alpha):
    """Innovation variance that gives |h_ss|^2 a unit steady-state mean."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return (1.0 - (1.0 - alpha) ** 2) / alpha**2


@dataclass
class FadingState:
    """Per-link small-scale fading coefficients of one episode."""

    h_ss_ue: np.ndarray  # (N, N) complex
    h_ss_bs: np.ndarray  # (N, N) complex
    alpha: float
    slot_index: int = 0

    @classmethod
    def initial(cls, n_bs, alpha):
        ones = np.ones((n_bs, n_bs), dtype=np.complex128)
        return cls(ones.copy(), ones.copy(), alpha, 0)


def _complex_normal(rng, shape, var):
    s = np.sqrt(var / 2.0)
    return rng.normal(0.0, s, size=shape) + 1j * rng.normal(0.0, s, size=shape)


def step_fading(f, rng):
    """Advance the IIR fading filter one slot: h[n] = (1-a) h[n-1] + a z[n]."""
    var = fading_innovation_var(f.alpha)
    a = f.alpha
    h_ue = (1.0 - a) * f.h_ss_ue + a * _complex_normal(rng, f.h_ss_ue.shape, var)
    h_bs = (1.0 - a) * f.h_ss_bs + a * _complex_normal(rng, f.h_ss_bs.shape, var)
    return FadingState(h_ue, h_bs, f.alpha, f.slot_index + 1)


def effective_gain(g0, h_ss):
    """Instantaneous linear gain g[n] = g0 |h_ss[n]|^2."""
    return np.asarray(g0) * np.abs(np.asarray(h_ss)) ** 2


@dataclass
class Scenario:
    """One deployment: geometry plus frozen large-scale gains."""

    geometry: ScenarioGeometry
    gains: LargeScaleGains
    pathloss_coeffs: dict = field(default_factory=lambda: dict(DEFAULT_PATHLOSS_COEFFS))

    @property
    def n_bs(self):
        return self.geometry.n_bs


def save_scenario(scenario, path):
    """Write a scenario to a JSON file, round-tripping at full float precision."""
    geom = scenario.geometry
    g = scenario.gains
    doc = {
        "layout_id": geom.layout_id,
        "carrier_freq_ghz": geom.carrier_freq_ghz,
        "bs_positions": geom.bs_positions.tolist(),
        "ue_positions": geom.ue_positions.tolist(),
        "association": {str(k): v for k, v in geom.association.items()},
        "g0_ue_full": g.g0_ue_full.tolist(),
        "g0_bs": g.g0_bs.tolist(),
        "los_ue": g.los_ue.astype(int).tolist(),
        "los_bs": g.los_bs.astype(int).tolist(),
        "norm_ue": g.norm_ue,
        "norm_bs": g.norm_bs,
        "seed": g.seed,
        "pathloss_coeffs": scenario.pathloss_coeffs,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_scenario(path):
    with open(path) as fh:
        doc = json.load(fh)
    geom = ScenarioGeometry(
        np.array(doc["bs_positions"]),
        np.array(doc["ue_positions"]),
        {int(k): v for k, v in doc["association"].items()},
        carrier_freq_ghz=doc["carrier_freq_ghz"],
        layout_id=doc["layout_id"],
    )
    gains = LargeScaleGains(
        np.array(doc["g0_ue_full"]),
        np.array(doc["g0_bs"]),
        np.array(doc["los_ue"], dtype=bool),
        np.array(doc["los_bs"], dtype=bool),
        float(doc["norm_ue"]),
        float(doc["norm_bs"]),
        seed=doc.get("seed"),
    )
    return Scenario(geom, gains, pathloss_coeffs=doc["pathloss_coeffs"])

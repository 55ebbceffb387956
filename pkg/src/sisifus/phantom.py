"""Synthetic phantoms with paired ground-truth lifetime and intensity.

A scene is a list of geometric structures (disks and ridges) on an empty
background, each carrying a fluorophore: radiative rate ``k_r``,
non-radiative rate ``k_nr``, relative concentration amplitude and molar
absorptivity.  The ground-truth lifetime is ``1 / (k_r + k_nr)`` of the
topmost structure at each pixel (structures are painted in list order, so
later entries cover earlier ones); the background has zero lifetime and
intensity.

Intensity folds excitation, concentration, absorptivity and quantum yield
into ``gain * concentration * epsilon * k_r * tau`` and is then rescaled so
the brightest pixel hits ``photon_budget`` expected photons; the per-pixel
ratio intensity / concentration therefore stays proportional to
``epsilon * k_r * tau`` with one global constant.

Concentration texture is a smooth field of seeded Gaussian bumps by default;
the ``rough`` mode replaces it with per-pixel noise so that intensity stops
being locally informative about lifetime, the adversarial case for
regression priors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Datacube, Plane

TEXTURES = ("smooth", "rough")


@dataclass(frozen=True)
class Fluorophore:
    """Photophysics of one structure."""

    k_r: float      # radiative rate, 1 / time-unit
    k_nr: float     # non-radiative rate, 1 / time-unit
    amplitude: float = 1.0  # relative concentration
    epsilon: float = 1.0    # molar absorptivity, relative

    def __post_init__(self):
        if not (self.k_r > 0) or self.k_nr < 0:
            raise ValueError("rates must satisfy k_r > 0, k_nr >= 0")
        if self.amplitude <= 0 or self.epsilon <= 0:
            raise ValueError("amplitude and epsilon must be positive")

    @property
    def tau(self) -> float:
        """Excited-state lifetime 1 / (k_r + k_nr)."""
        return 1.0 / (self.k_r + self.k_nr)

    @property
    def quantum_yield(self) -> float:
        """Radiative fraction k_r / (k_r + k_nr), equal to k_r * tau."""
        return self.k_r / (self.k_r + self.k_nr)


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float]
    radius: float
    fluor: Fluorophore

    def mask(self, shape) -> np.ndarray:
        rr, cc = np.mgrid[0:shape[0], 0:shape[1]]
        return (rr - self.center[0]) ** 2 + (cc - self.center[1]) ** 2 <= self.radius**2


@dataclass(frozen=True)
class Ridge:
    start: tuple[float, float]
    end: tuple[float, float]
    width: float
    fluor: Fluorophore

    def mask(self, shape) -> np.ndarray:
        rr, cc = np.mgrid[0:shape[0], 0:shape[1]]
        p0 = np.asarray(self.start, dtype=np.float64)
        d = np.asarray(self.end, dtype=np.float64) - p0
        length_sq = float(d @ d)
        if length_sq == 0:
            dist_sq = (rr - p0[0]) ** 2 + (cc - p0[1]) ** 2
        else:
            t = np.clip(((rr - p0[0]) * d[0] + (cc - p0[1]) * d[1]) / length_sq, 0.0, 1.0)
            dist_sq = (rr - p0[0] - t * d[0]) ** 2 + (cc - p0[1] - t * d[1]) ** 2
        return dist_sq <= (self.width / 2.0) ** 2


@dataclass(frozen=True)
class PhantomScene:
    shape: tuple[int, int]
    structures: tuple
    gain: float = 1.0
    photon_budget: float = 1e4
    texture: str = "smooth"
    seed: int = 0

    def __post_init__(self):
        if len(self.structures) == 0:
            raise ValueError("scene needs at least one structure")
        if self.gain <= 0 or self.photon_budget <= 0:
            raise ValueError("gain and photon_budget must be positive")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}; expected one of {TEXTURES}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "structures", tuple(self.structures))


def texture_field(scene: PhantomScene) -> np.ndarray:
    """Multiplicative concentration texture in roughly [0.7, 1.3] ([0.5, 1.5] rough)."""
    rng = np.random.default_rng(scene.seed)
    rows, cols = scene.shape
    if scene.texture == "rough":
        return rng.uniform(0.5, 1.5, size=scene.shape)
    rr, cc = np.mgrid[0:rows, 0:cols]
    bumps = np.zeros(scene.shape, dtype=np.float64)
    n_bumps = 6
    for _ in range(n_bumps):
        r0 = rng.uniform(0, rows)
        c0 = rng.uniform(0, cols)
        sigma = rng.uniform(0.15, 0.35) * max(rows, cols)
        bumps += rng.uniform(-1.0, 1.0) * np.exp(
            -((rr - r0) ** 2 + (cc - c0) ** 2) / (2.0 * sigma**2))
    span = bumps.max() - bumps.min()
    if span > 0:
        bumps = (bumps - bumps.min()) / span  # -> [0, 1]
    else:
        bumps = np.full(scene.shape, 0.5)
    return 0.7 + 0.6 * bumps


def concentration_field(scene: PhantomScene) -> np.ndarray:
    """Per-pixel concentration: structure amplitude times texture, 0 outside."""
    tex = texture_field(scene)
    out = np.zeros(scene.shape, dtype=np.float64)
    for struct in scene.structures:
        m = struct.mask(scene.shape)
        out[m] = struct.fluor.amplitude * tex[m]
    return out


def generate_scene(scene: PhantomScene) -> tuple[Plane, Plane]:
    """Rasterize a scene into (ground-truth lifetime, ground-truth intensity)."""
    tau = np.zeros(scene.shape, dtype=np.float64)
    rate = np.zeros(scene.shape, dtype=np.float64)  # epsilon * k_r * tau per pixel
    tex = texture_field(scene)
    conc = np.zeros(scene.shape, dtype=np.float64)
    for struct in scene.structures:
        m = struct.mask(scene.shape)
        f = struct.fluor
        tau[m] = f.tau
        rate[m] = f.epsilon * f.k_r * f.tau
        conc[m] = f.amplitude * tex[m]
    intensity = scene.gain * conc * rate
    peak = intensity.max()
    if peak <= 0:
        raise ValueError("scene produces no signal; check structure geometry")
    intensity *= scene.photon_budget / peak
    return (Plane(values=tau, role="lifetime", units="ns"),
            Plane(values=intensity, role="intensity", units="photon counts"))


def generate_datacube(gt_tau: Plane, gt_intensity: Plane, bins: int,
                      bin_width: float, seed: int = 0) -> Datacube:
    """Draw a Poisson photon histogram cube from ground-truth planes.

    Per pixel, the expected histogram integrates a mono-exponential decay
    over each bin and is normalized so its total equals the ground-truth
    intensity.  Draws come from per-pixel counter-based streams keyed by
    (seed, pixel), so generation order over pixels is irrelevant and the
    result is bit-reproducible.  Zero-lifetime or zero-intensity pixels get
    all-zero histograms without consuming randomness.
    """
    if gt_tau.shape != gt_intensity.shape:
        raise ValueError("gt_tau and gt_intensity shapes differ")
    if bins < 1 or not (bin_width > 0):
        raise ValueError("need bins >= 1 and bin_width > 0")
    tau = gt_tau.values
    inten = gt_intensity.values
    if np.isnan(tau).any():
        raise ValueError("ground-truth lifetime must be fully sampled")
    rows, cols = tau.shape
    counts = np.zeros((rows, cols, bins), dtype=np.float64)
    edges = np.arange(bins + 1, dtype=np.float64) * bin_width
    live = (tau > 0) & (inten > 0)
    for r, c in zip(*np.nonzero(live)):
        decay = np.exp(-edges / tau[r, c])
        expected = decay[:-1] - decay[1:]
        expected *= inten[r, c] / (1.0 - decay[-1])
        key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, r * cols + c], dtype=np.uint64)
        stream = np.random.Generator(np.random.Philox(key=key))
        counts[r, c] = stream.poisson(expected)
    # Decays start at bin 0 by construction; record that so fits need not
    # locate the peak per pixel (the argmax is noisy at low counts).
    return Datacube(counts=counts, bin_width=bin_width, t0_bin=0)


# ---------------------------------------------------------------------------
# Presets

PRESETS = ("two-class", "affine-local", "rough", "undersampled")

_BLOB_FLUOR = Fluorophore(k_r=0.25, k_nr=0.75)            # tau = 1 ns, yield 0.25
_RIDGE_FLUOR = Fluorophore(k_r=0.25, k_nr=1.0 / 12.0)     # tau = 3 ns, yield 0.75


def _two_class_structures(size: int, seed: int, scale: float = 1.0) -> tuple:
    """Seeded layout of disks (short lifetime) and ridges (long lifetime)."""
    rng = np.random.default_rng(seed)
    structures = []
    # Structure area goes with scale^2, so counts scale by 1/scale^2 to keep
    # the total covered fraction (and the class balance) roughly constant.
    n_blobs = max(3, int(round(10 / scale**2)))
    n_ridges = max(2, int(round(6 / scale**2)))
    r_lo, r_hi = 0.09 * size * scale, 0.13 * size * scale
    for _ in range(n_blobs):
        center = rng.uniform(0.12, 0.88, 2) * size
        structures.append(Blob(
            center=(center[0], center[1]),
            radius=rng.uniform(r_lo, r_hi),
            fluor=_BLOB_FLUOR,
        ))
    w_lo, w_hi = 0.06 * size * scale, 0.09 * size * scale
    for _ in range(n_ridges):
        start = rng.uniform(0.05, 0.95, 2) * size
        angle = rng.uniform(0, math.pi)
        length = rng.uniform(0.35, 0.6) * size
        end = (start[0] + length * math.sin(angle), start[1] + length * math.cos(angle))
        structures.append(Ridge(start=(start[0], start[1]), end=end,
                                width=rng.uniform(w_lo, w_hi), fluor=_RIDGE_FLUOR))
    return tuple(structures)


def _affine_planes(size: int, seed: int, budget: float) -> tuple[Plane, Plane]:
    """Smooth intensity with an exact affine lifetime: tau = 0.01 * I + 1.

    The field is separable and monotone with flat shoulders along the last
    32 pixels of each axis, so every local window's sampled intensity range
    covers its block, for any undersampling factor up to 32.
    """
    rng = np.random.default_rng(seed)
    plateau = min(32, size // 4)

    def ramp(length):
        g = rng.uniform(0.5, 1.5, size=length)
        g[length - plateau:] = 0.0  # flat shoulder past the last samples
        r = np.concatenate(([0.0], np.cumsum(g)))[:length]
        return r / r.max()

    field = ramp(size)[:, None] + ramp(size)[None, :]  # in [0, 2]
    intensity = field / 2.0 * budget
    tau = 0.01 * intensity + 1.0
    return (Plane(values=tau, role="lifetime", units="ns"),
            Plane(values=intensity, role="intensity", units="photon counts"))


def make_preset(name: str, size: int = 256, seed: int = 7,
                photon_budget: float = 1e4) -> tuple[Plane, Plane, dict]:
    """Build a named phantom; returns (gt_tau, gt_intensity, metadata)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    meta = {"preset": name, "size": int(size), "seed": int(seed),
            "photon_budget": float(photon_budget)}
    if name == "affine-local":
        budget = min(photon_budget, 200.0)  # keeps tau = 0.01*I + 1 in a physical range
        gt_tau, gt_i = _affine_planes(size, seed, budget)
        meta.update({"photon_budget": budget, "tau_slope": 0.01, "tau_intercept": 1.0})
        return gt_tau, gt_i, meta

    scale = 0.45 if name == "undersampled" else 1.0
    scene = PhantomScene(
        shape=(size, size),
        structures=_two_class_structures(size, seed, scale),
        photon_budget=photon_budget,
        texture="rough" if name == "rough" else "smooth",
        seed=seed,
    )
    gt_tau, gt_i = generate_scene(scene)
    meta.update({
        "texture": scene.texture,
        "class_lifetimes": [0.0, _BLOB_FLUOR.tau, _RIDGE_FLUOR.tau],
        "n_structures": len(scene.structures),
    })
    return gt_tau, gt_i, meta

"""Synthetic deformation-field cohorts.

Controls are smooth random fields: each channel is a sum of Gaussian bumps with
random centers and amplitudes. Patients additionally carry a localised radial
contraction (an inward displacement bump around a fixed region of interest),
channel ``c`` holding displacement component ``c mod 3``. Both classes get
additive white noise. Sample ``j`` draws from its own Philox stream keyed by
``(seed, j)``, so datasets are reproducible across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

N_BUMPS = 8


@dataclass(frozen=True)
class SynthSpec:
    S: int = 110
    K: int = 30
    C: int = 3
    n_controls: int = 20
    n_patients: int = 26
    signal_amplitude: float = 1.25
    noise_sigma: float = 0.003
    seed: int = 0

    @property
    def roi_center(self) -> np.ndarray:
        return np.array([0.6 * (self.S - 1), 0.4 * (self.S - 1), 0.5 * (self.K - 1)])

    @property
    def roi_radius(self) -> np.ndarray:
        return np.array([self.S / 8.0, self.S / 8.0, self.K / 6.0])

    @property
    def bump_width(self) -> np.ndarray:
        return np.array([self.S / 6.0, self.S / 6.0, self.K / 6.0])


def _grid(spec: SynthSpec):
    i = np.arange(spec.S, dtype=np.float64)
    k = np.arange(spec.K, dtype=np.float64)
    return i[:, None, None], i[None, :, None], k[None, None, :]


def roi_coords(spec: SynthSpec) -> np.ndarray:
    """Normalised offsets from the ROI center, shape ``(S, S, K, 3)``."""
    gi, gj, gk = _grid(spec)
    c, r = spec.roi_center, spec.roi_radius
    u = np.stack(np.broadcast_arrays((gi - c[0]) / r[0], (gj - c[1]) / r[1], (gk - c[2]) / r[2]), axis=-1)
    return u


def contraction_field(spec: SynthSpec) -> np.ndarray:
    """Unit-amplitude inward displacement ``-u * exp(-|u|^2 / 2)``, ``(S, S, K, 3)``."""
    u = roi_coords(spec)
    return -u * np.exp(-0.5 * (u ** 2).sum(axis=-1, keepdims=True))


def background(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    gi, gj, gk = _grid(spec)
    w = spec.bump_width
    out = np.zeros((spec.S, spec.S, spec.K, spec.C))
    lim = np.array([spec.S - 1, spec.S - 1, spec.K - 1], dtype=np.float64)
    for c in range(spec.C):
        centers = rng.uniform(0.0, 1.0, size=(N_BUMPS, 3)) * lim
        amps = rng.normal(0.0, 1.0, size=N_BUMPS)
        for (ci, cj, ck), a in zip(centers, amps):
            out[..., c] += a * (np.exp(-0.5 * ((gi - ci) / w[0]) ** 2)
                                * np.exp(-0.5 * ((gj - cj) / w[1]) ** 2)
                                * np.exp(-0.5 * ((gk - ck) / w[2]) ** 2))
    return out


def synth_volume(spec: SynthSpec, index: int, label: int) -> np.ndarray:
    rng = stream(spec.seed, index)
    vol = background(spec, rng)
    if label == 1 and spec.signal_amplitude != 0.0:
        field = contraction_field(spec)
        for c in range(spec.C):
            vol[..., c] += spec.signal_amplitude * field[..., c % 3]
    vol += rng.normal(0.0, spec.noise_sigma, size=vol.shape)
    return vol


def labels_for(spec: SynthSpec) -> np.ndarray:
    return np.array([0] * spec.n_controls + [1] * spec.n_patients, dtype=np.int64)


def generate(spec: SynthSpec, dtype=np.float64) -> tuple[list[np.ndarray], np.ndarray]:
    """All volumes (controls first) and their labels."""
    labels = labels_for(spec)
    vols = [synth_volume(spec, j, int(y)).astype(dtype) for j, y in enumerate(labels)]
    return vols, labels


def roi_statistic(vol: np.ndarray, spec: SynthSpec) -> float:
    """Mean inward radial displacement inside the ROI: the planted-signal oracle."""
    u = roi_coords(spec)
    r = np.sqrt((u ** 2).sum(axis=-1))
    inside = (r > 0) & (r <= 2.0)
    disp = np.stack([vol[..., c] for c in range(min(3, vol.shape[3]))], axis=-1)
    u_hat = u[inside][:, : disp.shape[-1]] / r[inside][:, None]
    return float(-(disp[inside] * u_hat).sum(axis=1).mean())

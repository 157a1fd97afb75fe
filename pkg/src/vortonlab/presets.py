"""Named smooth divergence-free fields shared by the grid solver, the cloud sampler and the CLI.

Every preset is v = grad-perp psi for a sum of Gaussian stream-function bumps
psi = sum_i a_i exp(-(dx^2 / (2 sx^2) + dy^2 / (2 sy^2))), so it is analytic,
divergence-free, has zero total integral and decays like a Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["StreamBlobs", "PRESETS", "get_preset"]


@dataclass(frozen=True)
class StreamBlobs:
    centers: tuple  # ((x, y), ...)
    amplitudes: tuple  # stream-function amplitude per bump
    sx: float
    sy: float

    def __post_init__(self):
        if len(self.centers) != len(self.amplitudes):
            raise ValueError("one amplitude per centre is required")
        if not (self.sx > 0 and self.sy > 0):
            raise ValueError("blob widths must be positive")

    @property
    def radius(self) -> float:
        """Distance from the blob centres beyond which the field is below 1e-16 of its peak."""
        return 9.0 * max(self.sx, self.sy)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.centers, dtype=float)
        return c.min(axis=0) - self.radius, c.max(axis=0) + self.radius

    def stream(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        psi = np.zeros(x.shape[:-1])
        for (cx, cy), a in zip(self.centers, self.amplitudes):
            dx, dy = x[..., 0] - cx, x[..., 1] - cy
            psi += a * np.exp(-0.5 * (dx * dx / self.sx**2 + dy * dy / self.sy**2))
        return psi

    def __call__(self, x) -> np.ndarray:
        """Field (d psi/dy, -d psi/dx) at points of shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for (cx, cy), a in zip(self.centers, self.amplitudes):
            dx, dy = x[..., 0] - cx, x[..., 1] - cy
            g = a * np.exp(-0.5 * (dx * dx / self.sx**2 + dy * dy / self.sy**2))
            out[..., 0] += -dy / self.sy**2 * g
            out[..., 1] += dx / self.sx**2 * g
        return out


PRESETS = {
    # elliptical smooth vortex; rotates and deforms, zero net momentum
    "single-blob": StreamBlobs(centers=((0.0, 0.0),), amplitudes=(0.4,), sx=0.7, sy=0.45),
    # counter-rotating pair that translates along +y
    "vortex-pair": StreamBlobs(centers=((-0.7, 0.0), (0.7, 0.0)), amplitudes=(0.2, -0.2), sx=0.35, sy=0.35),
}


def get_preset(name: str, **overrides) -> StreamBlobs:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if not overrides:
        return base
    params = dict(centers=base.centers, amplitudes=base.amplitudes, sx=base.sx, sy=base.sy)
    params.update(overrides)
    params["centers"] = tuple(tuple(float(v) for v in c) for c in params["centers"])
    params["amplitudes"] = tuple(float(a) for a in params["amplitudes"])
    return StreamBlobs(**params)

"""
Synthetic 2-D training distributions.
"""

from dataclasses import dataclass

import numpy as np

DATA_KINDS = ("ring_of_gaussians", "grid_of_gaussians", "single_gaussian")


@dataclass(frozen=True)
class DataSpec:
    """
    A mixture of isotropic gaussians in the plane with equal weights.

    Attributes
    ----------
    kind : str
        ring_of_gaussians: n_modes means on a circle of radius
        radius_or_spacing. grid_of_gaussians: a square grid of n_modes
        means, neighbours radius_or_spacing apart, centered at the origin.
        single_gaussian: one mode at the origin, n_modes must be 1.
    n_modes : int
    mode_std : float
        Standard deviation of every mode, > 0.
    radius_or_spacing : float

    """
    kind: str = "ring_of_gaussians"
    n_modes: int = 8
    mode_std: float = 0.05
    radius_or_spacing: float = 2.

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ValueError("Unknown data kind {}, must be one of {}".format(
                self.kind, DATA_KINDS))
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ValueError("n_modes must be a positive integer, got "
                             "{}".format(self.n_modes))
        if not self.mode_std > 0:
            raise ValueError("mode_std must be > 0, got {}".format(self.mode_std))
        if self.kind == "single_gaussian":
            if self.n_modes != 1:
                raise ValueError("single_gaussian needs n_modes = 1, got "
                                 "{}".format(self.n_modes))
        elif not self.radius_or_spacing > 0:
            raise ValueError("radius_or_spacing must be > 0, got {}".format(
                self.radius_or_spacing))
        if self.kind == "grid_of_gaussians":
            side = int(round(np.sqrt(self.n_modes)))
            if side * side != self.n_modes:
                raise ValueError("grid_of_gaussians needs a square number of "
                                 "modes, got {}".format(self.n_modes))

    def mode_means(self):
        """ The means of the modes, shape (n_modes, 2). """
        if self.kind == "ring_of_gaussians":
            angles = 2 * np.pi * np.arange(self.n_modes) / self.n_modes
            return self.radius_or_spacing * np.column_stack(
                [np.cos(angles), np.sin(angles)])
        elif self.kind == "grid_of_gaussians":
            side = int(round(np.sqrt(self.n_modes)))
            ticks = (np.arange(side) - (side - 1) / 2.) * self.radius_or_spacing
            xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
            return np.column_stack([xx.ravel(), yy.ravel()])
        else:
            return np.zeros((1, 2))

    @property
    def scale(self):
        """ Largest distance of a mode mean to the origin, or mode_std if
        that is smaller. """
        norms = np.hypot(*self.mode_means().T)
        return float(max(np.max(norms), self.mode_std))

    def to_dict(self):
        return {"kind": self.kind, "n_modes": self.n_modes,
                "mode_std": self.mode_std,
                "radius_or_spacing": self.radius_or_spacing}


def sample_data(spec, rng, n):
    """
    Draw n points from the mixture.

    Parameters
    ----------
    spec : DataSpec
    rng : sdganlab.rng.Rng
    n : int

    Returns
    -------
    ndarray
        Shape (n, 2).

    """
    means = spec.mode_means()
    modes = rng.integers(0, len(means), n)
    return means[modes] + spec.mode_std * rng.normal((n, 2))

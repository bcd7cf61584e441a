"""Truncated uniform velocity lattices with midpoint quadrature weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["VelocityGrid", "reference_grid_for"]


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform N^3 lattice of cell centers on [-L, L]^3.

    Midpoint centers keep the lattice symmetric under v -> -v, and every node
    carries the same quadrature weight (2L/N)^3, so the total weight is the
    box volume.  Gaussian moments on such a lattice converge superalgebraically
    once the spacing resolves the thermal width.
    """

    half_width: float
    n_per_axis: int
    axis: np.ndarray = field(init=False, repr=False)
    nodes: np.ndarray = field(init=False, repr=False)
    weight: float = field(init=False)

    def __post_init__(self):
        if not (self.half_width > 0.0):
            raise ValueError("half_width must be positive")
        if self.n_per_axis < 2:
            raise ValueError("need at least 2 nodes per axis")
        n = self.n_per_axis
        h = 2.0 * self.half_width / n
        axis = -self.half_width + h * (np.arange(n) + 0.5)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weight", float(h**3))

    @property
    def n_nodes(self) -> int:
        return self.n_per_axis**3

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n_per_axis

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values, axis=-1) * self.weight)

    def inner(self, f: np.ndarray, g: np.ndarray, weight: np.ndarray | None = None):
        if weight is None:
            return np.sum(f * g, axis=-1) * self.weight
        return np.sum(f * g * weight, axis=-1) * self.weight

    def moments_basis(self) -> np.ndarray:
        """Columns (1, v1, v2, v3, |v|^2) at every node, shape (n_nodes, 5)."""
        v = self.nodes
        return np.column_stack([
            np.ones(len(v)), v[:, 0], v[:, 1], v[:, 2],
            np.einsum("ij,ij->i", v, v),
        ])

    def flip_index(self) -> np.ndarray:
        """Permutation mapping each node to its v -> -v partner."""
        n = self.n_per_axis
        idx = np.arange(self.n_nodes).reshape(n, n, n)
        return idx[::-1, ::-1, ::-1].ravel()


def reference_grid_for(theta_max: float, u_max: float, n_per_axis: int = 32) -> VelocityGrid:
    """Reference lattice: half-width 8 sqrt(theta_max) + |u|_max.

    Puts the Gaussian tail below 1e-14 at the truncation boundary for every
    state whose temperature and speed are within the given caps.
    """
    return VelocityGrid(8.0 * np.sqrt(theta_max) + u_max, n_per_axis)

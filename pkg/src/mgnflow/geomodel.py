"""Random geological realizations: permeability fields, well placement, cell types."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .errors import FactorizationError, InvalidArgument
from .mesh import MILLIDARCY, Mesh

# one-hot column order
INTERIOR, INJECTOR, FAULT, BOUNDARY_TYPE = range(4)
CELL_TYPE_NAMES = ("interior", "injector", "fault", "boundary")


@dataclass(frozen=True, eq=False)
class GeoModel:
    perm_md: np.ndarray
    porosity: np.ndarray
    well_cell: int
    cell_type: np.ndarray
    well_point: tuple[float, float] | None = None

    def __post_init__(self):
        if np.any(self.perm_md <= 0):
            raise InvalidArgument("permeability must be positive")
        if np.any((self.porosity <= 0) | (self.porosity >= 1)):
            raise InvalidArgument("porosity must lie in (0, 1)")
        if self.cell_type.shape != (len(self.perm_md), 4):
            raise InvalidArgument("cell_type must be an [n_cells, 4] one-hot matrix")
        if int(self.cell_type[:, INJECTOR].sum()) != 1:
            raise InvalidArgument("exactly one injector cell is required")

    @property
    def perm(self) -> np.ndarray:
        """Permeability in m^2."""
        return self.perm_md * MILLIDARCY


def exponential_covariance(points: np.ndarray, std: float, corr_len: float) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    return std * std * np.exp(-d / corr_len)


def sample_log_perm_field(mesh: Mesh, mean_ln: float = 3.912, std_ln: float = 0.5,
                          corr_len: float = 200.0, seed: int = 0) -> np.ndarray:
    """Permeability in mD with ln k Gaussian, exponential covariance over centroids.

    Cells are visited in lexicographic centroid order, so the field does not
    depend on how cells are numbered.
    """
    if std_ln < 0 or corr_len <= 0:
        raise InvalidArgument("std_ln must be >= 0 and corr_len > 0")
    n = mesh.n_cells
    if std_ln == 0:
        return np.full(n, np.exp(mean_ln))
    order = np.lexsort((mesh.centroids[:, 1], mesh.centroids[:, 0]))
    cov = exponential_covariance(mesh.centroids[order], std_ln, corr_len)
    cov[np.diag_indices(n)] += 1e-10
    try:
        L = cholesky(cov, lower=True)
    except LinAlgError as exc:
        raise FactorizationError(f"covariance not positive definite: {exc}") from None
    z = np.random.default_rng(seed).standard_normal(n)
    ln_k = np.empty(n)
    ln_k[order] = mean_ln + L @ z
    return np.exp(ln_k)


def sample_well_location(domain=(1000.0, 1000.0), seed: int = 0, box: float = 200.0) -> np.ndarray:
    """Uniform point in the ``box`` x ``box`` square centred in the domain."""
    Lx, Ly = domain
    if Lx < box or Ly < box:
        raise InvalidArgument(f"domain {domain} smaller than the {box} m well box")
    rng = np.random.default_rng(seed)
    half = box / 2
    return np.array([Lx / 2, Ly / 2]) + rng.uniform(-half, half, size=2)


def assign_cell_types(mesh: Mesh, well_cell: int) -> np.ndarray:
    """One-hot [n, 4] types with priority injector > fault > boundary > interior."""
    n = mesh.n_cells
    if not 0 <= well_cell < n:
        raise InvalidArgument(f"well cell {well_cell} out of range for {n} cells")
    kind = np.full(n, INTERIOR)
    kind[mesh.boundary_cells()] = BOUNDARY_TYPE
    kind[mesh.fault_cells()] = FAULT
    kind[well_cell] = INJECTOR
    onehot = np.zeros((n, 4))
    onehot[np.arange(n), kind] = 1.0
    return onehot


def make_geomodel(mesh: Mesh, well_point, perm_md: np.ndarray, porosity: float = 0.2) -> GeoModel:
    well_cell = mesh.locate(well_point)
    return GeoModel(np.asarray(perm_md, dtype=float), np.full(mesh.n_cells, float(porosity)),
                    well_cell, assign_cell_types(mesh, well_cell),
                    tuple(float(c) for c in well_point))

"""2D polygonal meshes (Cartesian and clipped Voronoi / PEBI) and TPFA transmissibilities.

Cells carry unit thickness, so a cell "volume" in m^3 equals its polygon area
in m^2 and a face "area" equals its edge length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .errors import DegenerateGeometry, InvalidArgument, MeshingError

BOUNDARY = -1
MILLIDARCY = 9.869233e-16  # m^2


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable polygonal mesh.

    ``face_cells[f] = (left, right)``; ``right == BOUNDARY`` for domain-boundary
    faces.  ``face_normals`` point from left to right (outward on the boundary).
    """

    polygons: tuple[np.ndarray, ...]
    centroids: np.ndarray
    volumes: np.ndarray
    face_cells: np.ndarray
    face_areas: np.ndarray
    face_centers: np.ndarray
    face_normals: np.ndarray
    face_endpoints: np.ndarray
    face_fault: np.ndarray
    fault_segments: np.ndarray
    domain: tuple[float, float]

    def __post_init__(self):
        for arr in (self.centroids, self.volumes, self.face_cells, self.face_areas,
                    self.face_centers, self.face_normals, self.face_endpoints,
                    self.face_fault, self.fault_segments):
            arr.setflags(write=False)
        for poly in self.polygons:
            poly.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return len(self.volumes)

    @property
    def n_faces(self) -> int:
        return len(self.face_areas)

    @property
    def interior(self) -> np.ndarray:
        """Boolean mask of faces shared by two cells."""
        return self.face_cells[:, 1] != BOUNDARY

    def boundary_cells(self) -> np.ndarray:
        """Sorted ids of cells owning at least one domain-boundary face."""
        return np.unique(self.face_cells[~self.interior, 0])

    def fault_cells(self) -> np.ndarray:
        """Sorted ids of cells touching a fault-flagged face."""
        touched = self.face_cells[self.face_fault].ravel()
        return np.unique(touched[touched != BOUNDARY])

    def locate(self, point) -> int:
        """Id of the (convex) cell containing ``point``; nearest centroid as fallback."""
        pt = np.asarray(point, dtype=float)
        d = np.linalg.norm(self.centroids - pt, axis=1)
        for c in np.argsort(d)[:16]:
            poly = self.polygons[c]
            edge = np.roll(poly, -1, axis=0) - poly
            rel = pt - poly
            cross = edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]
            if np.all(cross >= -1e-12 * max(self.domain) ** 2):
                return int(c)
        return int(np.argmin(d))


@dataclass(frozen=True, eq=False)
class TransmissibilityMap:
    """Per-face geometric transmissibility k*A/d in m^3 (zero on boundary faces)."""

    values: np.ndarray
    face_cells: np.ndarray

    def conducting(self) -> np.ndarray:
        """Ids of interior faces with strictly positive transmissibility."""
        return np.flatnonzero((self.face_cells[:, 1] != BOUNDARY) & (self.values > 0))

    def pair(self, i: int, j: int) -> float:
        fc = self.face_cells
        hit = np.flatnonzero(((fc[:, 0] == i) & (fc[:, 1] == j)) | ((fc[:, 0] == j) & (fc[:, 1] == i)))
        return float(self.values[hit].sum()) if hit.size else 0.0


# ------------------------------------------------------------------ geometry helpers

def polygon_area_centroid(poly: np.ndarray) -> tuple[float, np.ndarray]:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, poly.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return abs(area), np.array([cx, cy])


def _segment_hits_fault(p0, p1, q0, q1, tol: float) -> bool:
    """True if face p0-p1 and fault q0-q1 cross at a point interior to both.

    Touching only at an endpoint does not count: faces that merely end on a
    fault line (between cells on the same side) stay open, and so do faces
    that a fault tip just reaches.  Collinear overlap of positive length counts.
    """
    r = p1 - p0
    s = q1 - q0
    lr = np.hypot(*r)
    ls = np.hypot(*s)
    if lr <= tol or ls <= tol:
        return False
    denom = r[0] * s[1] - r[1] * s[0]
    qp = q0 - p0
    if abs(denom) <= tol * max(lr, ls):
        # parallel: overlapping only if collinear
        dist = abs(qp[0] * r[1] - qp[1] * r[0]) / lr
        if dist > tol:
            return False
        rr = r / lr
        a0, a1 = sorted((float(qp @ rr), float((q1 - p0) @ rr)))
        return min(a1, lr) - max(a0, 0.0) > tol
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    te = tol / lr
    ue = tol / ls
    return te < t < 1.0 - te and ue < u < 1.0 - ue


def _flag_faults(endpoints: np.ndarray, faults: np.ndarray, tol: float) -> np.ndarray:
    flags = np.zeros(len(endpoints), dtype=bool)
    for f, (p0, p1) in enumerate(endpoints):
        for q0, q1 in faults:
            if _segment_hits_fault(p0, p1, q0, q1, tol):
                flags[f] = True
                break
    return flags


def _as_faults(faults) -> np.ndarray:
    if faults is None:
        return np.zeros((0, 2, 2))
    arr = np.asarray(faults, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2, 2))
    return arr.reshape(-1, 2, 2)


def _assemble(polygons, face_cells, face_endpoints, faults, domain, tol) -> Mesh:
    areas, cents = [], []
    for poly in polygons:
        a, c = polygon_area_centroid(poly)
        areas.append(a)
        cents.append(c)
    volumes = np.array(areas)
    centroids = np.array(cents).reshape(-1, 2)
    face_cells = np.asarray(face_cells, dtype=np.int64).reshape(-1, 2)
    face_endpoints = np.asarray(face_endpoints, dtype=float).reshape(-1, 2, 2)
    seg = face_endpoints[:, 1] - face_endpoints[:, 0]
    face_areas = np.hypot(seg[:, 0], seg[:, 1])
    face_centers = face_endpoints.mean(axis=1)
    normals = np.stack([seg[:, 1], -seg[:, 0]], axis=1) / face_areas[:, None]
    # orient from left cell towards right cell (outward on the boundary)
    left = face_cells[:, 0]
    right = face_cells[:, 1]
    towards = np.where((right != BOUNDARY)[:, None],
                       centroids[np.where(right == BOUNDARY, 0, right)] - centroids[left],
                       face_centers - centroids[left])
    flip = (normals * towards).sum(axis=1) < 0
    normals[flip] *= -1
    faults = _as_faults(faults)
    flags = _flag_faults(face_endpoints, faults, tol) if len(faults) else np.zeros(len(face_cells), bool)
    flags &= right != BOUNDARY
    mesh = Mesh(tuple(np.ascontiguousarray(p) for p in polygons), centroids, volumes, face_cells,
                face_areas, face_centers, normals, face_endpoints, flags, faults,
                (float(domain[0]), float(domain[1])))
    if np.any(volumes <= 0) or np.any(face_areas <= 0):
        raise MeshingError("mesh has non-positive cell volume or face area")
    return mesh


# ------------------------------------------------------------------ builders

def build_cartesian_mesh(nx: int, ny: int, Lx: float, Ly: float, faults=None) -> Mesh:
    if nx < 1 or ny < 1 or not Lx > 0 or not Ly > 0:
        raise InvalidArgument(f"invalid Cartesian dimensions nx={nx} ny={ny} Lx={Lx} Ly={Ly}")
    dx, dy = Lx / nx, Ly / ny

    def cid(i, j):
        return j * nx + i

    polygons = []
    for j in range(ny):
        for i in range(nx):
            x0, y0 = i * dx, j * dy
            polygons.append(np.array([[x0, y0], [x0 + dx, y0], [x0 + dx, y0 + dy], [x0, y0 + dy]]))
    cells, ends = [], []
    for j in range(ny):
        for i in range(nx + 1):
            a, b = [i * dx, j * dy], [i * dx, (j + 1) * dy]
            if i == 0:
                cells.append((cid(0, j), BOUNDARY))
            elif i == nx:
                cells.append((cid(nx - 1, j), BOUNDARY))
            else:
                cells.append((cid(i - 1, j), cid(i, j)))
            ends.append((a, b))
    for j in range(ny + 1):
        for i in range(nx):
            a, b = [i * dx, j * dy], [(i + 1) * dx, j * dy]
            if j == 0:
                cells.append((cid(i, 0), BOUNDARY))
            elif j == ny:
                cells.append((cid(i, ny - 1), BOUNDARY))
            else:
                cells.append((cid(i, j - 1), cid(i, j)))
            ends.append((a, b))
    return _assemble(polygons, cells, ends, faults, (Lx, Ly), 1e-9 * max(Lx, Ly))


def jittered_seeds(domain, n_per_side: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    """Background seeds on an n x n lattice, each moved by up to ``jitter`` * spacing."""
    Lx, Ly = domain
    hx, hy = Lx / n_per_side, Ly / n_per_side
    gx, gy = np.meshgrid((np.arange(n_per_side) + 0.5) * hx, (np.arange(n_per_side) + 0.5) * hy)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts += rng.uniform(-jitter, jitter, size=pts.shape) * np.array([hx, hy])
    return pts


def _point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


# sqrt(0.5**2 + 0.3**2): farthest a fault point can be from its nearest pair seed,
# in units of the local pair spacing; other seeds are kept beyond FAULT_CLEARANCE
PAIR_REACH = 0.5831
FAULT_CLEARANCE = 0.7


def fault_mirror_seeds(faults: np.ndarray, spacing: float, well=None, refine_radius: float = 0.0,
                       fine_spacing: float | None = None) -> np.ndarray:
    """Seed pairs mirrored across each fault so their bisectors trace the fault line.

    Pairs are at most ``spacing`` apart along the fault, or ``fine_spacing``
    where the fault passes within ``refine_radius + 1.5 * spacing`` of the
    well.  Every point of a fault is then within ``PAIR_REACH`` times the
    local spacing of some pair seed.
    """
    out = []
    fine = spacing if fine_spacing is None else fine_spacing
    for a, b in _as_faults(faults):
        d = b - a
        length = float(np.hypot(*d))
        tangent = d / length
        normal = np.array([-tangent[1], tangent[0]])
        s = 0.0
        while s < length - 1e-9 * length:
            h = spacing
            if well is not None:
                probe = a + min(s + 0.5 * spacing, length) * tangent
                if np.linalg.norm(probe - well) < refine_radius + 1.5 * spacing:
                    h = fine
            rest = length - s
            if rest <= h:
                h = rest
            elif rest < 1.5 * h:
                h = 0.5 * rest
            c = a + (s + 0.5 * h) * tangent
            offset = 0.3 * min(h, spacing)
            out.append(c + offset * normal)
            out.append(c - offset * normal)
            s += h
    return np.array(out).reshape(-1, 2)


def well_refinement_seeds(well, refine_radius: float, spacing: float) -> np.ndarray:
    """Concentric rings of seeds around the well, ring gap ``spacing``."""
    well = np.asarray(well, dtype=float)
    pts = [well]
    n_rings = int(np.floor(refine_radius / spacing + 1e-9))
    for k in range(1, n_rings + 1):
        r = k * spacing
        m = max(6, int(round(2 * np.pi * r / spacing)))
        ang = 2 * np.pi * (np.arange(m) + 0.5 * (k % 2)) / m
        pts.extend(well + r * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    return np.array(pts).reshape(-1, 2)


def build_voronoi_mesh(seed_points, domain, faults=None, well=None, refine_radius: float = 100.0,
                       refine_factor: float = 4.0) -> Mesh:
    """Clip the Voronoi diagram of the seeds to the ``domain`` box.

    Fault segments get mirrored seed pairs (background seeds near a fault are
    dropped); seeds within ``refine_radius`` of the well are replaced by rings
    with ``refine_factor`` times the background areal density.  Any interior
    face that still crosses a fault is flagged.  Clipping uses reflected copies
    of every seed across the four box sides, which makes the bisectors of the
    reflected pairs coincide with the box edges.
    """
    Lx, Ly = float(domain[0]), float(domain[1])
    if not (Lx > 0 and Ly > 0):
        raise InvalidArgument("domain sides must be positive")
    tol = 1e-9 * max(Lx, Ly)
    seeds = np.asarray(seed_points, dtype=float).reshape(-1, 2)
    for k, s in enumerate(seeds):
        if not (0 <= s[0] <= Lx and 0 <= s[1] <= Ly):
            raise MeshingError("seed outside domain", k, s)
    _check_duplicates(seeds, tol)
    faults = _as_faults(faults)
    spacing = np.sqrt(Lx * Ly / max(len(seeds), 1))

    fine = spacing / np.sqrt(refine_factor)
    if well is not None:
        well = np.asarray(well, dtype=float)
        if not (0 < well[0] < Lx and 0 < well[1] < Ly):
            raise InvalidArgument(f"well {tuple(well)} outside domain")
        seeds = seeds[np.linalg.norm(seeds - well, axis=1) > refine_radius + 0.5 * fine]

    if len(faults):
        # the fault must stay closer to its mirrored pairs than to any other seed,
        # so that it is traced exactly by pair bisectors
        keep = np.ones(len(seeds), bool)
        for a, b in faults:
            keep &= _point_segment_distance(seeds, a, b) > FAULT_CLEARANCE * spacing
        mirrored = fault_mirror_seeds(faults, spacing, well, refine_radius, fine)
        inside = (mirrored[:, 0] > tol) & (mirrored[:, 0] < Lx - tol) & \
                 (mirrored[:, 1] > tol) & (mirrored[:, 1] < Ly - tol)
        seeds = np.vstack([seeds[keep], mirrored[inside]])

    if well is not None:
        ring = well_refinement_seeds(well, refine_radius, fine)
        ring = ring[(ring[:, 0] > 0.05 * fine) & (ring[:, 0] < Lx - 0.05 * fine) &
                    (ring[:, 1] > 0.05 * fine) & (ring[:, 1] < Ly - 0.05 * fine)]
        near = np.zeros(len(ring), bool)
        for a, b in faults:
            near |= _point_segment_distance(ring, a, b) < FAULT_CLEARANCE * fine
        # a well on a fault loses its centre seed; the cell holding it is found later
        seeds = np.vstack([ring[:1][~near[:1]], seeds, ring[1:][~near[1:]]])
        _check_duplicates(seeds, tol)

    return _clipped_voronoi(seeds, Lx, Ly, faults, tol)


def _check_duplicates(seeds: np.ndarray, tol: float) -> None:
    if len(seeds) < 2:
        return
    dist, idx = cKDTree(seeds).query(seeds, k=2)
    bad = np.flatnonzero(dist[:, 1] <= tol)
    if bad.size:
        k = int(bad[0])
        other = int(idx[k, 1] if idx[k, 0] == k else idx[k, 0])
        # report the later of the pair as the offender
        first, dup = sorted((k, other))
        raise MeshingError(f"duplicate seed (coincides with seed #{first})", dup, seeds[dup])


def _clipped_voronoi(seeds: np.ndarray, Lx: float, Ly: float, faults, tol: float) -> Mesh:
    n = len(seeds)
    if n == 0:
        raise MeshingError("no seeds")
    reflections = [
        np.column_stack([-seeds[:, 0], seeds[:, 1]]),
        np.column_stack([2 * Lx - seeds[:, 0], seeds[:, 1]]),
        np.column_stack([seeds[:, 0], -seeds[:, 1]]),
        np.column_stack([seeds[:, 0], 2 * Ly - seeds[:, 1]]),
    ]
    allpts = np.vstack([seeds] + reflections)
    try:
        vor = Voronoi(allpts)
    except Exception as exc:  # qhull raises its own error type
        raise MeshingError(f"Voronoi construction failed: {exc}") from None
    verts = vor.vertices.copy()
    # snap vertices lying on the box within tolerance
    for axis, L in ((0, Lx), (1, Ly)):
        v = verts[:, axis]
        v[np.abs(v) <= 1e-7 * L] = 0.0
        v[np.abs(v - L) <= 1e-7 * L] = L

    polygons = []
    for k in range(n):
        region = vor.regions[vor.point_region[k]]
        if -1 in region or len(region) < 3:
            raise MeshingError("unbounded or degenerate Voronoi cell", k, seeds[k])
        poly = verts[region]
        c = poly.mean(axis=0)
        order = np.argsort(np.arctan2(poly[:, 1] - c[1], poly[:, 0] - c[0]))
        poly = poly[order]
        # drop repeated vertices produced by co-circular seeds
        keep = np.linalg.norm(poly - np.roll(poly, 1, axis=0), axis=1) > tol
        poly = poly[keep]
        if len(poly) < 3:
            raise MeshingError("degenerate Voronoi cell", k, seeds[k])
        polygons.append(poly)

    cells, ends = [], []
    for (p, q), rv in zip(vor.ridge_points, vor.ridge_vertices):
        if p >= n and q >= n:
            continue
        if -1 in rv:
            continue
        a, b = verts[rv[0]], verts[rv[1]]
        if np.hypot(*(b - a)) <= tol:
            continue
        if p < n and q < n:
            lo, hi = min(p, q), max(p, q)
            cells.append((lo, hi))
        else:
            cells.append((min(p, q), BOUNDARY))
        ends.append((a, b))
    order = np.lexsort((np.array([c[1] for c in cells]), np.array([c[0] for c in cells])))
    cells = [cells[i] for i in order]
    ends = [ends[i] for i in order]
    mesh = _assemble(polygons, cells, ends, faults, (Lx, Ly), tol)
    total = mesh.volumes.sum()
    if abs(total - Lx * Ly) > 1e-8 * Lx * Ly:
        raise MeshingError(f"cells do not tile the domain (area {total} vs {Lx * Ly})")
    return mesh


# ------------------------------------------------------------------ transmissibility

def compute_transmissibilities(mesh: Mesh, perm) -> TransmissibilityMap:
    """Two-point transmissibilities k*A/d (m^3) from harmonic half-transmissibilities.

    ``perm`` is per-cell permeability in m^2.  Faces flagged as faults get 0.
    """
    perm = np.asarray(perm, dtype=float)
    if perm.shape != (mesh.n_cells,):
        raise InvalidArgument(f"need one permeability per cell, got shape {perm.shape}")
    if np.any(perm <= 0) or not np.all(np.isfinite(perm)):
        raise InvalidArgument("permeabilities must be positive and finite")
    T = np.zeros(mesh.n_faces)
    fc = mesh.face_cells
    interior = np.flatnonzero(mesh.interior)
    left, right = fc[interior, 0], fc[interior, 1]
    cf = mesh.face_centers[interior]
    nrm = mesh.face_normals[interior]
    area = mesh.face_areas[interior]

    def half(cell, sign):
        d = cf - mesh.centroids[cell]
        d2 = (d * d).sum(axis=1)
        tiny = d2 <= (1e-12 * max(mesh.domain)) ** 2
        if np.any(tiny):
            f = int(interior[np.flatnonzero(tiny)[0]])
            raise DegenerateGeometry(f"face {f} center coincides with a cell centroid")
        return perm[cell] * area * np.maximum(0.0, sign * (d * nrm).sum(axis=1)) / d2

    a_l = half(left, 1.0)
    a_r = half(right, -1.0)
    with np.errstate(divide="ignore"):
        t = np.where((a_l > 0) & (a_r > 0), 1.0 / (1.0 / np.where(a_l > 0, a_l, 1) + 1.0 / np.where(a_r > 0, a_r, 1)), 0.0)
    T[interior] = t
    T[mesh.face_fault] = 0.0
    return TransmissibilityMap(T, fc.copy())

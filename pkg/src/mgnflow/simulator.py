"""Incompressible, immiscible gas/brine flow on TPFA meshes with an IMPES scheme.

Pressure is solved implicitly with upstream-weighted total mobility; gas
saturation is advanced explicitly with single-point upstream weighting and
CFL-limited sub-steps.  Cells flagged as Dirichlet hold a fixed pressure and
exchange fluid with an outside aquifer: whatever their net inflow is leaves
the domain (carrying gas at the cell's fractional flow), and any inflow from
the aquifer is pure brine.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .errors import IllPosedProblem, InvalidArgument, NumericalBlowup
from .geomodel import GeoModel
from .mesh import Mesh, TransmissibilityMap

DAY = 86400.0


@dataclass(frozen=True)
class FluidProps:
    rho_g: float = 700.0
    rho_a: float = 1000.0
    mu_g: float = 6e-5
    mu_a: float = 5e-4
    s_a_min: float = 0.2
    s_g_max: float = 0.8
    krg_end: float = 0.95
    ra_exponent: float = 6.0

    def __post_init__(self):
        if min(self.rho_g, self.rho_a, self.mu_g, self.mu_a) <= 0:
            raise InvalidArgument("densities and viscosities must be positive")
        if not 0 <= self.s_a_min < 1:
            raise InvalidArgument("s_a_min must lie in [0, 1)")
        if not 0 < self.s_g_max <= 1 - self.s_a_min:
            raise InvalidArgument("s_g_max must lie in (0, 1 - s_a_min]")


@dataclass(frozen=True)
class Schedule:
    rate: float = 0.058                 # kg/s of gas
    interval_days: float = 50.0
    n_steps: int = 19
    boundary_pressure: float = 10e6     # Pa
    initial_pressure: float = 10e6      # Pa
    pressure_updates: int = 5           # pressure solves per report interval
    cfl: float = 0.5

    def __post_init__(self):
        if self.rate < 0 or self.interval_days <= 0 or self.n_steps < 0:
            raise InvalidArgument("rate must be >= 0, interval > 0, n_steps >= 0")
        if self.pressure_updates < 1 or not 0 < self.cfl <= 1:
            raise InvalidArgument("pressure_updates >= 1 and 0 < cfl <= 1 required")

    @property
    def interval(self) -> float:
        return self.interval_days * DAY


@dataclass(frozen=True, eq=False)
class SimState:
    p: np.ndarray
    s_g: np.ndarray
    t: float = 0.0

    @property
    def s_a(self) -> np.ndarray:
        return 1.0 - self.s_g


@dataclass(frozen=True, eq=False)
class SaturationStep:
    s_g: np.ndarray
    injected: float       # gas volume in through sources, m^3
    outflux: float        # gas volume out through Dirichlet cells, m^3
    substeps: int


@dataclass(eq=False)
class SimulationResult:
    snapshots: list[SimState]
    injected: list[float] = field(default_factory=list)   # per report interval
    outflux: list[float] = field(default_factory=list)

    @property
    def pressure(self) -> np.ndarray:
        return np.array([s.p for s in self.snapshots])

    @property
    def saturation(self) -> np.ndarray:
        return np.array([s.s_g for s in self.snapshots])

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, k):
        return self.snapshots[k]


# ------------------------------------------------------------------ constitutive

def relperm(phase: str, s_g, props: FluidProps = FluidProps()):
    """Brooks-Corey relative permeability of ``phase`` ('g' or 'a') at gas saturation s_g."""
    s_g = np.asarray(s_g, dtype=float)
    if phase == "g":
        x = np.clip(s_g / props.s_g_max, 0.0, 1.0)
        return props.krg_end * x * x
    if phase == "a":
        x = np.clip((1.0 - s_g - props.s_a_min) / (1.0 - props.s_a_min), 0.0, 1.0)
        return x ** props.ra_exponent
    raise InvalidArgument(f"unknown phase {phase!r}")


def mobilities(s_g, props: FluidProps):
    return relperm("g", s_g, props) / props.mu_g, relperm("a", s_g, props) / props.mu_a


def fractional_flow(s_g, props: FluidProps):
    lg, la = mobilities(s_g, props)
    return lg / (lg + la)


@lru_cache(maxsize=32)
def max_fractional_slope(props: FluidProps) -> float:
    s = np.linspace(0.0, props.s_g_max, 4001)
    f = fractional_flow(s, props)
    return float(np.max(np.abs(np.diff(f) / np.diff(s))))


# ------------------------------------------------------------------ helpers

def default_dirichlet(mesh: Mesh, geomodel: GeoModel | None, pressure: float) -> dict[int, float]:
    """Every cell with a domain-boundary face, except the injector, at ``pressure``."""
    cells = mesh.boundary_cells()
    if geomodel is not None:
        cells = cells[cells != geomodel.well_cell]
    return {int(c): float(pressure) for c in cells}


def _as_dirichlet(dirichlet, n) -> tuple[np.ndarray, np.ndarray]:
    if dirichlet is None:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    if isinstance(dirichlet, dict):
        cells = np.array(sorted(dirichlet), dtype=np.int64)
        vals = np.array([dirichlet[c] for c in cells], dtype=float)
    else:
        cells = np.asarray(dirichlet, dtype=np.int64)
        vals = np.full(len(cells), np.nan)
    if cells.size and (cells.min() < 0 or cells.max() >= n):
        raise InvalidArgument("Dirichlet cell id out of range")
    return cells, vals


def well_source(geomodel: GeoModel, schedule: Schedule, props: FluidProps, n: int) -> np.ndarray:
    """Per-cell volumetric gas injection rate in m^3/s."""
    q = np.zeros(n)
    q[geomodel.well_cell] = schedule.rate / props.rho_g
    return q


def _faces(trans: TransmissibilityMap):
    f = trans.conducting()
    return trans.face_cells[f, 0], trans.face_cells[f, 1], trans.values[f]


def _upwind_total_mobility(s_g, p, left, right, props):
    lg, la = mobilities(s_g, props)
    lt = lg + la
    up = np.where(p[left] >= p[right], left, right)
    lam = lt[up]
    tie = p[left] == p[right]
    lam[tie] = 0.5 * (lt[left[tie]] + lt[right[tie]])
    return lam, up


# ------------------------------------------------------------------ pressure

def solve_pressure(mesh: Mesh, trans: TransmissibilityMap, geomodel: GeoModel, state: SimState,
                   props: FluidProps, schedule: Schedule, dirichlet=None, source=None,
                   max_picard: int = 10) -> np.ndarray:
    """Cell pressures (Pa) from sum_j T_ij lam_ij (p_i - p_j) = q_i.

    ``dirichlet`` maps cell id -> fixed pressure; by default every boundary cell
    (except the injector) is held at ``schedule.boundary_pressure``.  Upstream
    directions of the total mobility are taken from the previous iterate and
    refreshed until they stop changing.  A connected group of cells with no
    Dirichlet cell keeps its previous pressure when it has no source and is
    rejected when it has one (incompressible fluid cannot accumulate).
    """
    n = mesh.n_cells
    if dirichlet is None:
        dirichlet = default_dirichlet(mesh, geomodel, schedule.boundary_pressure)
    dcells, dvals = _as_dirichlet(dirichlet, n)
    if np.isnan(dvals).any():
        raise InvalidArgument("solve_pressure needs Dirichlet values")
    if dcells.size == 0:
        raise IllPosedProblem("no Dirichlet cell: pressure is undetermined")
    q = well_source(geomodel, schedule, props, n) if source is None else np.asarray(source, float)
    left, right, T = _faces(trans)

    p_ref = float(dvals.mean())
    is_d = np.zeros(n, bool)
    is_d[dcells] = True
    free = np.flatnonzero(~is_d)

    # groups of free cells that never reach a Dirichlet cell
    adj = sp.coo_matrix((np.ones(len(left)), (left, right)), shape=(n, n))
    ncomp, label = connected_components(adj, directed=False)
    anchored = np.zeros(ncomp, bool)
    anchored[label[dcells]] = True
    floating = ~anchored[label]
    for comp in np.unique(label[floating]):
        members = label == comp
        if np.any(q[members] != 0):
            raise IllPosedProblem(f"sealed region containing cell {int(np.flatnonzero(members)[0])} "
                                  "has a source but no pressure boundary")

    p_prev = np.asarray(state.p, dtype=float)
    unknown = free[~floating[free]]
    pos = -np.ones(n, dtype=np.int64)
    pos[unknown] = np.arange(len(unknown))
    dp_fixed = np.zeros(n)
    dp_fixed[dcells] = dvals - p_ref

    p_iter = p_prev.copy()
    for _ in range(max_picard):
        lam, up = _upwind_total_mobility(state.s_g, p_iter, left, right, props)
        dp = _solve_linear(n, left, right, T * lam, q, pos, unknown, dp_fixed)
        p_new = p_ref + dp
        p_new[dcells] = dvals
        p_new[floating] = p_prev[floating]
        _, up_new = _upwind_total_mobility(state.s_g, p_new, left, right, props)
        p_iter = p_new
        if np.array_equal(up_new, up):
            break
    return p_iter


def _solve_linear(n, left, right, w, q, pos, unknown, dp_fixed) -> np.ndarray:
    m = len(unknown)
    dp = dp_fixed.copy()
    if m == 0:
        return dp
    rhs = q[unknown].copy()
    rows, cols, vals = [], [], []
    diag = np.zeros(m)
    for a, b in ((left, right), (right, left)):
        ia = pos[a]
        ib = pos[b]
        own = ia >= 0
        np.add.at(diag, ia[own], w[own])
        both = own & (ib >= 0)
        rows.append(ia[both])
        cols.append(ib[both])
        vals.append(-w[both])
        fixed = own & (ib < 0)
        np.add.at(rhs, ia[fixed], w[fixed] * dp_fixed[b[fixed]])
    A = sp.csr_matrix((np.concatenate(vals + [diag]),
                       (np.concatenate(rows + [np.arange(m)]), np.concatenate(cols + [np.arange(m)]))),
                      shape=(m, m))
    x = spsolve(A.tocsc(), rhs)
    res = np.linalg.norm(A @ x - rhs)
    scale = max(np.linalg.norm(rhs), np.linalg.norm(A.diagonal() * x), 1e-300)
    if not np.all(np.isfinite(x)) or res > 1e-10 * scale:
        raise NumericalBlowup(f"pressure solve residual {res:.3e} exceeds tolerance")
    dp[unknown] = x
    return dp


def total_fluxes(trans: TransmissibilityMap, state: SimState, props: FluidProps):
    """Per conducting face: (left, right, flux from left into right in m^3/s, upstream cell)."""
    left, right, T = _faces(trans)
    lam, up = _upwind_total_mobility(state.s_g, state.p, left, right, props)
    return left, right, T * lam * (state.p[left] - state.p[right]), up


# ------------------------------------------------------------------ saturation

def advance_saturation(mesh: Mesh, trans: TransmissibilityMap, state: SimState, props: FluidProps,
                       dt: float, porosity, source=None, dirichlet_cells=(),
                       cfl: float = 0.5) -> SaturationStep:
    """Explicit upstream update of gas saturation over ``dt`` seconds.

    Total face fluxes are frozen from ``state.p``; the gas flux on each face is
    the upstream fractional flow times the total flux, which equals
    T (k_rg/mu_g)_up (p_j - p_i) at the start of the step.  Sub-steps obey
    ``cfl`` with respect to the steepest fractional-flow slope.
    """
    n = mesh.n_cells
    pv = np.broadcast_to(np.asarray(porosity, dtype=float), (n,)) * mesh.volumes
    q = np.zeros(n) if source is None else np.asarray(source, dtype=float)
    dcells = np.asarray(dirichlet_cells, dtype=np.int64)
    left, right, F, _ = total_fluxes(trans, state, props)
    bad = ~np.isfinite(F)
    if bad.any():
        f = int(trans.conducting()[np.flatnonzero(bad)[0]])
        raise NumericalBlowup("non-finite face flux", where=f"face {f}")

    # face upstream / downstream for the frozen total flux
    up = np.where(F >= 0, left, right)
    down = np.where(F >= 0, right, left)
    Fa = np.abs(F)
    # net volumetric inflow of each cell (interior faces + sources)
    net_in = np.bincount(down, Fa, n) - np.bincount(up, Fa, n) + q
    aq_out = np.zeros(n)
    aq_out[dcells] = np.maximum(net_in[dcells], 0.0)
    outflow = np.bincount(up, Fa, n) + aq_out + np.maximum(-q, 0.0)
    slope = max_fractional_slope(props)
    rate = slope * outflow / pv
    rmax = float(rate.max()) if n else 0.0
    nsub = 1 if rmax == 0.0 else max(1, int(np.ceil(dt * rmax / cfl)))
    h = dt / nsub

    s = np.asarray(state.s_g, dtype=float).copy()
    inj = np.maximum(q, 0.0)
    injected = float(inj.sum() * dt)
    out_total = 0.0
    for _ in range(nsub):
        f = fractional_flow(s, props)
        gas = Fa * f[up]
        change = np.bincount(down, gas, n) - np.bincount(up, gas, n) + inj
        aq_gas = aq_out * f
        change -= aq_gas
        s = s + h * change / pv
        out_total += h * float(aq_gas.sum())
        if not np.all(np.isfinite(s)):
            raise NumericalBlowup("non-finite saturation", where=f"cell {int(np.flatnonzero(~np.isfinite(s))[0])}")
        np.clip(s, 0.0, props.s_g_max, out=s)
    return SaturationStep(s, injected, out_total, nsub)


# ------------------------------------------------------------------ driver

def run_simulation(mesh: Mesh, geomodel: GeoModel, props: FluidProps = FluidProps(),
                   schedule: Schedule = Schedule(), trans: TransmissibilityMap | None = None,
                   dirichlet=None) -> SimulationResult:
    """Snapshots at t = 0, interval, ..., n_steps * interval (n_steps + 1 states).

    Snapshot 0 is the initial state (uniform ``initial_pressure``, no gas).
    Later snapshots pair the saturation at report time with the pressure
    solved from it.
    """
    from .mesh import compute_transmissibilities

    n = mesh.n_cells
    if trans is None:
        trans = compute_transmissibilities(mesh, geomodel.perm)
    if dirichlet is None:
        dirichlet = default_dirichlet(mesh, geomodel, schedule.boundary_pressure)
    dcells, _ = _as_dirichlet(dirichlet, n)
    q = well_source(geomodel, schedule, props, n)

    state = SimState(np.full(n, float(schedule.initial_pressure)), np.zeros(n), 0.0)
    result = SimulationResult([state])
    dt = schedule.interval / schedule.pressure_updates
    p = solve_pressure(mesh, trans, geomodel, state, props, schedule, dirichlet, q)
    state = replace(state, p=p)
    for _ in range(schedule.n_steps):
        injected = outflux = 0.0
        for _ in range(schedule.pressure_updates):
            step = advance_saturation(mesh, trans, state, props, dt, geomodel.porosity, q,
                                      dcells, schedule.cfl)
            injected += step.injected
            outflux += step.outflux
            state = SimState(state.p, step.s_g, state.t + dt)
            p = solve_pressure(mesh, trans, geomodel, state, props, schedule, dirichlet, q)
            state = replace(state, p=p)
        result.snapshots.append(state)
        result.injected.append(injected)
        result.outflux.append(outflux)
    return result

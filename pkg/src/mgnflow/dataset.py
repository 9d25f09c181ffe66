"""Scenario generation: mesh, geomodel and ground-truth simulation for one seed."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import MgnFlowError
from .geomodel import GeoModel, make_geomodel, sample_log_perm_field, sample_well_location
from .graph import GraphSample, mesh_to_graph
from .mesh import Mesh, TransmissibilityMap, build_voronoi_mesh, compute_transmissibilities, jittered_seeds
from .simulator import FluidProps, Schedule, SimulationResult, run_simulation

log = logging.getLogger(__name__)

# two fixed impermeable faults of the reference case, in metres
REFERENCE_FAULTS = (((100.0, 300.0), (400.0, 600.0)), ((400.0, 500.0), (800.0, 800.0)))


@dataclass(frozen=True)
class MeshConfig:
    domain: tuple[float, float] = (1000.0, 1000.0)
    n_per_side: int = 15
    jitter: float = 0.25
    refine_radius: float = 100.0
    refine_factor: float = 4.0
    faults: tuple = REFERENCE_FAULTS


@dataclass(frozen=True)
class GeoConfig:
    mean_ln: float = 3.912
    std_ln: float = 0.5
    corr_len: float = 200.0
    porosity: float = 0.2
    well_box: float = 200.0


@dataclass(frozen=True)
class ScenarioConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    geo: GeoConfig = field(default_factory=GeoConfig)
    fluid: FluidProps = field(default_factory=FluidProps)
    schedule: Schedule = field(default_factory=Schedule)


@dataclass(eq=False)
class Realization:
    seed: int
    mesh: Mesh
    geomodel: GeoModel
    trans: TransmissibilityMap
    simulation: SimulationResult

    def graph(self, features: str = "baseline", variable: str = "s_g",
              props: FluidProps = FluidProps()) -> GraphSample:
        return mesh_to_graph(self.mesh, self.trans, self.geomodel, self.simulation.snapshots,
                             features, variable, props, sample_id=f"seed{self.seed}")


def _subseed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def make_realization(seed: int, cfg: ScenarioConfig = ScenarioConfig()) -> Realization:
    mc, gc = cfg.mesh, cfg.geo
    well = sample_well_location(mc.domain, _subseed(seed, 1), gc.well_box)
    seeds = jittered_seeds(mc.domain, mc.n_per_side, mc.jitter,
                           np.random.default_rng(_subseed(seed, 2)))
    mesh = build_voronoi_mesh(seeds, mc.domain, mc.faults or None, well, mc.refine_radius,
                              mc.refine_factor)
    perm = sample_log_perm_field(mesh, gc.mean_ln, gc.std_ln, gc.corr_len, _subseed(seed, 3))
    geo = make_geomodel(mesh, well, perm, gc.porosity)
    trans = compute_transmissibilities(mesh, geo.perm)
    sim = run_simulation(mesh, geo, cfg.fluid, cfg.schedule, trans)
    return Realization(seed, mesh, geo, trans, sim)


SPLIT_SEED_BASE = {"train": 0, "test": 1_000_000}


def split_seeds(seed: int, split: str, count: int) -> list[int]:
    """Realization seeds of a split; train and test never share a seed."""
    return [seed * 10_000_000 + SPLIT_SEED_BASE[split] + k for k in range(count)]


def generate(seeds, cfg: ScenarioConfig = ScenarioConfig(),
             max_failure_fraction: float = 0.1) -> tuple[list[Realization], dict[int, str]]:
    """Realizations for every seed; failed seeds are skipped and reported.

    Raises the last failure when more than ``max_failure_fraction`` of seeds fail.
    """
    seeds = list(seeds)
    done, failed = [], {}
    last: MgnFlowError | None = None
    for s in seeds:
        try:
            done.append(make_realization(s, cfg))
        except MgnFlowError as exc:
            log.warning("realization %d skipped: %s", s, exc)
            failed[s] = str(exc)
            last = exc
    if seeds and len(failed) > max_failure_fraction * len(seeds):
        raise type(last)(f"{len(failed)} of {len(seeds)} realizations failed; last: {last}")
    return done, failed

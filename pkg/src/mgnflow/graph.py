"""Graph samples built from simulated meshes, and per-step detrending statistics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateStats, InvalidConfig
from .geomodel import GeoModel
from .mesh import MILLIDARCY, Mesh, TransmissibilityMap
from .simulator import FluidProps, relperm

FEATURE_CONFIGS = ("baseline", "trans", "relperm", "both")
_ALIASES = {
    "baseline": "baseline",
    "trans": "trans", "+trans": "trans", "transmissibility": "trans", "+transmissibility": "trans",
    "relperm": "relperm", "+relperm": "relperm",
    "both": "both", "+both": "both",
}
VARIABLES = ("s_g", "p_g")
STATIC_CHANNELS = ("perm_md", "volume", "x", "y", "type_interior", "type_injector",
                   "type_fault", "type_boundary")
STD_FLOOR = 1e-8


def canonical_features(name: str) -> str:
    try:
        return _ALIASES[name]
    except KeyError:
        raise InvalidConfig(f"unknown feature configuration {name!r}; "
                            f"choose from {', '.join(FEATURE_CONFIGS)}") from None


def uses_trans(features: str) -> bool:
    return canonical_features(features) in ("trans", "both")


def uses_relperm(features: str) -> bool:
    return canonical_features(features) in ("relperm", "both")


def node_width(features: str) -> int:
    return len(STATIC_CHANNELS) + 1 + int(uses_relperm(features))


def edge_width(features: str) -> int:
    return 3 + int(uses_trans(features))


@dataclass(frozen=True, eq=False)
class GraphSample:
    """One mesh/realization in graph form.

    ``dynamic[n]`` is the physical field of ``variable`` at snapshot n
    (n = 0 .. n_T); ``relperm_input[n]`` is k_rg of the gas saturation at
    snapshot n - 1 (snapshot 0 for n = 0) when the configuration asks for it.
    """

    n_cells: int
    edges: np.ndarray            # [E, 2] directed (i, j)
    node_static: np.ndarray      # [n_C, 8]
    dynamic: np.ndarray          # [n_T + 1, n_C]
    edge_features: np.ndarray    # [E, 3 or 4]
    features: str = "baseline"
    variable: str = "s_g"
    relperm_input: np.ndarray | None = None
    saturation: np.ndarray | None = None   # gas saturation snapshots, kept for k_r
    props: FluidProps = field(default_factory=FluidProps)
    sample_id: str = ""

    @property
    def n_T(self) -> int:
        return self.dynamic.shape[0] - 1

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def truncated(self, n_T: int) -> "GraphSample":
        """The same sample restricted to snapshots 0 .. n_T."""
        if n_T > self.n_T:
            raise ValueError(f"sample has only {self.n_T} steps")
        kr = None if self.relperm_input is None else self.relperm_input[: n_T + 1]
        sat = None if self.saturation is None else self.saturation[: n_T + 1]
        return GraphSample(self.n_cells, self.edges, self.node_static, self.dynamic[: n_T + 1],
                           self.edge_features, self.features, self.variable, kr, sat,
                           self.props, self.sample_id)

    def node_channels(self, step: int) -> np.ndarray:
        """Physical node features [n_C, n_N] at snapshot ``step``."""
        cols = [self.node_static, self.dynamic[step][:, None]]
        if self.relperm_input is not None:
            cols.append(self.relperm_input[step][:, None])
        return np.hstack(cols)


def mesh_to_graph(mesh: Mesh, trans: TransmissibilityMap | None, geomodel: GeoModel,
                  snapshots, features: str = "baseline", variable: str = "s_g",
                  props: FluidProps = FluidProps(), sample_id: str = "") -> GraphSample:
    """Nodes are cells (ordered by id); each conducting face yields edges (i, j) and (j, i).

    ``snapshots`` is a sequence of states with ``p`` and ``s_g`` arrays.
    """
    features = canonical_features(features)
    if variable not in VARIABLES:
        raise InvalidConfig(f"unknown variable {variable!r}")
    if len(snapshots) == 0:
        raise InvalidConfig("need at least one snapshot")
    if trans is None:
        if uses_trans(features):
            raise InvalidConfig(f"feature configuration {features!r} needs transmissibilities")
        from .mesh import compute_transmissibilities
        trans = compute_transmissibilities(mesh, geomodel.perm)
    if uses_relperm(features) and variable != "s_g":
        raise InvalidConfig("the relative-permeability channel is defined for the saturation model only")

    faces = trans.conducting()
    i = trans.face_cells[faces, 0]
    j = trans.face_cells[faces, 1]
    edges = np.empty((2 * len(faces), 2), dtype=np.int64)
    edges[0::2, 0], edges[0::2, 1] = i, j
    edges[1::2, 0], edges[1::2, 1] = j, i

    x = mesh.centroids
    d = x[edges[:, 1]] - x[edges[:, 0]]
    cols = [d, np.linalg.norm(d, axis=1)[:, None]]
    if uses_trans(features):
        # k in mD keeps the channel O(1..1e3) instead of O(1e-13)
        cols.append(np.repeat(trans.values[faces] / MILLIDARCY, 2)[:, None])
    edge_features = np.hstack(cols)

    static = np.hstack([geomodel.perm_md[:, None], mesh.volumes[:, None], x, geomodel.cell_type])
    sat = np.array([np.asarray(s.s_g, dtype=float) for s in snapshots])
    pres = np.array([np.asarray(s.p, dtype=float) for s in snapshots])
    dynamic = sat if variable == "s_g" else pres
    kr = None
    if uses_relperm(features):
        lagged = np.vstack([sat[:1], sat[:-1]])
        kr = relperm("g", lagged, props)
    return GraphSample(mesh.n_cells, edges, static, dynamic, edge_features, features, variable,
                       kr, sat, props, sample_id)


# ------------------------------------------------------------------ normalization

@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-snapshot, per-channel mean/std of node channels plus pooled fallbacks.

    Row ``n`` of ``mean``/``std`` covers snapshot n; snapshots past the last
    row use the pooled statistics.  Edge features are static and get one set.
    """

    mean: np.ndarray          # [n_steps, C]
    std: np.ndarray           # [n_steps, C]
    pooled_mean: np.ndarray   # [C]
    pooled_std: np.ndarray    # [C]
    edge_mean: np.ndarray     # [n_E]
    edge_std: np.ndarray      # [n_E]
    n_samples: int

    @property
    def n_steps(self) -> int:
        return self.mean.shape[0]

    @property
    def n_channels(self) -> int:
        return self.mean.shape[1]

    @property
    def dynamic_channel(self) -> int:
        return len(STATIC_CHANNELS)

    def at(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        if step < 0:
            raise ValueError("step must be >= 0")
        if step < self.n_steps:
            return self.mean[step], self.std[step]
        return self.pooled_mean, self.pooled_std

    def arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean, "std": self.std, "pooled_mean": self.pooled_mean,
                "pooled_std": self.pooled_std, "edge_mean": self.edge_mean,
                "edge_std": self.edge_std, "n_samples": np.array([self.n_samples], dtype=np.int64)}

    @classmethod
    def from_arrays(cls, arrs: dict[str, np.ndarray]) -> "NormStats":
        return cls(arrs["mean"], arrs["std"], arrs["pooled_mean"], arrs["pooled_std"],
                   arrs["edge_mean"], arrs["edge_std"], int(arrs["n_samples"][0]))


def _mean_std(x: np.ndarray, axis=0):
    if x.shape[axis] == 0:
        # edgeless graphs: identity scaling rather than NaN
        width = x.shape[1 - axis]
        return np.zeros(width), np.ones(width)
    mu = x.mean(axis=axis)
    sd = x.std(axis=axis)
    return mu, np.maximum(sd, STD_FLOOR)


def detrend_fit(samples, n_T: int | None = None) -> NormStats:
    """Statistics over all nodes of all samples, separately for snapshots 0 .. n_T."""
    samples = list(samples)
    if len(samples) < 2:
        raise DegenerateStats("detrending statistics need at least two training samples")
    if n_T is None:
        n_T = min(s.n_T for s in samples)
    if any(s.n_T < n_T for s in samples):
        raise DegenerateStats(f"every sample needs {n_T} steps")
    per_step = [np.vstack([s.node_channels(n) for s in samples]) for n in range(n_T + 1)]
    mean, std = zip(*(_mean_std(x) for x in per_step))
    pooled_mean, pooled_std = _mean_std(np.vstack(per_step))
    edge_mean, edge_std = _mean_std(np.vstack([s.edge_features for s in samples]))
    return NormStats(np.array(mean), np.array(std), pooled_mean, pooled_std,
                     edge_mean, edge_std, len(samples))


def detrend_apply(x, stats: NormStats, step: int, channel: int | None = None) -> np.ndarray:
    """z-score ``x`` with the statistics of snapshot ``step``.

    ``x`` is [n, C] when ``channel`` is None, else the values of that channel.
    """
    mean, std = stats.at(step)
    if channel is not None:
        mean, std = mean[channel], std[channel]
    return (np.asarray(x, dtype=float) - mean) / std


def detrend_invert(xt, stats: NormStats, step: int, channel: int | None = None) -> np.ndarray:
    mean, std = stats.at(step)
    if channel is not None:
        mean, std = mean[channel], std[channel]
    return np.asarray(xt, dtype=float) * std + mean


def normalize_edges(edge_features: np.ndarray, stats: NormStats) -> np.ndarray:
    return (edge_features - stats.edge_mean) / stats.edge_std


# ------------------------------------------------------------------ batching

@dataclass(eq=False)
class GraphBatch:
    """Several samples merged into one disconnected graph."""

    samples: list[GraphSample]
    offsets: np.ndarray
    edges: np.ndarray
    edge_features: np.ndarray
    node_static: np.ndarray
    dynamic: np.ndarray
    relperm_input: np.ndarray | None

    @property
    def n_nodes(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_T(self) -> int:
        return self.dynamic.shape[0] - 1

    @property
    def features(self) -> str:
        return self.samples[0].features

    @property
    def props(self) -> FluidProps:
        return self.samples[0].props

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        """Cut a per-node array (last axis) back into per-sample pieces."""
        return [values[..., a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def collate(samples) -> GraphBatch:
    samples = list(samples)
    if not samples:
        raise ValueError("empty batch")
    n_T = samples[0].n_T
    feats = samples[0].features
    if any(s.n_T != n_T for s in samples):
        raise ValueError("samples in a batch must share n_T")
    if any(s.features != feats or s.variable != samples[0].variable for s in samples):
        raise ValueError("samples in a batch must share features and variable")
    sizes = [s.n_cells for s in samples]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    edges = np.vstack([s.edges + o for s, o in zip(samples, offsets[:-1])]).astype(np.int64)
    kr = None
    if samples[0].relperm_input is not None:
        kr = np.hstack([s.relperm_input for s in samples])
    return GraphBatch(samples, offsets, edges.reshape(-1, 2),
                      np.vstack([s.edge_features for s in samples]),
                      np.vstack([s.node_static for s in samples]),
                      np.hstack([s.dynamic for s in samples]), kr)


def adjacency(edges: np.ndarray, n: int) -> sp.csr_matrix:
    """Binary symmetric adjacency from a (symmetric) directed edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    a = sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    a = a + a.T
    a.data[:] = 1.0
    a.setdiag(0)
    a.eliminate_zeros()
    return a

"""MGN-LSTM surrogate: encoder, message-passing processor, Chebyshev GConvLSTM, decoder.

All learnable weights live in a :class:`ModelParams` mapping of name to
:class:`~mgnflow.autodiff.Tensor`.  The eight GConvLSTM kernels are stored
fused in one matrix ``lstm.W`` of shape [K * 2 n_H, 4 n_H]: row block
``k`` holds the order-k weights for the input V (first n_H rows) and the
hidden state H (next n_H rows); column blocks are the gates i, f, c, o.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidArgument, InvalidConfig, ShapeError
from .graph import (STATIC_CHANNELS, GraphBatch, GraphSample, NormStats, adjacency,
                    detrend_apply, detrend_invert, edge_width, node_width,
                    normalize_edges, uses_relperm)
from .simulator import relperm

VARIANTS = ("mgn_lstm", "mgn")
GATES = ("i", "f", "c", "o")
Y_CHANNEL = len(STATIC_CHANNELS)
KR_CHANNEL = Y_CHANNEL + 1


@dataclass(frozen=True)
class ModelConfig:
    latent: int = 100
    layers: int = 10
    cheb_order: int = 8
    node_in: int = 9
    edge_in: int = 3
    variant: str = "mgn_lstm"

    def __post_init__(self):
        if self.latent < 1 or self.layers < 1 or self.cheb_order < 1:
            raise InvalidConfig("latent, layers and cheb_order must all be >= 1")
        if self.node_in < 1 or self.edge_in < 1:
            raise InvalidConfig("input widths must be >= 1")
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    @classmethod
    def for_features(cls, features: str, **kw) -> "ModelConfig":
        return cls(node_in=node_width(features), edge_in=edge_width(features), **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    tensors: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def n_values(self) -> int:
        return sum(t.value.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, OrderedDict(
            (k, Tensor(t.value.copy(), requires_grad=True, name=k)) for k, t in self.tensors.items()))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def gate_weight(self, gate: str, source: str, k: int) -> np.ndarray:
        """View of the order-``k`` kernel of ``gate`` applied to ``source`` ('x' or 'h')."""
        H = self.config.latent
        g = GATES.index(gate)
        row = (2 * k + (source == "h")) * H
        return self.tensors["lstm.W"].value[row:row + H, g * H:(g + 1) * H]


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _mlp_spec(prefix: str, din: int, H: int, norm: bool, dout: int | None = None):
    dout = H if dout is None else dout
    spec = [(f"{prefix}.l1.W", (din, H), (din, H)), (f"{prefix}.l1.b", (H,), None),
            (f"{prefix}.l2.W", (H, dout), (H, dout)), (f"{prefix}.l2.b", (dout,), None)]
    if norm:
        spec += [(f"{prefix}.ln.gamma", (dout,), "one"), (f"{prefix}.ln.beta", (dout,), None)]
    return spec


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple, object]]:
    """(name, shape, init) for every parameter, in canonical order."""
    H, K = config.latent, config.cheb_order
    spec = _mlp_spec("enc.node", config.node_in, H, True)
    spec += _mlp_spec("enc.edge", config.edge_in, H, True)
    for layer in range(config.layers):
        spec += _mlp_spec(f"proc.{layer}.edge", 3 * H, H, True)
        spec += _mlp_spec(f"proc.{layer}.node", 2 * H, H, True)
    if config.variant == "mgn_lstm":
        spec += [("lstm.W", (2 * K * H, 4 * H), (H, H)), ("lstm.b", (4 * H,), None),
                 ("lstm.w_co", (H,), None)]
    spec += _mlp_spec("dec", H, H, False, dout=1)
    return spec


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape, init in param_shapes(config):
        if init is None:
            value = np.zeros(shape)
        elif init == "one":
            value = np.ones(shape)
        else:
            value = _glorot(rng, init[0], init[1], shape)
        tensors[name] = Tensor(value, requires_grad=True, name=name)
    return ModelParams(config, tensors)


# ------------------------------------------------------------------ building blocks

def mlp(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    """Linear -> ReLU -> Linear, then LayerNorm when the block has one."""
    h = ad.relu(ad.affine(x, params[f"{prefix}.l1.W"], params[f"{prefix}.l1.b"]))
    h = ad.affine(h, params[f"{prefix}.l2.W"], params[f"{prefix}.l2.b"])
    gamma = params.tensors.get(f"{prefix}.ln.gamma")
    if gamma is not None:
        h = ad.layer_norm(h, gamma, params[f"{prefix}.ln.beta"])
    return h


def encode(node_feats: Tensor, edge_feats: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    cfg = params.config
    if node_feats.shape[1] != cfg.node_in:
        raise ShapeError(f"node input width {node_feats.shape[1]} != configured {cfg.node_in}")
    if edge_feats.shape[1] != cfg.edge_in:
        raise ShapeError(f"edge input width {edge_feats.shape[1]} != configured {cfg.edge_in}")
    return mlp(params, "enc.node", node_feats), mlp(params, "enc.edge", edge_feats)


def process(V: Tensor, E: Tensor, edges: np.ndarray, params: ModelParams) -> Tensor:
    """m residual message-passing rounds; edge (i, j) messages are summed into node i."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src, dst = edges[:, 0], edges[:, 1]
    n = V.shape[0]
    for layer in range(params.config.layers):
        msg_in = ad.concat([E, ad.gather_rows(V, src), ad.gather_rows(V, dst)], axis=1)
        E = ad.add(mlp(params, f"proc.{layer}.edge", msg_in), E)
        agg = ad.scatter_sum(E, src, n)
        V = ad.add(mlp(params, f"proc.{layer}.node", ad.concat([V, agg], axis=1)), V)
    return V


def scaled_laplacian(edges: np.ndarray, n: int) -> sp.csr_matrix:
    """-D^-1/2 A D^-1/2 (the rescaled normalized Laplacian with lambda_max = 2)."""
    a = adjacency(edges, n)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros(n)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    return (-(d @ a @ d)).tocsr()


def chebyshev_basis(X: Tensor, lap: sp.spmatrix, K: int) -> list[Tensor]:
    """[T_0(L)X, ..., T_{K-1}(L)X] via the three-term recurrence."""
    basis = [X]
    if K > 1:
        basis.append(ad.spmm(lap, X))
    for _ in range(2, K):
        basis.append(ad.sub(ad.scale(ad.spmm(lap, basis[-1]), 2.0), basis[-2]))
    return basis


def cheb_conv(X: Tensor, W: Tensor, lap: sp.spmatrix, K: int) -> Tensor:
    """sum_k T_k(L) X W_k with ``W`` stacked as [K * d_in, d_out]."""
    if W.shape[0] != K * X.shape[1]:
        raise ShapeError(f"cheb_conv: weight rows {W.shape[0]} != K * d_in = {K * X.shape[1]}")
    basis = chebyshev_basis(X, lap, K)
    stacked = basis[0] if K == 1 else ad.concat(basis, axis=1)
    return ad.matmul(stacked, W)


@dataclass(eq=False)
class RecurrentState:
    C: Tensor
    H: Tensor

    @classmethod
    def zeros(cls, n: int, latent: int) -> "RecurrentState":
        return cls(Tensor(np.zeros((n, latent))), Tensor(np.zeros((n, latent))))


def gconv_lstm_step(V: Tensor, state: RecurrentState, lap: sp.spmatrix,
                    params: ModelParams) -> RecurrentState:
    H = params.config.latent
    K = params.config.cheb_order
    # the basis of [V, H] interleaves per order as the fused weight expects
    z = cheb_conv(ad.concat([V, state.H], axis=1), params["lstm.W"], lap, K)
    z = ad.add_bias(z, params["lstm.b"])
    i = ad.sigmoid(ad.slice_cols(z, 0, H))
    f = ad.sigmoid(ad.slice_cols(z, H, 2 * H))
    c_hat = ad.tanh(ad.slice_cols(z, 2 * H, 3 * H))
    C = ad.add(ad.mul(f, state.C), ad.mul(i, c_hat))
    o = ad.sigmoid(ad.add(ad.slice_cols(z, 3 * H, 4 * H), ad.mul_row(C, params["lstm.w_co"])))
    return RecurrentState(C, ad.mul(o, ad.tanh(C)))


def decode(H: Tensor, params: ModelParams) -> Tensor:
    """[n, 1] prediction in normalized label space."""
    return mlp(params, "dec", H)


# ------------------------------------------------------------------ graphs ready for the model

@dataclass(eq=False)
class PreparedGraph:
    """Normalization-independent structure plus cached normalized inputs."""

    n_nodes: int
    edges: np.ndarray
    lap: sp.csr_matrix
    edge_inputs: np.ndarray
    static: np.ndarray
    features: str
    _static_cache: dict = field(default_factory=dict)

    def static_inputs(self, stats: NormStats, step: int) -> np.ndarray:
        key = min(step, stats.n_steps)
        hit = self._static_cache.get(key)
        if hit is None:
            mean, std = stats.at(step)
            hit = (self.static - mean[:Y_CHANNEL]) / std[:Y_CHANNEL]
            self._static_cache[key] = hit
        return hit


def prepare(graph: GraphSample | GraphBatch, stats: NormStats) -> PreparedGraph:
    n = graph.n_cells if isinstance(graph, GraphSample) else graph.n_nodes
    return PreparedGraph(n, graph.edges, scaled_laplacian(graph.edges, n),
                         normalize_edges(graph.edge_features, stats), graph.node_static,
                         graph.features)


def node_inputs(g: PreparedGraph, stats: NormStats, step: int, y: Tensor,
                kr: np.ndarray | None = None) -> Tensor:
    """Normalized node features at ``step``; ``y`` is the normalized dynamic column [n, 1]."""
    cols = [Tensor(g.static_inputs(stats, step)), y]
    if uses_relperm(g.features):
        if kr is None:
            raise InvalidArgument("this feature configuration needs the k_r channel")
        cols.append(Tensor(detrend_apply(kr, stats, step, KR_CHANNEL)[:, None]))
    return ad.concat(cols, axis=1)


def step(params: ModelParams, g: PreparedGraph, x: Tensor, E0: Tensor | None,
         state: RecurrentState | None) -> tuple[Tensor, RecurrentState | None, Tensor]:
    """One autoregressive step; returns (prediction [n, 1], new state, processed latents)."""
    if x.shape[1] != params.config.node_in:
        raise ShapeError(f"node input width {x.shape[1]} != configured {params.config.node_in}")
    V0 = mlp(params, "enc.node", x)
    if E0 is None:
        E0 = encode_edges(params, g)
    Vm = process(V0, E0, g.edges, params)
    if params.config.variant == "mgn":
        return decode(Vm, params), None, Vm
    if state is None:
        state = RecurrentState.zeros(g.n_nodes, params.config.latent)
    state = gconv_lstm_step(Vm, state, g.lap, params)
    return decode(state.H, params), state, Vm


def encode_edges(params: ModelParams, g: PreparedGraph) -> Tensor:
    if g.edge_inputs.shape[1] != params.config.edge_in:
        raise ShapeError(f"edge input width {g.edge_inputs.shape[1]} != configured "
                         f"{params.config.edge_in}")
    return mlp(params, "enc.edge", Tensor(g.edge_inputs))


def check_compatible(params: ModelParams, features: str) -> None:
    cfg = params.config
    if cfg.node_in != node_width(features) or cfg.edge_in != edge_width(features):
        raise InvalidConfig(f"model widths ({cfg.node_in}, {cfg.edge_in}) do not fit feature "
                            f"configuration {features!r}")


def rollout(params: ModelParams, sample: GraphSample, stats: NormStats, n_steps: int):
    """Autoregressive prediction from the true initial state.

    Returns a :class:`~mgnflow.metrics.RolloutResult` with physical fields for
    snapshots 1 .. n_steps.
    """
    from .metrics import RolloutResult

    if n_steps < 1:
        raise InvalidArgument("n_steps must be >= 1")
    if n_steps > sample.n_T:
        raise InvalidArgument(f"sample holds {sample.n_T} steps, asked for {n_steps}")
    check_compatible(params, sample.features)
    g = prepare(sample, stats)
    with_kr = uses_relperm(sample.features)
    preds = np.empty((n_steps, sample.n_cells))
    kr_used = np.empty((n_steps, sample.n_cells)) if with_kr else None
    y = Tensor(detrend_apply(sample.dynamic[0], stats, 0, Y_CHANNEL)[:, None])
    # state one step behind the current input; the true initial state for n = 0
    prev_phys = cur_phys = sample.dynamic[0]
    E0 = encode_edges(params, g)
    state = None
    for n in range(n_steps):
        kr = None
        if with_kr:
            # k_r of the previous prediction; the true initial state at n = 0
            kr = relperm("g", prev_phys, sample.props)
            kr_used[n] = kr
        x = node_inputs(g, stats, n, y, kr)
        y, state, _ = step(params, g, x, E0, state)
        phys = detrend_invert(y.value[:, 0], stats, n + 1, Y_CHANNEL)
        preds[n] = phys
        prev_phys, cur_phys = cur_phys, phys
    return RolloutResult(preds, sample.dynamic[1:n_steps + 1].copy(), sample.variable,
                         sample.sample_id, kr_used)

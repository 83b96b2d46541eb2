"""The four text-graph networks: GCN-Net, GCN-gPool-Net, hConv-Net, hConv-gPool-Net.

Every network stacks four feature layers (GCN or hConv). The pooling
variants put a gPool layer after layers 2 and 3, each keeping half of the
remaining nodes. Global max-pools of the outputs of layers 2, 3 and 4 are
concatenated, passed through dropout and a final dense layer.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DegenerateGraphError, ShapeError
from .graph import extract_subgraph, normalized_adjacency
from .layers import (
    gcn_forward,
    gpool_forward,
    hconv_forward,
    init_gcn,
    init_gpool,
    init_hconv,
    pool_size,
)

ARCHS = ("gcn_net", "gcn_gpool_net", "hconv_net", "hconv_gpool_net")
DEFAULT_CHANNELS = (1024, 1024, 512, 256)
TINY_CHANNELS = (4, 4, 2, 2)
POOL_AFTER = (2, 3)
READOUT_FROM = (2, 3, 4)


@dataclass
class ModelSpec:
    arch: str
    n_classes: int
    input_dim: int
    channels: tuple = DEFAULT_CHANNELS
    kernel_width: int = 3
    dropout_keep: float = 0.55
    renormalize_after_pool: bool = True
    gpool_gate: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose from {ARCHS}")
        if len(self.channels) != 4:
            raise ConfigError(f"expected 4 channel widths, got {self.channels}")
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"channel widths must be positive: {self.channels}")
        if self.uses_hconv and any(c % 2 for c in self.channels):
            raise ConfigError(f"hConv layers need even widths: {self.channels}")
        if self.kernel_width % 2 == 0:
            raise ConfigError(f"kernel width must be odd, got {self.kernel_width}")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")

    @property
    def uses_hconv(self):
        return self.arch.startswith("hconv")

    @property
    def uses_gpool(self):
        return self.arch.endswith("gpool_net")

    @property
    def pool_after(self):
        return POOL_AFTER if self.uses_gpool else ()

    @property
    def readout_dim(self):
        return sum(self.channels[i - 1] for i in READOUT_FROM)

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DenseParams:
    W: ad.DiffTensor
    b: ad.DiffTensor

    def named(self):
        return {"W": self.W, "b": self.b}


@dataclass
class ModelParams:
    layers: list
    pools: dict = field(default_factory=dict)  # layer number (1-based) -> GPoolParams
    dense: DenseParams = None

    def named(self):
        """Flat ``name -> DiffTensor`` mapping in a fixed order."""
        out = {}
        for i, layer in enumerate(self.layers, start=1):
            for key, t in layer.named().items():
                out[f"layer{i}.{key}"] = t
            if i in self.pools:
                out[f"pool{i}.p"] = self.pools[i].p
        for key, t in self.dense.named().items():
            out[f"dense.{key}"] = t
        return out

    def zero_grad(self):
        for t in self.named().values():
            t.zero_grad()


def build(spec, seed, dtype=np.float32):
    rng = np.random.default_rng(seed)
    layers, pools = [], {}
    c_in = spec.input_dim
    for i, c_out in enumerate(spec.channels, start=1):
        if spec.uses_hconv:
            layers.append(init_hconv(rng, c_in, c_out, spec.kernel_width, dtype))
        else:
            layers.append(init_gcn(rng, c_in, c_out, dtype))
        if i in spec.pool_after:
            pools[i] = init_gpool(rng, c_out, dtype)
        c_in = c_out
    d = init_gcn(rng, spec.readout_dim, spec.n_classes, dtype)
    return ModelParams(layers=layers, pools=pools, dense=DenseParams(d.W, d.b))


def params_from_arrays(spec, arrays, dtype=None):
    """Rebuild a ModelParams from a ``name -> ndarray`` mapping (e.g. a checkpoint)."""
    template = build(spec, seed=0, dtype=np.float64 if dtype is None else dtype)
    named = template.named()
    missing = set(named) - set(arrays)
    extra = set(arrays) - set(named)
    if missing or extra:
        raise ConfigError(f"parameter names do not match spec: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, t in named.items():
        value = np.asarray(arrays[name])
        if value.shape != t.shape:
            raise ShapeError(f"{name}: shape {value.shape} != expected {t.shape}")
        t.value = value.astype(dtype or value.dtype).copy()
    return template


def forward_arrays(params, spec, adjacency, features, train=False, rng=None, trace=None,
                   a_norm=None):
    """Run the network on a graph given as real-node arrays only (no padding).

    ``a_norm`` may carry a precomputed normalized adjacency for ``adjacency``.

    ``trace``, if a list, receives one ``(stage, n_nodes, n_channels)`` tuple
    per layer and pooling step.
    """
    n = adjacency.shape[0]
    if n == 0:
        raise DegenerateGraphError("graph has no real nodes")
    dtype = params.dense.W.dtype
    x = ad.constant(np.asarray(features, dtype=dtype))
    if x.shape != (n, spec.input_dim):
        raise ShapeError(f"features {x.shape} do not match ({n}, {spec.input_dim})")
    a = np.asarray(adjacency)
    if a_norm is None:
        a_norm = normalized_adjacency(a)
    mask = np.ones(n, dtype=bool)
    readouts = []
    for i, layer in enumerate(params.layers, start=1):
        if spec.uses_hconv:
            x = hconv_forward(a_norm, x, layer)
        else:
            x = gcn_forward(a_norm, x, layer)
        if trace is not None:
            trace.append((f"layer{i}", x.shape[0], x.shape[1]))
        if i in READOUT_FROM:
            readouts.append(ad.masked_global_max_pool(x, mask))
        if i in params.pools:
            k = pool_size(int(mask.sum()))
            a, x, idx = gpool_forward(a, x, params.pools[i], k, mask, gate=spec.gpool_gate)
            if spec.renormalize_after_pool:
                a_norm = normalized_adjacency(a)
            else:
                a_norm = extract_subgraph(a_norm, idx)
            mask = mask[idx]
            if trace is not None:
                trace.append((f"pool{i}", x.shape[0], x.shape[1]))
    h = ad.concat(readouts)
    if train:
        if rng is None:
            raise ValueError("training forward needs an rng for dropout")
        h = ad.dropout(h, spec.dropout_keep, rng, train=True)
    return ad.add_bias(ad.matmul(h, params.dense.W), params.dense.b)


def forward(params, spec, graph, train=False, rng=None, trace=None):
    """Logits (length ``n_classes``) for a TextGraph. Padding rows are dropped first."""
    if graph.degenerate:
        raise DegenerateGraphError("graph has no real nodes")
    feats = graph.features[:graph.n_real]
    return forward_arrays(params, spec, graph.real_adjacency, feats, train, rng, trace,
                          a_norm=graph.normalized)


@dataclass
class ParamCount:
    groups: dict
    gpool_overhead: int
    total: int

    @property
    def overhead_ratio(self):
        """gPool parameters as a fraction of the same network without them."""
        base = self.total - self.gpool_overhead
        return self.gpool_overhead / base if base else 0.0

    @property
    def overhead_share(self):
        """gPool parameters as a fraction of this network's total."""
        return self.gpool_overhead / self.total if self.total else 0.0

    def as_dict(self):
        return {
            "groups": dict(self.groups),
            "gpool_overhead": self.gpool_overhead,
            "total": self.total,
            "overhead_ratio": self.overhead_ratio,
            "overhead_share": self.overhead_share,
        }


def param_count(params):
    groups = {}
    for name, t in params.named().items():
        group = name.split(".", 1)[0]
        groups[group] = groups.get(group, 0) + int(t.value.size)
    overhead = sum(v for k, v in groups.items() if k.startswith("pool"))
    return ParamCount(groups=groups, gpool_overhead=overhead, total=sum(groups.values()))

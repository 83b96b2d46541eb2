"""GCN, graph pooling (gPool) and hybrid convolution (hConv) layers."""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .graph import extract_subgraph


@dataclass
class GcnParams:
    W: ad.DiffTensor
    b: ad.DiffTensor

    @property
    def out_channels(self):
        return self.W.shape[1]

    def named(self):
        return {"W": self.W, "b": self.b}


@dataclass
class GPoolParams:
    p: ad.DiffTensor

    def named(self):
        return {"p": self.p}


@dataclass
class HConvParams:
    """A GCN half and a 1-D convolution half, each producing c_out / 2 channels."""

    gcn: GcnParams
    kernel: ad.DiffTensor
    kernel_bias: ad.DiffTensor

    @property
    def out_channels(self):
        return self.gcn.out_channels + self.kernel.shape[2]

    def named(self):
        return {
            "conv.K": self.kernel,
            "conv.b": self.kernel_bias,
            "gcn.W": self.gcn.W,
            "gcn.b": self.gcn.b,
        }


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


def init_gcn(rng, c_in, c_out, dtype=np.float32):
    return GcnParams(
        W=ad.param(glorot_uniform(rng, (c_in, c_out), c_in, c_out, dtype)),
        b=ad.param(np.zeros(c_out, dtype=dtype)),
    )


def init_gpool(rng, channels, dtype=np.float32):
    return GPoolParams(p=ad.param(rng.uniform(-0.1, 0.1, size=channels).astype(dtype)))


def init_hconv(rng, c_in, c_out, width=3, dtype=np.float32):
    if c_out % 2:
        raise ConfigError(f"hConv output channels must be even, got {c_out}")
    if width % 2 == 0:
        raise ConfigError(f"kernel width must be odd, got {width}")
    half = c_out // 2
    kernel = glorot_uniform(rng, (width, c_in, half), width * c_in, width * half, dtype)
    return HConvParams(
        gcn=init_gcn(rng, c_in, half, dtype),
        kernel=ad.param(kernel),
        kernel_bias=ad.param(np.zeros(half, dtype=dtype)),
    )


def gcn_forward(a_norm, x, params, activation=True):
    """relu(A_norm @ X @ W + b). ``a_norm`` is a plain (constant) matrix."""
    x = ad.constant(x)
    a_norm = np.asarray(a_norm)
    if a_norm.shape != (x.shape[0], x.shape[0]):
        raise ShapeError(f"adjacency {a_norm.shape} does not match {x.shape[0]} feature rows")
    h = ad.matmul(a_norm.astype(x.dtype, copy=False), ad.matmul(x, params.W))
    h = ad.add_bias(h, params.b)
    return ad.relu(h) if activation else h


def gpool_scores(x, params):
    """Differentiable node scores ``|X p|``."""
    x = ad.constant(x)
    if params.p.shape != (x.shape[1],):
        raise ShapeError(f"projection vector {params.p.shape} does not match {x.shape[1]} channels")
    return ad.abs(ad.matmul(x, params.p))


def ranking_scores(y, mask=None):
    """Score values for ranking, with masked (padded) nodes pushed to -inf."""
    values = np.asarray(y.value if isinstance(y, ad.DiffTensor) else y, dtype=np.float64)
    if mask is None:
        return values.copy()
    return np.where(np.asarray(mask, dtype=bool), values, -np.inf)


def rank_topk(y, k):
    """Indices of the ``k`` largest finite scores, returned in ascending index order.

    Ties go to the smaller index.
    """
    y = np.asarray(y, dtype=np.float64)
    available = int(np.isfinite(y).sum())
    if not 1 <= k <= available:
        raise ConfigError(f"k={k} outside [1, {available}]")
    order = np.argsort(-y, kind="stable")[:k]
    return np.sort(order)


def pool_size(n_real):
    """Nodes kept by a gPool site: half of the real nodes, rounded up, at least one."""
    return max(1, math.ceil(n_real / 2))


def gpool_forward(a, x, params, k, mask=None, gate=True):
    """Select the top-k nodes by projection score; return (A', X', idx).

    With ``gate`` the kept rows are scaled by tanh of their scores, which is
    the only path by which the projection vector receives gradient. The
    selection itself is treated as a constant.
    """
    x = ad.constant(x)
    y = gpool_scores(x, params)
    idx = rank_topk(ranking_scores(y, mask), k)
    pooled = ad.gather_rows(x, idx)
    if gate:
        pooled = ad.rowwise_scale(pooled, ad.tanh(ad.gather_rows(y, idx)))
    return extract_subgraph(a, idx), pooled, idx


def hconv_forward(a_norm, x, params):
    """relu([conv1d(X) , A_norm X W + b]) with each half c_out / 2 wide."""
    if params.kernel.shape[2] != params.gcn.out_channels:
        raise ConfigError(
            f"hConv halves differ: conv {params.kernel.shape[2]} vs gcn {params.gcn.out_channels}"
        )
    conv = ad.conv1d_same(x, params.kernel, params.kernel_bias)
    graph = gcn_forward(a_norm, x, params.gcn, activation=False)
    return ad.relu(ad.concat_cols(conv, graph))

"""Central finite-difference checks of analytic gradients."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import TINY_CHANNELS, ModelSpec, build, forward_arrays


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (mutated and restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor=1e-10):
    """``|a - n| / max(|a|, |n|)`` in the 2-norm; 0 when both are below ``floor``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


@dataclass
class GroupResult:
    name: str
    rel_err: float
    analytic_norm: float
    numeric_norm: float
    passed: bool
    note: str = ""


def random_graph(rng, n, p_edge=0.5):
    upper = np.triu(rng.random((n, n)) < p_edge, k=1).astype(float)
    return upper + upper.T


def check_model(arch, widths=TINY_CHANNELS, seed=0, gate=True, n_nodes=5, n_classes=3,
                input_dim=8, tol=1e-3, h=1e-5):
    """Finite-difference check of every parameter of a tiny network in float64.

    The loss is softmax cross-entropy on a random graph in eval mode. Returns
    one :class:`GroupResult` per named parameter.
    """
    rng = np.random.default_rng(seed)
    spec = ModelSpec(arch=arch, n_classes=n_classes, input_dim=input_dim,
                     channels=tuple(widths), gpool_gate=gate)
    params = build(spec, seed, dtype=np.float64)
    # zero biases sit exactly on ReLU kinks; random biases and larger projection
    # vectors keep the check in smooth territory
    for name, t in params.named().items():
        if name.endswith(".b") or name.endswith(".p"):
            t.value = rng.normal(size=t.shape)
    adjacency = random_graph(rng, n_nodes)
    features = rng.normal(size=(n_nodes, input_dim))
    label = int(rng.integers(n_classes))

    def loss_value():
        logits = forward_arrays(params, spec, adjacency, features)
        return float(ad.softmax_cross_entropy(ad.stack_rows([logits]), [label]).value)

    params.zero_grad()
    with ad.Tape() as tape:
        logits = forward_arrays(params, spec, adjacency, features)
        loss = ad.softmax_cross_entropy(ad.stack_rows([logits]), [label])
    tape.backward(loss)

    results = []
    for name, t in params.named().items():
        analytic = t.grad.copy()
        numeric = numeric_grad(loss_value, t.value, h)
        err = rel_error(analytic, numeric)
        note = ""
        if name.startswith("pool") and not gate:
            zero = not np.any(analytic)
            note = "zero gradient expected without gate" if zero else "UNEXPECTED nonzero gradient"
            passed = zero and err <= tol
        else:
            passed = err <= tol
        results.append(GroupResult(name, err, float(np.linalg.norm(analytic)),
                                   float(np.linalg.norm(numeric)), passed, note))
    return results

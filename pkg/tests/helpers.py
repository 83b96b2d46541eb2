import numpy as np

from gpoolnet import autodiff as ad
from gpoolnet.embeddings import EmbeddingTable

# Settings for the 20-document capacity check. Small batches give enough
# optimizer steps in 200 epochs; no schedule decay over such a short run.
TINY_WIDTHS = (8, 8, 4, 4)
CAPACITY_TRAIN = dict(epochs=200, decay_epochs=(), batch_size=4, lr0=0.005, seed=0)


def fd_grad(f, x, h=1e-5):
    """Central differences of scalar f() w.r.t. array x, perturbing in place."""
    g = np.zeros_like(x, dtype=np.float64)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale < 1e-12 else float(np.linalg.norm(a - b) / scale)


def synthetic_corpus(seed=0, n_docs=20, dim=8, doc_len=14):
    """Two classes, each with its own 8-word vocabulary mixed into shared filler words."""
    rng = np.random.default_rng(seed)
    class_words = [[f"w{c}x{i}" for i in range(8)] for c in range(2)]
    shared = [f"s{i}" for i in range(12)]
    vocab = class_words[0] + class_words[1] + shared
    table = EmbeddingTable(dim, {w: rng.normal(size=dim) for w in vocab})
    docs = []
    for d in range(n_docs):
        label = d % 2
        words = [
            rng.choice(class_words[label]) if rng.random() < 0.4 else rng.choice(shared)
            for _ in range(doc_len)
        ]
        docs.append((label, " ".join(words)))
    return docs, table


SYNTH_CFG = dict(window=3, max_nodes=16, term_tags=None, stopwords=frozenset())


def check_grads(build, *arrays, seed=0):
    """Compare tape gradients of sum(W * build(*tensors)) against central differences."""
    tensors = [ad.param(a) for a in arrays]
    out_shape = build(*tensors).shape
    weights = np.random.default_rng(seed).normal(size=out_shape)

    with ad.Tape() as tape:
        loss = ad.weighted_sum(build(*tensors), weights)
    tape.backward(loss)

    def value():
        return float(np.sum(build(*[ad.constant(t.value) for t in tensors]).value * weights))

    return [rel_err(t.grad, fd_grad(value, t.value)) for t in tensors]


def smooth_normal(rng, shape, away=0.05):
    """Normal samples pushed away from zero (abs/relu kinks)."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < away, np.sign(x) * away + x, x)

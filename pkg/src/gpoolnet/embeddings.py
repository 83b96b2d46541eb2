"""Pretrained word vectors in the plain-text ``token v1 v2 ...`` format.

The optional first line ``<count> <dim>`` (as written by fastText and
word2vec tools) is detected and skipped. ``.gz`` files are read transparently.
"""

import gzip
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict = field(default_factory=dict)
    skipped: int = 0

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, token):
        return token.lower() in self.vectors

    def lookup(self, token):
        """Vector for ``token`` (case-insensitive), or None if unknown."""
        return self.vectors.get(token.lower())


def lookup(table, token):
    return table.lookup(token)


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _is_header(parts):
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def load_embeddings(path, vocabulary=None):
    """Load a word-vectors file, keeping only ``vocabulary`` tokens if given.

    Tokens are lowercased; when two entries collide after lowercasing the
    first one wins. Lines that cannot be parsed are skipped and counted in
    ``table.skipped``. A vector whose length differs from the first one is a
    :class:`FormatError`.
    """
    keep = None if vocabulary is None else {w.lower() for w in vocabulary}
    dim = None
    vectors = {}
    skipped = 0
    with _open_text(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            parts = [p for p in parts if p != ""]
            if not parts:
                continue
            if line_no == 1 and _is_header(parts):
                continue
            token = parts[0].lower()
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                skipped += 1
                continue
            if vec.size == 0:
                skipped += 1
                continue
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise FormatError(f"{path}:{line_no}: vector has {vec.size} values, expected {dim}")
            if keep is not None and token not in keep:
                continue
            vectors.setdefault(token, vec)
    if dim is None:
        raise FormatError(f"{path}: no vectors found")
    if skipped:
        logger.warning("skipped %d malformed lines in %s", skipped, path)
    return EmbeddingTable(dim=dim, vectors=vectors, skipped=skipped)


def save_embeddings(table, path, header=True):
    with _open_text(path, "w") as fh:
        if header:
            fh.write(f"{len(table)} {table.dim}\n")
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")

"""Graph-of-words conversion of raw text.

Pipeline: clean and tokenize -> keep terms by part-of-speech tag -> collapse
repeated words into one node -> connect words that co-occur within a sliding
window -> node features = word vector concatenated with a one-hot position.

Nodes are kept in the order of their first occurrence in the text, which is
what lets a 1-D convolution run over the node feature rows later on.
"""

import csv
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, partial
from importlib import resources

import numpy as np

from .errors import ConfigError, FormatError
from .graph import normalized_adjacency

logger = logging.getLogger(__name__)

TAGS = ("noun", "verb", "adjective", "other")
DEFAULT_TERM_TAGS = frozenset({"noun", "verb", "adjective"})
DISTANCE_BASES = ("stream", "terms")
WORKERS_ENV = "GPOOLNET_WORKERS"

_SEPARATORS = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class Token:
    surface: str
    text_pos: int
    tag: str = "other"


def read_word_list(path):
    """One entry per line; blank lines and ``#`` comments ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip().lower()
            if line and not line.startswith("#"):
                words.add(line)
    return frozenset(words)


def default_stopwords():
    text = resources.files("gpoolnet").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def read_pos_lexicon(path):
    """Read ``token<whitespace>tag`` lines into a dict."""
    lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in TAGS:
                raise FormatError(f"{path}:{line_no}: expected '<token> <tag>' with tag in {TAGS}")
            lexicon[parts[0].lower()] = parts[1]
    return lexicon


@dataclass
class ConversionConfig:
    window: int = 4
    max_nodes: int = 100
    term_tags: frozenset | None = DEFAULT_TERM_TAGS  # None keeps every token
    stopwords: frozenset = field(default_factory=default_stopwords)
    lexicon: dict = field(default_factory=dict)
    distance_basis: str = "stream"

    def __post_init__(self):
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.max_nodes < 1:
            raise ConfigError(f"max_nodes must be >= 1, got {self.max_nodes}")
        if self.distance_basis not in DISTANCE_BASES:
            raise ConfigError(f"distance_basis must be one of {DISTANCE_BASES}")

    @property
    def position_dim(self):
        return self.max_nodes


def clean_and_tokenize(raw, stopwords=frozenset(), lexicon=None):
    """Lowercase, split on anything outside [a-z0-9], drop stopwords.

    Positions are assigned consecutively over the surviving tokens.
    """
    lexicon = lexicon or {}
    words = [w for w in _SEPARATORS.split(raw.lower()) if w and w not in stopwords]
    return [Token(w, i, lexicon.get(w, "other")) for i, w in enumerate(words)]


def select_terms(tokens, term_tags=DEFAULT_TERM_TAGS):
    if term_tags is None:
        return list(tokens)
    return [t for t in tokens if t.tag in term_tags]


def collapse_terms(terms):
    """Group occurrences by surface. Returns (nodes, positions-per-node).

    Each node carries the position of its first occurrence; nodes are in
    first-occurrence order.
    """
    index = {}
    nodes, positions = [], []
    for t in terms:
        if t.surface not in index:
            index[t.surface] = len(nodes)
            nodes.append(t)
            positions.append([])
        positions[index[t.surface]].append(t.text_pos)
    return nodes, positions


def _renumber(terms):
    return [Token(t.surface, i, t.tag) for i, t in enumerate(terms)]


def build_edges(terms, window, distance_basis="stream"):
    """Adjacency over collapsed term nodes.

    Two nodes are linked when some pair of their occurrences lies less than
    ``window`` positions apart. ``distance_basis="terms"`` measures distance
    over the term sequence instead of the cleaned token stream.
    """
    if distance_basis == "terms":
        terms = _renumber(terms)
    nodes, _ = collapse_terms(terms)
    node_of = {t.surface: i for i, t in enumerate(nodes)}
    occ = sorted(terms, key=lambda t: t.text_pos)
    a = np.zeros((len(nodes), len(nodes)))
    for i, ti in enumerate(occ):
        u = node_of[ti.surface]
        for tj in occ[i + 1:]:
            if tj.text_pos - ti.text_pos >= window:
                break
            v = node_of[tj.surface]
            if u != v:
                a[u, v] = a[v, u] = 1.0
    return a


def build_features(nodes, embeddings, cfg):
    """Rows ``[word vector || one_hot(row, max_nodes)]``; unknown words get zeros."""
    if len(nodes) > cfg.max_nodes:
        raise ConfigError(f"{len(nodes)} nodes exceed max_nodes={cfg.max_nodes}")
    feats = np.zeros((len(nodes), embeddings.dim + cfg.position_dim), dtype=np.float32)
    for i, t in enumerate(nodes):
        vec = embeddings.lookup(t.surface)
        if vec is not None:
            feats[i, :embeddings.dim] = vec
        feats[i, embeddings.dim + i] = 1.0
    return feats


@dataclass(eq=False)
class TextGraph:
    """A document as a padded (adjacency, features) pair.

    ``adjacency`` and ``features`` have ``capacity`` rows; rows from
    ``n_real`` onwards are zero padding.
    """

    nodes: list
    adjacency: np.ndarray
    features: np.ndarray
    label: int
    n_real: int

    @property
    def capacity(self):
        return self.adjacency.shape[0]

    @property
    def degenerate(self):
        return self.n_real == 0

    @property
    def mask(self):
        m = np.zeros(self.capacity, dtype=bool)
        m[:self.n_real] = True
        return m

    @cached_property
    def real_adjacency(self):
        return self.adjacency[:self.n_real, :self.n_real]

    @cached_property
    def normalized(self):
        """Normalized adjacency (self-loops added) of the real nodes, computed once."""
        return normalized_adjacency(self.real_adjacency)

    def edges(self):
        rows, cols = np.nonzero(np.triu(self.real_adjacency, k=1))
        return [[int(i), int(j)] for i, j in zip(rows, cols)]


def assemble(nodes, adjacency, label, embeddings, cfg):
    """Truncate to ``cfg.max_nodes`` and pad adjacency and features to that capacity."""
    n = min(len(nodes), cfg.max_nodes)
    nodes = list(nodes[:n])
    cap = cfg.max_nodes
    a = np.zeros((cap, cap))
    a[:n, :n] = np.asarray(adjacency)[:n, :n]
    feats = np.zeros((cap, embeddings.dim + cfg.position_dim), dtype=np.float32)
    feats[:n] = build_features(nodes, embeddings, cfg)
    return TextGraph(nodes=nodes, adjacency=a, features=feats, label=int(label), n_real=n)


def convert(raw, label, embeddings, cfg):
    tokens = clean_and_tokenize(raw, cfg.stopwords, cfg.lexicon)
    terms = select_terms(tokens, cfg.term_tags)
    nodes, _ = collapse_terms(terms)
    adjacency = build_edges(terms, cfg.window, cfg.distance_basis)
    return assemble(nodes, adjacency, label, embeddings, cfg)


# -- dataset files -----------------------------------------------------------


def graph_to_record(graph):
    return {
        "label": graph.label,
        "nodes": [{"w": t.surface, "p": t.text_pos} for t in graph.nodes],
        "edges": graph.edges(),
    }


def record_to_graph(record, embeddings, cfg):
    nodes = [Token(n["w"], int(n["p"])) for n in record["nodes"]]
    a = np.zeros((len(nodes), len(nodes)))
    for i, j in record["edges"]:
        a[i, j] = a[j, i] = 1.0
    return assemble(nodes, a, record["label"], embeddings, cfg)


def write_jsonl(graphs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g), separators=(",", ":")) + "\n")


def read_records(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{line_no}: {exc}") from exc
    return records


def load_dataset(path, embeddings, cfg, skip_degenerate=True):
    graphs = [record_to_graph(r, embeddings, cfg) for r in read_records(path)]
    if skip_degenerate:
        graphs = [g for g in graphs if not g.degenerate]
    return graphs


def read_corpus_csv(path, label_offset=0):
    """Parse a (label, text, ...) CSV. Extra text columns are joined with spaces.

    Returns ``(rows, errors)`` where rows are ``(label, text)`` and errors are
    ``(line_no, message)`` for rows that were skipped.
    """
    rows, errors = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            line_no = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                errors.append((line_no, "expected at least 2 columns"))
                continue
            try:
                label = int(row[0].strip()) - label_offset
            except ValueError:
                errors.append((line_no, f"label {row[0]!r} is not an integer"))
                continue
            rows.append((label, " ".join(row[1:])))
    return rows, errors


@dataclass
class ConversionStats:
    docs: int = 0
    degenerate: int = 0
    total_terms: int = 0
    unknown_words: int = 0
    malformed_rows: int = 0

    @property
    def mean_terms(self):
        return self.total_terms / self.docs if self.docs else 0.0

    def as_dict(self):
        return {
            "docs": self.docs,
            "degenerate": self.degenerate,
            "mean_terms": self.mean_terms,
            "unknown_words": self.unknown_words,
            "malformed_rows": self.malformed_rows,
        }


def _convert_row(row, embeddings, cfg):
    label, text = row
    return convert(text, label, embeddings, cfg)


def worker_count():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def convert_corpus(rows, embeddings, cfg, workers=None):
    """Convert ``(label, text)`` rows; output order follows input order."""
    workers = worker_count() if workers is None else workers
    fn = partial(_convert_row, embeddings=embeddings, cfg=cfg)
    if workers > 1 and len(rows) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            graphs = list(pool.map(fn, rows, chunksize=64))
    else:
        graphs = [fn(r) for r in rows]
    stats = ConversionStats(docs=len(graphs))
    for g in graphs:
        stats.total_terms += g.n_real
        stats.degenerate += g.degenerate
        stats.unknown_words += sum(embeddings.lookup(t.surface) is None for t in g.nodes)
    return graphs, stats

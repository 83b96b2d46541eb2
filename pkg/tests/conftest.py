import csv
from pathlib import Path

import pytest

from gpoolnet.embeddings import save_embeddings
from gpoolnet.text2graph import ConversionConfig, convert
from helpers import SYNTH_CFG, synthetic_corpus

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def tiny_corpus():
    docs, table = synthetic_corpus()
    cfg = ConversionConfig(**SYNTH_CFG)
    graphs = [convert(text, label, table, cfg) for label, text in docs]
    return graphs, table, cfg


@pytest.fixture
def tiny_corpus_files(tmp_path):
    """The synthetic corpus written as a CSV plus a word-vectors file."""
    docs, table = synthetic_corpus()
    csv_path = tmp_path / "corpus.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for label, text in docs:
            w.writerow([label, text])
    vec_path = tmp_path / "vectors.txt"
    save_embeddings(table, vec_path)
    return csv_path, vec_path


@pytest.fixture
def fixtures_dir():
    return FIXTURES

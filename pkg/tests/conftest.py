import numpy as np
import pytest

from mambarate.data import write_embedding, write_manifest
from mambarate.rbf import centers


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_synthetic_corpus(root, n_utts=12, dim=8, n_listeners=3, n_systems=3, seed=0):
    """Write EMB1 files plus a manifest; returns (emb_dir, manifest_path, ids)."""
    r = np.random.default_rng(seed)
    emb_dir = root / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)
    grid = centers()
    rows = []
    ids = []
    for i in range(n_utts):
        utt = f"utt{i:03d}"
        ids.append(utt)
        frames = int(r.integers(6, 14))
        write_embedding(emb_dir / f"{utt}.emb", r.normal(size=(frames, dim)).astype(np.float32))
        system = f"sys{i % n_systems}" if n_systems else ""
        for k in range(n_listeners):
            rating = float(grid[r.integers(0, 16)])
            rows.append((utt, system, 16000, f"L{k}", rating))
    manifest = root / "manifest.csv"
    write_manifest(manifest, rows)
    return emb_dir, manifest, ids


@pytest.fixture
def corpus(tmp_path):
    return make_synthetic_corpus(tmp_path)

import pytest

from vidground import dataio


@pytest.fixture(scope="session")
def tiny_splits(tmp_path_factory):
    """A small synthetic dataset shared by the higher-level test modules."""
    root = tmp_path_factory.mktemp("shared_synth")
    config = dataio.SyntheticConfig(train_pairs=6, val_pairs=3, test_pairs=3,
                                    num_steps=16, feature_dim=4, query_dim=3,
                                    num_patterns=2, vocab_size=6, min_len=2,
                                    max_len=6, snr=8.0, seed=11)
    paths = dataio.generate_synthetic(config, root)
    table = dataio.load_embeddings(paths["embeddings"])
    splits = {name: dataio.load_pairs(dataio.load_manifest(paths[name]), table)
              for name in ("train", "val", "test")}
    splits["paths"] = paths
    return splits

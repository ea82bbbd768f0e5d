import pytest

from v2m.config import RunConfig
from v2m.pipeline import extract_dataset, write_synthetic_dataset

TINY = dict(d_model=16, n_blocks=1, n_heads=2, ffn_mult=2, pred_d_model=16, pred_layers=1,
            pred_heads=2, semantic_dim=16, epochs=3, steps_per_epoch=2, save_every=1,
            sample_steps=4, lr=1e-3)


def tiny_config(**kw) -> RunConfig:
    return RunConfig(**{**TINY, **kw})


def write_config(path, cfg: RunConfig):
    path.write_text(cfg.to_text())
    return path


@pytest.fixture(scope="session")
def odf_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_synthetic_dataset(root, n=2, M=6, n_events=2, seed=11)
    extract_dataset(root, "odf", tiny_config())
    return root

import numpy as np
import pytest

from gban.synth import SynthConfig, generate
from gban.tensor import make_rng

TINY_MODEL = """\
epochs = 2
batch_size = 8
hidden = 8
classifier_hidden = 8
speech_channels = 8,8
text_channels = 8
embed_dim = 16
"""


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Twenty synthetic utterances (5 per class, 5 groups) with a small-model config."""
    root = tmp_path_factory.mktemp("tiny")
    generate(root, SynthConfig(n_per_class=5, seed=3, embed_dim=16, min_seconds=0.5, max_seconds=0.8))
    cfg = root / "gban.cfg"
    cfg.write_text(cfg.read_text().replace("embed_dim = 16\n", "") + TINY_MODEL)
    return root


def assert_close(a, b, tol):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    assert a.shape == b.shape, (a.shape, b.shape)
    err = np.max(np.abs(a - b)) if a.size else 0.0
    assert err <= tol, f"max abs error {err:.3e} > {tol:.0e}"

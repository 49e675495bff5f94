import numpy as np
import pytest

from ordinalvoice import dsp


@pytest.fixture
def wav_factory(tmp_path):
    """Write a deterministic noise WAV of ``seconds`` and return its path."""

    def make(name, seconds, seed=0):
        rng = np.random.default_rng(seed)
        path = tmp_path / f"{name}.wav"
        dsp.write_wav(path, rng.uniform(-0.3, 0.3, int(round(seconds * dsp.SAMPLE_RATE))))
        return path

    return make


TINY_ENCODER = {"frame_dense_dims": [40, 16, 16], "lora_rank": 4, "lora_alpha": 8.0}
TINY_HEAD = {"trunk_hidden": 16, "embed_dim": 8, "head_hidden": 8}


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """16 short voices split 8/4/4, shared by the training and command-line tests."""
    from ordinalvoice.synth import CorpusConfig, generate_corpus

    cfg = CorpusConfig(n_voices=16, duration_range=(31.0, 65.0), master_seed=3,
                       split_ratios=(0.5, 0.25, 0.25))
    return generate_corpus(cfg, tmp_path_factory.mktemp("tiny"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from ordinalvoice import dsp, synth
from ordinalvoice.data import load_manifest
from ordinalvoice.metrics import sn_eq_sp


def test_profile_endpoints():
    lo = synth.sample_voice_profile(0, 0, severity=0.0, voice_noise=0.0)
    hi = synth.sample_voice_profile(0, 0, severity=1.0, voice_noise=0.0)
    assert (lo.f0_base, lo.jitter_amp, lo.pause_fraction, lo.am_depth) == pytest.approx((150, 0.02, 0.10, 0.5))
    assert (hi.f0_base, hi.jitter_amp, hi.pause_fraction, hi.am_depth) == pytest.approx((110, 0.12, 0.35, 0.2))


def test_profile_noise_scale():
    # noise is 5% of each field's range, so the spread across voices at fixed severity matches
    f0 = np.array([synth.sample_voice_profile(1, i, severity=0.0).f0_base for i in range(4000)])
    assert abs(f0.mean() - 150) < 0.2
    assert abs(f0.std() - 0.05 * 40) < 0.1


def test_profile_deterministic():
    assert synth.sample_voice_profile(3, 17) == synth.sample_voice_profile(3, 17)
    assert synth.sample_voice_profile(3, 17) != synth.sample_voice_profile(3, 18)


def test_monotone_biomarkers():
    profiles = [synth.sample_voice_profile(11, i, voice_noise=0.0) for i in range(600)]
    sev = [p.severity for p in profiles]
    for values in ([-p.f0_base for p in profiles], [p.jitter_amp for p in profiles],
                   [p.pause_fraction for p in profiles]):
        assert stats.spearmanr(sev, values).statistic >= 0.99


def test_labels_simple_cases():
    assert synth.labels_from_severity(0.0, 0.0, 0.85, seed=1)[0] == 0
    assert synth.labels_from_severity(1.0, 0.0, 1.0, seed=1) == (27, 21)
    with pytest.raises(ValueError):
        synth.labels_from_severity(1.5)


def test_labels_reproducible_from_severity():
    a = [synth.labels_from_severity(s, 0.0, 0.85, seed=i) for i, s in enumerate(np.linspace(0, 1, 50))]
    b = [synth.labels_from_severity(s, 0.0, 0.85, seed=i) for i, s in enumerate(np.linspace(0, 1, 50))]
    assert a == b
    assert [p for p, _ in a] == [int(np.round(27 * s)) for s in np.linspace(0, 1, 50)]


def test_label_noise_changes_labels():
    clean = [synth.labels_from_severity(0.5, 0.0, 0.85, seed=i)[0] for i in range(200)]
    noisy = [synth.labels_from_severity(0.5, 0.15, 0.85, seed=i)[0] for i in range(200)]
    assert len(set(clean)) == 1
    assert 2.5 < np.std(noisy) < 5.5  # 0.15 * 27 = 4.05 before rounding and clamping


def test_f0_threshold_learnability():
    """A threshold on f0_base alone separates PHQ-9 >= 10 on a zero-label-noise corpus."""
    f0, phq = [], []
    for i in range(1000):
        p = synth.sample_voice_profile(21, i)
        f0.append(p.f0_base)
        phq.append(synth.labels_from_severity(p.severity, 0.0, 0.85, seed=i)[0])
    assert sn_eq_sp(-np.array(f0), np.array(phq) >= 10).sn_eq_sp >= 80


def _profile(**kw):
    base = synth.sample_voice_profile(0, 0, severity=0.5, voice_noise=0.0)
    return replace(base, **kw)


def test_utterance_length_and_range():
    x = synth.synthesize_utterance(_profile(), 30.0, seed=2)
    assert x.size == 480000
    assert np.max(np.abs(x)) <= 1.0
    with pytest.raises(ValueError):
        synth.synthesize_utterance(_profile(), 29.0)


def test_no_pauses_means_no_silence():
    x = synth.synthesize_utterance(_profile(pause_fraction=0.0), 30.0, seed=3)
    quiet = np.abs(x) < 1e-4
    run, longest = 0, 0
    for q in quiet:
        run = run + 1 if q else 0
        longest = max(longest, run)
    assert longest < 0.2 * 16000


def test_pause_fraction_realized():
    x = synth.synthesize_utterance(_profile(pause_fraction=0.3), 40.0, seed=4)
    assert abs(np.mean(x == 0) - 0.3) < 0.01


def test_spectral_peak_at_f0():
    p = _profile(jitter_amp=0.0, am_depth=0.0, pause_fraction=0.0, f0_base=137.0)
    x = synth.synthesize_utterance(p, 30.0, seed=5)
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, 1 / 16000)
    assert abs(freqs[np.argmax(spec)] - 137.0) <= 2.0


def test_utterance_deterministic():
    p = _profile()
    assert np.array_equal(synth.synthesize_utterance(p, 31, 9), synth.synthesize_utterance(p, 31, 9))


def test_lexical_vector_affine():
    a = synth.lexical_vector(0.2, 0.7, 0.0, seed=1)
    b = synth.lexical_vector(0.6, 0.7, 0.0, seed=2)
    c = synth.lexical_vector(1.0, 0.7, 0.0, seed=3)
    assert a.shape == (synth.LEX_DIM,)
    assert np.allclose(b - a, c - b, atol=1e-6)


def test_generate_corpus(tmp_path):
    cfg = synth.CorpusConfig(n_voices=6, recordings_per_voice=2, duration_range=(30, 31), master_seed=4)
    manifest = synth.generate_corpus(cfg, tmp_path / "c")
    ds = load_manifest(manifest)
    assert len(ds) == 12 and len(ds.voices()) == 6
    for v in ds.voices():
        assert len({r.split for r in ds.voice_records(v)}) == 1
    rec = ds.records[0]
    assert synth.lex_path(rec.audio_path).is_file()
    assert synth.read_lex(synth.lex_path(rec.audio_path)).shape == (synth.LEX_DIM,)
    assert dsp.read_wav(rec.audio_path).size >= 30 * 16000
    # pure function of the config
    again = synth.generate_corpus(cfg, tmp_path / "d")
    assert (tmp_path / "c" / "manifest.jsonl").read_text() == again.read_text()
    assert (tmp_path / "c" / rec.audio_path.name).read_bytes() == (tmp_path / "d" / rec.audio_path.name).read_bytes()
    assert json.loads((tmp_path / "c" / "corpus_config.json").read_text())["n_voices"] == 6


def test_corpus_config_validation(tmp_path):
    with pytest.raises(ValueError):
        synth.CorpusConfig(duration_range=(20, 40))
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"n_voices": 3, "label_noise_sd": 0.1}))
    assert synth.CorpusConfig.from_json(path).label_noise_sd == 0.1


def test_corpus_labels_match_generated(tiny_corpus):
    cfg = synth.CorpusConfig(**json.loads((tiny_corpus.parent / "corpus_config.json").read_text()))
    ds = load_manifest(tiny_corpus)
    by_voice = {r.voice_id: (r.phq9, r.gad7) for r in ds}
    labels = synth.corpus_labels(cfg)
    assert [tuple(row) for row in labels] == [by_voice[f"v{v:05d}"] for v in range(cfg.n_voices)]

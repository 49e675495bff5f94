"""Synthetic voices: how severity shows up in pitch, jitter, pausing and tilt.

Run: python3 gallery/01_synthetic_voices.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np
from scipy import stats

from ordinalvoice import dsp, synth

out = Path(sys.argv[1] if len(sys.argv) > 1 else "gallery_out/voices")

# %% profiles are pure functions of (master seed, voice index)
profiles = [synth.sample_voice_profile(0, v) for v in range(400)]
sev = np.array([p.severity for p in profiles])
for field in ("f0_base", "jitter_amp", "pause_fraction", "am_depth", "speaking_rate", "spectral_tilt"):
    x = np.array([getattr(p, field) for p in profiles])
    rho = stats.spearmanr(sev, x).statistic
    print(f"{field:15s} spearman vs severity {rho:+.2f}")

# %% labels: PHQ-9 follows severity, GAD-7 mixes in an independent latent
labels = synth.corpus_labels(synth.CorpusConfig(n_voices=5000))
print("PHQ/GAD pearson", round(float(np.corrcoef(labels.T)[0, 1]), 3))

# %% a small corpus on disk, then the log-mel of one recording
cfg = synth.CorpusConfig(n_voices=6, duration_range=(31.0, 40.0), split_ratios=(0.5, 0.25, 0.25))
manifest = synth.generate_corpus(cfg, out)
first = manifest.read_text().splitlines()[0]
print(first)
wav = dsp.read_wav(out / "v00000_r0.wav")
feats = dsp.log_mel(wav)
print("samples", wav.size, "frames x bins", feats.shape)
print("mean log-mel per band (low to high):", np.round(feats.mean(axis=0)[::8], 2))

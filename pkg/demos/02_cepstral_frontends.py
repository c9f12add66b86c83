#!/usr/bin/env python3
"""LFCC and MFCC front-ends, and their exact waveform gradients.

Shows the 398 x 80 feature geometry, compares the linear and mel filterbank
responses, and validates the hand-written backward pass against central
finite differences — the property that lets attacks reach the waveform.
"""

import numpy as np

from advdf.audio_io import synth_sample
from advdf.features import LFCC_FRONT_END, MFCC_FRONT_END, lfcc, mfcc
from advdf.gradcheck import directional_derivative, relative_error

wave = synth_sample(5, "train", 1, 0, strength=1.0)
x = wave.samples

lf = lfcc(x)
mf = mfcc(x)
print(f"LFCC: {lf.values.shape} ({lf.kind}),  MFCC: {mf.values.shape} ({mf.kind})")
print(f"frame count = (64000 - 400) // 160 + 1 = {lf.values.shape[0]}")
print(f"c0 range: LFCC [{lf.values[:, 0].min():.1f}, {lf.values[:, 0].max():.1f}]")

# mel vs linear: same bins, different filter placement
lin_areas = LFCC_FRONT_END.B.sum(axis=0)
mel_areas = MFCC_FRONT_END.B.sum(axis=0)
print(f"filter areas, first/last: linear {lin_areas[0]:.2f}/{lin_areas[-1]:.2f}, "
      f"mel {mel_areas[0]:.2f}/{mel_areas[-1]:.2f} (mel widens with frequency)")

# gradient check: <vjp(u), v> vs central difference of <u, features(x)>
rng = np.random.default_rng(0)
feats, vjp = LFCC_FRONT_END.forward_vjp(x)
u = rng.standard_normal(feats.shape)
g = vjp(u)
worst = 0.0
for _ in range(3):
    v = rng.standard_normal(x.shape)
    v /= np.linalg.norm(v)
    numeric = directional_derivative(
        lambda z: float(np.vdot(u, LFCC_FRONT_END.forward(z))), x, v)
    worst = max(worst, relative_error(float(g @ v), numeric))
print(f"LFCC vjp vs finite differences: max rel err {worst:.2e} (< 1e-4 required)")

# silence is an exact closed form: every frame is the DCT of the log floor
silent = lfcc(np.zeros(64000)).values
print(f"silence c0 = {silent[0, 0]:.4f} (= sqrt(80) * log(1e-10) = "
      f"{np.sqrt(80) * np.log(1e-10):.4f}); other coefficients "
      f"|max| = {np.abs(silent[:, 1:]).max():.2e}")

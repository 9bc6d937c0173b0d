"""Fit a K=9 inverse for a Mach-Zehnder modulator and compare against the analytic arccos inverse."""
import math
from pathlib import Path

import numpy as np

from modlin.harness import load_scenario, run_scenario
from modlin.harness.loop import make_chain
from modlin.harness.scenario import build_waveform
from modlin.plant import mzm_output_power
from modlin.signal import nmse_db

sc = load_scenario(Path(__file__).resolve().parents[1] / "scenarios" / "eom_linearize.yaml")
rep = run_scenario(sc)
for s in rep.operation_segments():
    print(f"segment {s.index} at {s.start_s * 1e3:.1f} ms: measured {s.nmse_db:.1f} dB, true {s.true_nmse_db:.1f} dB")

W = build_waveform(sc.waveform_spec("pulses"), sc.sample_rate_hz)
eom = sc.plant.eom
v = (2 * eom.v_pi / math.pi) * np.arccos(np.sqrt(W.samples))
chain = make_chain(sc)
fb = chain.process(mzm_output_power(W.with_samples(v), eom).samples)
gain = 1.0 / (chain.path.responsivity_k * chain.path.r_split * sc.conversion_c)
print(f"arccos oracle through the same chain: {nmse_db(W, fb.with_samples(fb.samples * gain)).value:.1f} dB")

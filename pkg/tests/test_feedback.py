import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modlin.plant import EomParams, FeedbackChain, FeedbackPath, describe, feedback_measure
from modlin.signal import Waveform

FS = 1e6


def test_path_validation():
    for kw in [dict(r_split=0.0), dict(r_split=1.0), dict(adc_bits=3), dict(adc_fullscale=0.0),
               dict(noise_sigma=-1.0), dict(responsivity_k=0.0), dict(lpf_cutoff_hz=0.0)]:
        with pytest.raises(ValueError):
            FeedbackPath(**kw)


@settings(max_examples=100)
@given(p=st.floats(0.0, 1.0), r=st.floats(0.01, 0.99))
def test_split_conserves_energy_exactly(p, r):
    t, f = FeedbackPath(r_split=r).split(np.array([p]))
    assert t[0] + f[0] == p
    if p > 1e-300:
        assert f[0] / t[0] == pytest.approx(r, rel=1e-12)


def test_ideal_chain_dc_within_one_lsb():
    path = FeedbackPath(r_split=0.1, responsivity_k=1e4, adc_bits=24, adc_fullscale=1.0)
    p = Waveform(FS, np.full(100, 5e-4))
    v = feedback_measure(p, path).samples
    _, p_fb = path.split(p.samples)
    assert np.all(np.abs(v - path.responsivity_k * p_fb) <= path.lsb)


def test_saturation():
    path = FeedbackPath(adc_bits=10, adc_fullscale=1.0)
    v = feedback_measure(Waveform(FS, np.array([1.0, 10.0])), path).samples
    assert np.all(v == path.lsb * (2**10 - 1))


def test_monotone_in_dc_level():
    path = FeedbackPath(adc_bits=8, lpf_cutoff_hz=1e4)
    levels = np.linspace(0, 1.2e-3, 400)
    out = [feedback_measure(Waveform(FS, np.full(50, p)), path).samples[-1] for p in levels]
    assert np.all(np.diff(out) >= 0)


def test_noise_replays_with_seed():
    path = FeedbackPath(noise_sigma=1e-3, seed=9, adc_bits=20)
    p = Waveform(FS, np.full(500, 3e-4))
    a = feedback_measure(p, path).samples
    b = feedback_measure(p, path).samples
    c = feedback_measure(p, FeedbackPath(noise_sigma=1e-3, seed=10, adc_bits=20)).samples
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_decimation_and_blocks():
    path = FeedbackPath(adc_rate_hz=FS / 4, lpf_cutoff_hz=5e4, noise_sigma=1e-4, seed=1, adc_bits=16)
    p = np.random.default_rng(0).uniform(0, 1e-3, 1001)
    whole = FeedbackChain(path, FS).process(p)
    assert whole.sample_rate_hz == FS / 4 and len(whole) == 251
    ch = FeedbackChain(path, FS)
    parts = np.concatenate([ch.process(c).samples for c in np.split(p, [3, 400, 402])])
    assert np.allclose(parts, whole.samples, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        FeedbackChain(FeedbackPath(adc_rate_hz=FS / 3.5), FS)
    with pytest.raises(ValueError):
        FeedbackChain(FeedbackPath(adc_rate_hz=2 * FS), FS)


def test_lowpass_step():
    path = FeedbackPath(lpf_cutoff_hz=1e3, adc_bits=24, adc_fullscale=10.0)
    p = np.r_[0.0, np.full(4000, 1e-3)]
    v = FeedbackChain(path, FS).process(p).samples
    a = np.exp(-2 * np.pi * 1e3 / FS)
    ideal = path.responsivity_k * path.split(1e-3)[1]
    assert v[-1] == pytest.approx(ideal * (1 - a**4000), abs=path.lsb)


def test_describe_lists_fields():
    text = describe(EomParams(v_pi=5.0, p1=0.6e-3), FeedbackPath())
    assert "v_pi = 5.0" in text
    assert "extinction_ratio_db" in text
    assert "adc_lsb" in text

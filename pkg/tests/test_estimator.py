import math

import numpy as np
import pytest

from modlin.estimator import (
    InsufficientExcitationError,
    PolicyKind,
    RankDeficientError,
    TemperatureRegistry,
    UpdatePolicy,
    best_delay,
    fit_inverse_indirect,
    fit_ls,
    fit_report_from_text,
    fit_report_to_text,
    fit_subset,
    should_update,
)
from modlin.models import (
    ModelFamily,
    ModelStructure,
    ParamVector,
    evaluate_array,
    identity_params,
    linear_coefficients,
    param_count,
    regressor_matrix,
)
from modlin.signal import Waveform

FS = 1e6
MP = ModelStructure(ModelFamily.MEMORY_POLYNOMIAL, 3, 4)
HAM = ModelStructure(ModelFamily.HAMMERSTEIN, 3, 3, True)


def planted(structure, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=param_count(structure))
    if structure.family is ModelFamily.HAMMERSTEIN:
        c[0] = 1.0
    p = ParamVector(structure, c)
    x = rng.uniform(-1, 1, 4000)
    phi = regressor_matrix(structure, Waveform(FS, x))
    return p, phi, evaluate_array(structure, p, x)[structure.warmup :]


@pytest.mark.parametrize("structure", [MP, HAM])
def test_noiseless_recovery(structure):
    p, phi, t = planted(structure, 0)
    rep = fit_ls(phi, t, ridge_lambda=0.0, structure=structure)
    truth = linear_coefficients(p)
    assert np.linalg.norm(rep.coefficients - truth) <= 1e-9 * np.linalg.norm(truth)
    assert np.allclose(rep.params.coefficients, p.coefficients, rtol=1e-9, atol=1e-12)
    assert rep.rows_used == phi.shape[0] and rep.condition_estimate >= 1.0


@pytest.mark.parametrize("structure", [MP, HAM])
def test_recovery_at_60db_snr(structure):
    p, phi, t = planted(structure, 1)
    noise = np.random.default_rng(2).normal(size=t.size)
    noise *= math.sqrt(np.mean(t * t) * 1e-6 / np.mean(noise * noise))
    rep = fit_ls(phi, t + noise, ridge_lambda=0.0)
    truth = linear_coefficients(p)
    assert np.linalg.norm(rep.coefficients - truth) <= 0.01 * np.linalg.norm(truth)
    assert rep.residual_nmse_db == pytest.approx(-60.0, abs=0.5)


def test_rank_deficient_and_ridge():
    phi = np.random.default_rng(3).normal(size=(50, 3))
    phi = np.c_[phi, phi[:, 0] + phi[:, 1]]
    t = phi @ np.array([1.0, 2.0, 3.0, 0.0])
    with pytest.raises(RankDeficientError) as exc:
        fit_ls(phi, t, ridge_lambda=0.0)
    assert exc.value.null_dim == 1
    rep = fit_ls(phi, t)
    assert rep.residual_nmse_db < -100
    big = fit_ls(phi, t, ridge_lambda=1e6)
    assert np.linalg.norm(big.coefficients) < np.linalg.norm(rep.coefficients)


def test_ridge_matches_normal_equations():
    rng = np.random.default_rng(4)
    phi, t, lam = rng.normal(size=(80, 5)), rng.normal(size=80), 0.7
    ref = np.linalg.solve(phi.T @ phi + lam * np.eye(5), phi.T @ t)
    assert np.allclose(fit_ls(phi, t, lam).coefficients, ref, rtol=1e-12, atol=1e-13)


def test_fit_ls_input_checks():
    with pytest.raises(ValueError):
        fit_ls(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        fit_ls(np.ones((4, 1)), np.ones(3))
    with pytest.raises(ValueError):
        fit_ls(np.ones((4, 1)), np.ones(4), ridge_lambda=-1.0)


def test_indirect_inverse_of_known_plant():
    # plant y = x + 0.2 x^2; its inverse is approximated by a cubic from (y, x) records
    x = np.linspace(0, 1, 2000)
    y = x + 0.2 * x * x
    s = ModelStructure(ModelFamily.MEMORY_POLYNOMIAL, 5, 1)
    rep = fit_inverse_indirect(Waveform(FS, x), Waveform(FS, y), s, ridge_lambda=0.0)
    assert rep.delay == 0
    assert np.max(np.abs(evaluate_array(s, rep.params, y) - x)) < 1e-3


def test_indirect_finds_delay():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 3000)
    y = np.r_[np.zeros(6), 2.0 * x][:3000]
    s = ModelStructure(ModelFamily.MEMORY_POLYNOMIAL, 1, 1)
    rep = fit_inverse_indirect(Waveform(FS, x), Waveform(FS, y), s, delay_search=range(0, 12), ridge_lambda=0.0)
    assert rep.delay == 6
    assert rep.params.coefficients[0] == pytest.approx(0.5, rel=1e-12)
    assert best_delay(x, y, range(12))[0] == 6


def test_condition_ceiling():
    x = np.full(500, 0.5) + 1e-9 * np.arange(500)
    s = ModelStructure(ModelFamily.MEMORY_POLYNOMIAL, 3, 1)
    with pytest.raises(InsufficientExcitationError, match="richer"):
        fit_inverse_indirect(Waveform(FS, x), Waveform(FS, x), s, condition_ceiling=1e6)
    with pytest.raises(InsufficientExcitationError):
        fit_inverse_indirect(Waveform(FS, x), Waveform(FS, np.zeros(500)), s)


def test_fit_subset_freezes_columns():
    p, phi, t = planted(MP, 6)
    prev = fit_ls(phi, t, 0.0, MP)
    mask = np.zeros(phi.shape[1], bool)
    mask[:4] = True
    changed = t + 0.1 * phi[:, 0]
    rep = fit_subset(prev, phi, changed, mask, ridge_lambda=0.0)
    assert np.array_equal(rep.coefficients[4:], prev.coefficients[4:])
    assert rep.coefficients[0] == pytest.approx(prev.coefficients[0] + 0.1, rel=1e-9)


def test_report_text_round_trip():
    p, phi, t = planted(HAM, 7)
    rep = fit_ls(phi, t, None, HAM)
    back = fit_report_from_text(fit_report_to_text(rep))
    assert back.params == rep.params
    assert np.array_equal(back.coefficients, rep.coefficients)
    for k in ("residual_nmse_db", "condition_estimate", "rows_used", "ridge_lambda", "delay", "input_scale"):
        assert getattr(back, k) == getattr(rep, k)
    assert back.diagnostics == rep.diagnostics


def test_policies():
    per = UpdatePolicy(PolicyKind.PERIODIC, period_s=1.0)
    assert not should_update(per, 0.9, 0.0, None) and should_update(per, 1.0, 0.0, None)
    err = UpdatePolicy(PolicyKind.ERROR_METRIC, threshold_db=-30.0)
    assert should_update(err, 0, 0, -29.0) and not should_update(err, 0, 0, -30.0)
    assert not should_update(err, 0, 0, -math.inf) and not should_update(err, 0, 0, None)
    ev = UpdatePolicy(PolicyKind.EVENT)
    assert should_update(ev, 0, 0, None, True) and not should_update(ev, 0, 0, None, False)
    assert not should_update(UpdatePolicy(PolicyKind.EVENT, armed=False), 0, 0, None, True)
    assert not should_update(UpdatePolicy("NEVER"), 10, 0, 10.0, True)
    with pytest.raises(ValueError):
        should_update(per, 0.0, 1.0, None)
    with pytest.raises(ValueError):
        UpdatePolicy(PolicyKind.PERIODIC, period_s=0.0)


def test_temperature_registry(tmp_path):
    s = ModelStructure(ModelFamily.MEMORY_POLYNOMIAL, 2, 1)
    p = [ParamVector(s, [1.0, float(i)]) for i in range(3)]
    reg = TemperatureRegistry()
    reg.add(20, 30, p[1])
    reg.add(10, 20, p[0])
    reg.add(30, 40, p[2])
    assert reg.select(20).params == p[0]
    assert reg.select(20.0001).params == p[1]
    assert reg.select(10).out_of_range is False
    low, high = reg.select(-5), reg.select(99)
    assert low.out_of_range and low.params == p[0]
    assert high.out_of_range and high.params == p[2]
    with pytest.raises(ValueError, match="overlap"):
        reg.add(35, 45, p[0])
    with pytest.raises(ValueError, match="gap"):
        reg.add(41, 45, p[0])
    reg.save(tmp_path / "reg")
    back = TemperatureRegistry.load(tmp_path / "reg")
    assert [b.params for b in back.bins] == [b.params for b in reg.bins]
    with pytest.raises(LookupError):
        TemperatureRegistry().select(0.0)


def test_identity_fit_is_exact():
    x = np.random.default_rng(8).uniform(0, 1, 500)
    s = ModelStructure(ModelFamily.MEMORY_POLYNOMIAL, 3, 2)
    rep = fit_inverse_indirect(Waveform(FS, x), Waveform(FS, x), s, ridge_lambda=0.0)
    assert np.allclose(rep.params.coefficients, identity_params(s).coefficients, atol=1e-12)

"""Least-squares identification, indirect-learning inverse fits, update policies, temperature registry."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from modlin.models import (
    ModelFamily,
    ModelStructure,
    ParamVector,
    _parse_header,
    params_from_linear,
    params_from_text,
    params_to_text,
    regressor_count,
    regressor_matrix,
    volterra_terms,
)
from modlin.signal import Waveform


class RankDeficientError(np.linalg.LinAlgError):
    """Unregularized least squares with a rank-deficient regressor matrix."""

    def __init__(self, null_dim, cols):
        self.null_dim = int(null_dim)
        super().__init__(f"regressor matrix is rank deficient: null-space dimension {null_dim} of {cols} columns")


class InsufficientExcitationError(np.linalg.LinAlgError):
    """Regressors too ill-conditioned for a trustworthy fit."""

    def __init__(self, condition, ceiling):
        self.condition = condition
        super().__init__(
            f"condition estimate {condition:.3g} exceeds ceiling {ceiling:.3g}; "
            "use a richer estimation waveform (wider amplitude span, multitone or chirp)"
        )


@dataclass(frozen=True, eq=False)
class FitReport:
    """Outcome of one least-squares fit.

    ``coefficients`` are the solved regressor weights in physical input
    units (lifted basis for Hammerstein); ``params`` is the model built from
    them, or ``None`` when no structure was given.
    """

    coefficients: np.ndarray
    residual_nmse_db: float
    condition_estimate: float
    rows_used: int
    ridge_lambda: float
    params: ParamVector | None = None
    delay: int = 0
    input_scale: float = 1.0
    diagnostics: dict = field(default_factory=dict)


def _nmse(target, residual):
    e = float(residual @ residual)
    s = float(target @ target)
    if e == 0.0:
        return -math.inf
    if s == 0.0:
        return math.inf
    return 10.0 * math.log10(e / s)


def default_ridge(phi: np.ndarray) -> float:
    """Scale-aware floor ``1e-10 * trace(Phi^T Phi) / cols``."""
    return 1e-10 * float(np.sum(phi * phi)) / phi.shape[1]


def fit_ls(regressors, target, ridge_lambda=None, structure: ModelStructure | None = None) -> FitReport:
    """Minimize ``||Phi p - t||^2 + lambda ||p||^2`` by orthogonal factorization.

    Parameters
    ----------
    regressors : (rows, cols) array
    target : (rows,) array
    ridge_lambda : float, optional
        Defaults to :func:`default_ridge`. ``0`` gives plain least squares and
        raises :class:`RankDeficientError` if the columns are dependent.
    structure : ModelStructure, optional
        When given, ``params`` of the report is built from the solution.

    Notes
    -----
    ``Phi P = Q R`` (column-pivoted QR); the ridge problem is then solved as
    the small stacked system ``[R; sqrt(lambda) I] p = [Q^T t; 0]`` by a
    second QR. The condition estimate is ``sigma_max / sigma_min`` of ``R``.
    """
    phi = np.asarray(regressors, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if phi.ndim != 2:
        raise ValueError("regressors must be a matrix")
    rows, cols = phi.shape
    if t.size != rows:
        raise ValueError(f"target has {t.size} rows, regressors {rows}")
    if rows < cols:
        raise ValueError(f"need rows >= cols, got {rows} x {cols}")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(t))):
        raise ValueError("regressors and target must be finite")
    lam = default_ridge(phi) if ridge_lambda is None else float(ridge_lambda)
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("ridge_lambda must be finite and >= 0")

    q, r, perm = scipy.linalg.qr(phi, mode="economic", pivoting=True)
    qt = q.T @ t
    sv = np.linalg.svd(r, compute_uv=False)
    cond = math.inf if sv[-1] == 0 else float(sv[0] / sv[-1])
    diag = np.abs(np.diag(r))
    tol = max(rows, cols) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if lam == 0.0:
        if rank < cols:
            raise RankDeficientError(cols - rank, cols)
        z = scipy.linalg.solve_triangular(r, qt)
    else:
        aug = np.vstack([r, math.sqrt(lam) * np.eye(cols)])
        rhs = np.concatenate([qt, np.zeros(cols)])
        q2, r2 = np.linalg.qr(aug)
        z = scipy.linalg.solve_triangular(r2, q2.T @ rhs)
    p = np.empty(cols)
    p[perm] = z
    resid = t - phi @ p
    params = params_from_linear(structure, p) if structure is not None else None
    return FitReport(
        coefficients=p,
        residual_nmse_db=_nmse(t, resid),
        condition_estimate=max(cond, 1.0),
        rows_used=rows,
        ridge_lambda=lam,
        params=params,
        diagnostics={"rank": rank},
    )


def _orders(structure: ModelStructure) -> np.ndarray:
    """Polynomial order of each regressor column (0 for DC)."""
    K, M = structure.order_k, structure.memory_m
    if structure.family is ModelFamily.VOLTERRA:
        k = [len(idx) for idx in volterra_terms(K, M)]
    else:
        k = [kk for kk in range(1, K + 1) for _ in range(M)]
    if structure.include_dc_term:
        k.append(0)
    return np.asarray(k)


def best_delay(x, y, delay_search) -> tuple[int, float]:
    """Delay ``d`` maximizing ``|corr(x[n], y[n + d])|`` over ``delay_search``."""
    best, best_c = None, -1.0
    for d in delay_search:
        d = int(d)
        if d < 0:
            raise ValueError("delays must be >= 0 (the observation lags the drive)")
        L = min(x.size, y.size - d)
        if L < 8:
            continue
        a = x[:L] - np.mean(x[:L])
        b = y[d : d + L] - np.mean(y[d : d + L])
        den = math.sqrt(float(a @ a) * float(b @ b))
        c = abs(float(a @ b)) / den if den > 0 else 0.0
        if c > best_c:
            best, best_c = d, c
    if best is None:
        raise ValueError("delay_search leaves fewer than 8 overlapping samples")
    return best, best_c


def fit_inverse_indirect(
    x_applied: Waveform,
    y_observed: Waveform,
    structure: ModelStructure,
    ridge_lambda=None,
    delay_search=range(0, 1),
    condition_ceiling=1e12,
    lookahead=0,
) -> FitReport:
    """Fit the plant's inverse from (drive, response) records.

    The observed response is the model input and the applied drive is the
    target. ``y_observed`` must already be in waveform units. The response is
    scaled by its peak magnitude before basis expansion; the returned
    coefficients act on unscaled input.

    The delay ``d`` maximizing the correlation magnitude is searched over
    ``delay_search``; the model then sees ``y[n + d + lookahead]``, so a
    positive ``lookahead`` lets the causal inverse use response samples
    beyond the correlation peak (needed to undo plant memory). The reported
    ``delay`` is ``d + lookahead``.
    """
    x_applied.check_rate(y_observed)
    if not structure.linear_in_parameters:
        raise ValueError(f"{structure.family.value} is not linear in its parameters")
    x = x_applied.samples
    y = y_observed.samples
    d, corr = best_delay(x, y, delay_search)
    d += int(lookahead)
    L = min(x.size, y.size - d)
    u = y[d : d + L]
    s = float(np.max(np.abs(u)))
    if s == 0.0:
        raise InsufficientExcitationError(math.inf, condition_ceiling)
    phi = regressor_matrix(structure, u / s)
    target = x[structure.warmup : L]
    rep = fit_ls(phi, target, ridge_lambda)
    if rep.condition_estimate > condition_ceiling:
        raise InsufficientExcitationError(rep.condition_estimate, condition_ceiling)
    coefs = rep.coefficients / s ** _orders(structure)
    params = params_from_linear(structure, coefs)
    diag = dict(rep.diagnostics, correlation=corr)
    return replace(rep, coefficients=coefs, params=params, delay=d, input_scale=s, diagnostics=diag)


def fit_subset(previous: FitReport, regressors, target, free_mask, ridge_lambda=None,
               structure: ModelStructure | None = None) -> FitReport:
    """Refit only the columns where ``free_mask`` is true; frozen coefficients pass through."""
    phi = np.asarray(regressors, dtype=np.float64)
    mask = np.asarray(free_mask, dtype=bool).reshape(-1)
    prev = np.asarray(previous.coefficients, dtype=np.float64)
    if mask.size != phi.shape[1] or prev.size != mask.size:
        raise ValueError("mask, previous coefficients and regressor columns must have equal length")
    if not mask.any():
        raise ValueError("free_mask freezes every coefficient")
    if structure is None and previous.params is not None:
        structure = previous.params.structure
    t = np.asarray(target, dtype=np.float64)
    if not mask.all():
        t = t - phi[:, ~mask] @ prev[~mask]
    sub = fit_ls(phi[:, mask], t, ridge_lambda)
    p = prev.copy()
    p[mask] = sub.coefficients
    full_t = np.asarray(target, dtype=np.float64)
    return replace(
        sub,
        coefficients=p,
        residual_nmse_db=_nmse(full_t, full_t - phi @ p),
        params=params_from_linear(structure, p) if structure is not None else None,
        delay=previous.delay,
        input_scale=previous.input_scale,
        diagnostics=dict(sub.diagnostics, free=int(mask.sum())),
    )


# -- serialization -----------------------------------------------------------

_FIT_KEYS = ("residual_nmse_db", "condition_estimate", "rows_used", "ridge_lambda", "delay", "input_scale")


def fit_report_to_text(report: FitReport) -> str:
    if report.params is None:
        raise ValueError("only reports carrying a ParamVector serialize")
    head, _, body = params_to_text(report.params).partition("coefficients:\n")
    lines = [f"fit.{k} = {getattr(report, k)!r}" for k in _FIT_KEYS]
    lines += [f"diag.{k} = {v!r}" for k, v in sorted(report.diagnostics.items())]
    lines.append("fit.linear_coefficients = " + " ".join(repr(float(c)) for c in report.coefficients))
    return head + "\n".join(lines) + "\ncoefficients:\n" + body


def fit_report_from_text(text: str) -> FitReport:
    params = params_from_text(text)
    head, _ = _parse_header(text.splitlines())
    num = {k: float(head[f"fit.{k}"]) for k in _FIT_KEYS}
    coefs = np.array([float(t) for t in head["fit.linear_coefficients"].split()])
    diag = {}
    for k, v in head.items():
        if k.startswith("diag."):
            try:
                diag[k[5:]] = int(v)
            except ValueError:
                diag[k[5:]] = float(v)
    return FitReport(
        coefficients=coefs,
        residual_nmse_db=num["residual_nmse_db"],
        condition_estimate=num["condition_estimate"],
        rows_used=int(num["rows_used"]),
        ridge_lambda=num["ridge_lambda"],
        params=params,
        delay=int(num["delay"]),
        input_scale=num["input_scale"],
        diagnostics=diag,
    )


# -- update policies ---------------------------------------------------------


class PolicyKind(enum.Enum):
    PERIODIC = "PERIODIC"
    ERROR_METRIC = "ERROR_METRIC"
    EVENT = "EVENT"
    NEVER = "NEVER"


@dataclass(frozen=True)
class UpdatePolicy:
    """When to refit. ``NEVER`` (updates disabled) is a harness convenience."""

    kind: PolicyKind = PolicyKind.ERROR_METRIC
    period_s: float = 1.0
    threshold_db: float = -30.0
    armed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.PERIODIC and not self.period_s > 0:
            raise ValueError("period_s must be > 0")


def should_update(policy: UpdatePolicy, now_s, last_update_s, last_metric_db, event_pending=False) -> bool:
    """Decide on a refit.

    ``last_metric_db`` of ``-inf`` (exact match, or nothing measured yet)
    never triggers the error-metric policy.
    """
    if now_s < last_update_s:
        raise ValueError("now_s precedes last_update_s")
    k = policy.kind
    if k is PolicyKind.PERIODIC:
        return now_s - last_update_s >= policy.period_s
    if k is PolicyKind.ERROR_METRIC:
        return last_metric_db is not None and last_metric_db > policy.threshold_db
    if k is PolicyKind.EVENT:
        return bool(event_pending) and policy.armed
    return False


# -- temperature registry ----------------------------------------------------


@dataclass(frozen=True)
class Selection:
    params: ParamVector
    label: str
    out_of_range: bool


@dataclass(frozen=True)
class TemperatureBin:
    lo_c: float
    hi_c: float
    params: ParamVector

    @property
    def label(self) -> str:
        return f"{self.lo_c:g}_{self.hi_c:g}"


class TemperatureRegistry:
    """Contiguous, ordered temperature bins each holding a parameter set.

    Bin ``i`` covers ``(lo_i, hi_i]``; the lowest bin also includes its lower
    edge. A temperature on a shared boundary therefore selects the lower bin.
    """

    def __init__(self, bins=()):
        self.bins: list[TemperatureBin] = []
        for b in bins:
            self.add(*b) if not isinstance(b, TemperatureBin) else self.add(b.lo_c, b.hi_c, b.params)

    def __len__(self):
        return len(self.bins)

    def add(self, lo_c, hi_c, params: ParamVector):
        lo_c, hi_c = float(lo_c), float(hi_c)
        if not lo_c < hi_c:
            raise ValueError("bin needs lo < hi")
        new = TemperatureBin(lo_c, hi_c, params)
        bins = sorted(self.bins + [new], key=lambda b: b.lo_c)
        for a, b in zip(bins, bins[1:]):
            if b.lo_c < a.hi_c:
                raise ValueError(f"bins {a.label} and {b.label} overlap")
            if b.lo_c > a.hi_c:
                raise ValueError(f"gap between bins {a.label} and {b.label}")
        self.bins = bins

    def select(self, temp_c) -> Selection:
        if not self.bins:
            raise LookupError("registry is empty")
        t = float(temp_c)
        if t < self.bins[0].lo_c:
            b = self.bins[0]
            return Selection(b.params, b.label, True)
        for b in self.bins:
            if t <= b.hi_c:
                return Selection(b.params, b.label, False)
        b = self.bins[-1]
        return Selection(b.params, b.label, True)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        index = []
        for b in self.bins:
            name = f"bin_{b.label}.txt"
            (d / name).write_text(params_to_text(b.params))
            index.append(f"{b.lo_c!r} {b.hi_c!r} {name}")
        (d / "index.txt").write_text("\n".join(index) + "\n")

    @classmethod
    def load(cls, directory) -> "TemperatureRegistry":
        d = Path(directory)
        reg = cls()
        for line in (d / "index.txt").read_text().splitlines():
            if line.strip():
                lo, hi, name = line.split()
                reg.add(float(lo), float(hi), params_from_text((d / name).read_text()))
        return reg


def registry_select(registry: TemperatureRegistry, temp_c) -> Selection:
    """Parameter set for ``temp_c`` (clamped to the covered span, flagged)."""
    return registry.select(temp_c)


__all__ = [
    "RankDeficientError",
    "InsufficientExcitationError",
    "FitReport",
    "default_ridge",
    "fit_ls",
    "best_delay",
    "fit_inverse_indirect",
    "fit_subset",
    "fit_report_to_text",
    "fit_report_from_text",
    "PolicyKind",
    "UpdatePolicy",
    "should_update",
    "Selection",
    "TemperatureBin",
    "TemperatureRegistry",
    "registry_select",
    "regressor_count",
]

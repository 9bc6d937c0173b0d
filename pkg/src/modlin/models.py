"""Nonlinear memory models: Volterra, Wiener, Hammerstein, Wiener-Hammerstein, memory polynomial.

Coefficient layouts (``ParamVector.coefficients``)
--------------------------------------------------
VOLTERRA
    For ``k = 1..K`` and every non-decreasing index tuple ``(m1 <= ... <= mk)``
    over ``0..M-1`` in lexicographic order, one canonical coefficient. A
    canonical coefficient is the sum of the full (hypercube) kernel over all
    distinct permutations of its tuple, i.e. ``multiplicity * h_k`` for a
    symmetric kernel. See :func:`volterra_canonicalize` / :func:`volterra_expand`.
WIENER
    ``h(0..M-1)`` then ``a_1..a_K``.
HAMMERSTEIN
    ``g(0..M-1)`` then ``a_1..a_K``.
WIENER_HAMMERSTEIN
    ``h(0..M-1)``, ``a_1..a_K``, ``g(0..M-1)``.
MEMORY_POLYNOMIAL
    ``b[k, m]`` row-major over ``k = 1..K`` then ``m = 0..M-1``.

With ``include_dc_term`` a constant offset is appended as the last coefficient.

All evaluation is causal with zero history before the first sample. Output
samples that depend on that padding are counted in ``Waveform.warmup``.
Evaluation uses fixed-order elementwise arithmetic only, so evaluating a
window of a signal reproduces the corresponding samples of a full-length
evaluation bit for bit.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from modlin.signal import Waveform

LAYOUT_VERSION = 1


class ModelFamily(enum.Enum):
    VOLTERRA = "VOLTERRA"
    WIENER = "WIENER"
    HAMMERSTEIN = "HAMMERSTEIN"
    WIENER_HAMMERSTEIN = "WIENER_HAMMERSTEIN"
    MEMORY_POLYNOMIAL = "MEMORY_POLYNOMIAL"


LINEAR_FAMILIES = (ModelFamily.VOLTERRA, ModelFamily.HAMMERSTEIN, ModelFamily.MEMORY_POLYNOMIAL)


@dataclass(frozen=True)
class ModelStructure:
    family: ModelFamily
    order_k: int
    memory_m: int
    include_dc_term: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        if int(self.order_k) != self.order_k or self.order_k < 1:
            raise ValueError("order_k must be an integer >= 1")
        if int(self.memory_m) != self.memory_m or self.memory_m < 1:
            raise ValueError("memory_m must be an integer >= 1")
        object.__setattr__(self, "order_k", int(self.order_k))
        object.__setattr__(self, "memory_m", int(self.memory_m))
        object.__setattr__(self, "include_dc_term", bool(self.include_dc_term))

    @property
    def span(self) -> int:
        """Number of input samples one output sample depends on."""
        if self.family is ModelFamily.WIENER_HAMMERSTEIN:
            return 2 * self.memory_m - 1
        return self.memory_m

    @property
    def warmup(self) -> int:
        return self.span - 1

    @property
    def linear_in_parameters(self) -> bool:
        return self.family in LINEAR_FAMILIES


def param_count(structure: ModelStructure) -> int:
    """Length of the coefficient vector for ``structure``."""
    K, M = structure.order_k, structure.memory_m
    fam = structure.family
    if fam is ModelFamily.VOLTERRA:
        n = sum(math.comb(M + k - 1, k) for k in range(1, K + 1))
    elif fam in (ModelFamily.WIENER, ModelFamily.HAMMERSTEIN):
        n = M + K
    elif fam is ModelFamily.WIENER_HAMMERSTEIN:
        n = 2 * M + K
    else:
        n = K * M
    return n + (1 if structure.include_dc_term else 0)


def regressor_count(structure: ModelStructure) -> int:
    """Number of regressor columns (lifted ``K*M`` basis for Hammerstein)."""
    if structure.family is ModelFamily.HAMMERSTEIN:
        return structure.order_k * structure.memory_m + (1 if structure.include_dc_term else 0)
    if not structure.linear_in_parameters:
        raise ValueError(f"{structure.family.value} is nonlinear in its coefficients")
    return param_count(structure)


@dataclass(frozen=True, eq=False)
class ParamVector:
    structure: ModelStructure
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64).reshape(-1)
        n = param_count(self.structure)
        if c.size != n:
            raise ValueError(f"{self.structure.family.value} K={self.structure.order_k} "
                             f"M={self.structure.memory_m} needs {n} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def __len__(self):
        return self.coefficients.size

    def __eq__(self, other):
        return (
            isinstance(other, ParamVector)
            and self.structure == other.structure
            and np.array_equal(self.coefficients, other.coefficients)
        )

    def __hash__(self):
        return hash((self.structure, self.coefficients.tobytes()))

    @property
    def dc(self) -> float:
        return float(self.coefficients[-1]) if self.structure.include_dc_term else 0.0

    def parts(self) -> dict:
        """Named views of the coefficient blocks."""
        s = self.structure
        c = self.coefficients
        K, M = s.order_k, s.memory_m
        fam = s.family
        if fam is ModelFamily.VOLTERRA:
            out, i = {}, 0
            for k in range(1, K + 1):
                n = math.comb(M + k - 1, k)
                out[f"h{k}"] = c[i : i + n]
                i += n
            return out
        if fam is ModelFamily.WIENER:
            return {"h": c[:M], "a": c[M : M + K]}
        if fam is ModelFamily.HAMMERSTEIN:
            return {"g": c[:M], "a": c[M : M + K]}
        if fam is ModelFamily.WIENER_HAMMERSTEIN:
            return {"h": c[:M], "a": c[M : M + K], "g": c[M + K : 2 * M + K]}
        return {"b": c[: K * M].reshape(K, M)}


# -- identity and layout helpers --------------------------------------------


def identity_params(structure: ModelStructure) -> ParamVector:
    """Coefficients making the model the identity map ``y = x``."""
    s = structure
    c = np.zeros(param_count(s))
    M, K = s.memory_m, s.order_k
    fam = s.family
    if fam is ModelFamily.VOLTERRA or fam is ModelFamily.MEMORY_POLYNOMIAL:
        c[0] = 1.0
    elif fam in (ModelFamily.WIENER, ModelFamily.HAMMERSTEIN):
        c[0] = 1.0
        c[M] = 1.0
    else:
        c[0] = 1.0
        c[M] = 1.0
        c[M + K] = 1.0
    return ParamVector(s, c)


def volterra_terms(order_k: int, memory_m: int) -> list[tuple[int, ...]]:
    """Canonical index tuples in layout order."""
    out = []
    for k in range(1, order_k + 1):
        out.extend(itertools.combinations_with_replacement(range(memory_m), k))
    return out


def multiplicity(idx: tuple[int, ...]) -> int:
    """Number of distinct orderings of a kernel index tuple."""
    n = math.factorial(len(idx))
    for c in Counter(idx).values():
        n //= math.factorial(c)
    return n


def volterra_canonicalize(kernels, memory_m: int, include_dc_term=False, dc=0.0) -> ParamVector:
    """Fold full hypercube kernels ``{k: array of shape (M,)*k}`` into canonical form.

    Any permutation of the entries of a kernel maps to the same canonical
    coefficients, so the model output does not depend on index order.
    """
    kernels = {int(k): np.asarray(v, dtype=float) for k, v in dict(kernels).items()}
    K = max(kernels)
    coefs = []
    for idx in volterra_terms(K, memory_m):
        kern = kernels.get(len(idx))
        if kern is None:
            coefs.append(0.0)
            continue
        if kern.shape != (memory_m,) * len(idx):
            raise ValueError(f"kernel h{len(idx)} must have shape {(memory_m,) * len(idx)}")
        coefs.append(float(sum(kern[p] for p in set(itertools.permutations(idx)))))
    if include_dc_term:
        coefs.append(dc)
    return ParamVector(ModelStructure(ModelFamily.VOLTERRA, K, memory_m, include_dc_term), coefs)


def volterra_expand(params: ParamVector) -> dict:
    """Symmetric full kernels whose hypercube sum reproduces ``params``."""
    s = params.structure
    if s.family is not ModelFamily.VOLTERRA:
        raise ValueError("volterra_expand needs a VOLTERRA ParamVector")
    M = s.memory_m
    out = {k: np.zeros((M,) * k) for k in range(1, s.order_k + 1)}
    for idx, c in zip(volterra_terms(s.order_k, M), params.coefficients):
        share = c / multiplicity(idx)
        for p in set(itertools.permutations(idx)):
            out[len(idx)][p] = share
    return out


def linear_coefficients(params: ParamVector) -> np.ndarray:
    """Coefficients matching the columns of :func:`regressor_matrix`.

    Equal to ``params.coefficients`` except for Hammerstein, whose lifted
    coefficients are ``c[k, m] = a_k g(m)`` (row-major) plus the DC term.
    """
    s = params.structure
    if s.family is ModelFamily.HAMMERSTEIN:
        p = params.parts()
        lifted = np.multiply.outer(p["a"], p["g"]).reshape(-1)
        if s.include_dc_term:
            lifted = np.append(lifted, params.dc)
        return lifted
    regressor_count(s)
    return params.coefficients.copy()


def hammerstein_from_lifted(structure: ModelStructure, lifted) -> ParamVector:
    """Best rank-one factorization ``c[k, m] ~ a_k g(m)`` normalized to ``g(0) = 1``.

    If ``g(0)`` vanishes the largest-magnitude tap is normalized to 1 instead.
    """
    K, M = structure.order_k, structure.memory_m
    lifted = np.asarray(lifted, dtype=float)
    C = lifted[: K * M].reshape(K, M)
    if M == 1:
        a, g = C[:, 0].copy(), np.ones(1)
    else:
        U, S, Vt = np.linalg.svd(C, full_matrices=False)
        a = U[:, 0] * S[0]
        g = Vt[0].copy()
        ref = g[0] if abs(g[0]) > 1e-12 * np.max(np.abs(g)) else g[np.argmax(np.abs(g))]
        if ref == 0.0:
            a, g = np.zeros(K), np.eye(1, M).ravel()
        else:
            g, a = g / ref, a * ref
    coefs = np.concatenate([g, a])
    if structure.include_dc_term:
        coefs = np.append(coefs, lifted[-1])
    return ParamVector(structure, coefs)


def params_from_linear(structure: ModelStructure, theta) -> ParamVector:
    """Inverse of :func:`linear_coefficients` (rank-one projection for Hammerstein)."""
    if structure.family is ModelFamily.HAMMERSTEIN:
        return hammerstein_from_lifted(structure, theta)
    regressor_count(structure)
    return ParamVector(structure, theta)


# -- evaluation --------------------------------------------------------------


def _delayed(x: np.ndarray, m: int) -> np.ndarray:
    if m == 0:
        return x
    out = np.zeros_like(x)
    if m < x.size:
        out[m:] = x[: x.size - m]
    return out


def _fir(taps, x):
    y = np.zeros_like(x)
    for m, h in enumerate(taps):
        y = y + h * _delayed(x, m)
    return y


def _poly(coefs, u):
    y = np.zeros_like(u)
    p = None
    for a in coefs:
        p = u if p is None else p * u
        y = y + a * p
    return y


def _powers(x, K):
    out = [x]
    for _ in range(1, K):
        out.append(out[-1] * x)
    return out


def _check(params: ParamVector, structure: ModelStructure | None):
    if structure is not None and structure != params.structure:
        raise ValueError("ParamVector structure does not match the requested structure")
    return params.structure


def evaluate_array(structure: ModelStructure, params: ParamVector, x) -> np.ndarray:
    """Model output for a plain array (zero history)."""
    s = _check(params, structure)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("model input must be one-dimensional")
    K, M = s.order_k, s.memory_m
    p = params.parts()
    fam = s.family
    if fam is ModelFamily.VOLTERRA:
        shifted = [_delayed(x, m) for m in range(M)]
        y = np.zeros_like(x)
        for idx, c in zip(volterra_terms(K, M), params.coefficients):
            t = shifted[idx[0]]
            for m in idx[1:]:
                t = t * shifted[m]
            y = y + c * t
    elif fam is ModelFamily.WIENER:
        y = _poly(p["a"], _fir(p["h"], x))
    elif fam is ModelFamily.HAMMERSTEIN:
        y = _fir(p["g"], _poly(p["a"], x))
    elif fam is ModelFamily.WIENER_HAMMERSTEIN:
        y = _fir(p["g"], _poly(p["a"], _fir(p["h"], x)))
    else:
        b = p["b"]
        y = np.zeros_like(x)
        for k, xk in enumerate(_powers(x, K)):
            for m in range(M):
                y = y + b[k, m] * _delayed(xk, m)
    if s.include_dc_term:
        y = y + params.dc
    return y


def evaluate(structure: ModelStructure, params: ParamVector, x: Waveform) -> Waveform:
    """Causal model output; the first ``span - 1`` samples are flagged as warm-up."""
    s = _check(params, structure)
    if len(x) < s.memory_m:
        raise ValueError(f"input has {len(x)} samples; memory_m = {s.memory_m}")
    y = evaluate_array(s, params, x.samples)
    return Waveform(x.sample_rate_hz, y, warmup=min(s.warmup, len(x)))


def regressor_matrix(structure: ModelStructure, x: Waveform, include_warmup=False) -> np.ndarray:
    """Basis values per output sample; ``Phi @ linear_coefficients(p)`` equals the model output.

    Rows cover ``n = span-1 .. N-1`` (warm-up excluded unless requested).
    Hammerstein columns are the lifted ``x^k(n-m)`` basis (k-major), so the
    column count is ``K*M`` (+1 for DC) rather than ``M + K``.
    """
    s = structure
    if not s.linear_in_parameters:
        raise ValueError(
            f"{s.family.value} depends nonlinearly on its filter taps; no regressor matrix exists"
        )
    xs = np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)
    K, M = s.order_k, s.memory_m
    if xs.size <= M - 1 or (not include_warmup and xs.size <= M):
        raise ValueError(f"need more than memory_m = {M} samples, got {xs.size}")
    cols = []
    if s.family is ModelFamily.VOLTERRA:
        shifted = [_delayed(xs, m) for m in range(M)]
        for idx in volterra_terms(K, M):
            t = shifted[idx[0]]
            for m in idx[1:]:
                t = t * shifted[m]
            cols.append(t)
    else:
        for xk in _powers(xs, K):
            for m in range(M):
                cols.append(_delayed(xk, m))
    if s.include_dc_term:
        cols.append(np.ones_like(xs))
    phi = np.column_stack(cols)
    return phi if include_warmup else phi[s.warmup :]


def cascade(structure_a, params_a, structure_b, params_b, x: Waveform) -> Waveform:
    """``evaluate(b, evaluate(a, x))``; warm-up counts add."""
    ya = evaluate(structure_a, params_a, x)
    yb = evaluate(structure_b, params_b, ya)
    return yb.with_samples(yb.samples, warmup=min(len(x), ya.warmup + params_b.structure.warmup))


# -- serialization -----------------------------------------------------------


def params_to_text(params: ParamVector) -> str:
    s = params.structure
    lines = [
        "# modlin parameter vector",
        f"layout_version = {LAYOUT_VERSION}",
        f"family = {s.family.value}",
        f"order_k = {s.order_k}",
        f"memory_m = {s.memory_m}",
        f"include_dc_term = {'true' if s.include_dc_term else 'false'}",
        f"count = {len(params)}",
        "coefficients:",
    ]
    lines.extend(repr(float(c)) for c in params.coefficients)
    return "\n".join(lines) + "\n"


def _parse_header(lines):
    head, body = {}, None
    for i, line in enumerate(lines):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line == "coefficients:":
            body = i + 1
            break
        if "=" not in line:
            raise ValueError(f"line {i + 1}: expected 'key = value', got {line!r}")
        k, v = (t.strip() for t in line.split("=", 1))
        head[k] = v
    if body is None:
        raise ValueError("missing 'coefficients:' section")
    return head, body


def params_from_text(text: str) -> ParamVector:
    lines = text.splitlines()
    head, body = _parse_header(lines)
    if int(head.get("layout_version", -1)) != LAYOUT_VERSION:
        raise ValueError(f"unsupported layout_version {head.get('layout_version')!r}")
    s = ModelStructure(
        ModelFamily(head["family"]),
        int(head["order_k"]),
        int(head["memory_m"]),
        head.get("include_dc_term", "false").lower() == "true",
    )
    coefs = [float(t) for t in (ln.strip() for ln in lines[body:]) if t and not t.startswith("#")]
    if "count" in head and int(head["count"]) != len(coefs):
        raise ValueError(f"count = {head['count']} but {len(coefs)} coefficients listed")
    return ParamVector(s, coefs)


def save_params(params: ParamVector, path):
    Path(path).write_text(params_to_text(params))


def load_params(path) -> ParamVector:
    return params_from_text(Path(path).read_text())

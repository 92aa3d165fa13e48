"""Low-eigenvalue counting on stretched necks and the min-max machinery.

The number of eigenvalues of the degree-q glued operator in the window
(0, pi^2 s/T^2] grows like 2(b^{q-1}+b^q) sqrt(s) with a T-independent
remainder. This module counts them from the tridiagonal spectra, compares
against the product benchmark, and builds the Fourier test spaces whose
Rayleigh quotients give the matching upper bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import (
    AnalysisError,
    ContractViolation,
    InsufficientEigenvaluesError,
    ResolutionError,
)
from .glued_model import EigenResult, GluedOperator, eigen_lowest
from .gluing_solver import SubstituteKernel, substitute_kernel
from .ioutil import format_real
from .polyhom import CutoffFunction
from .spectral_model import CrossSectionSpectrum, mode_list

THRESHOLD_ZERO = 1e-10


def betti_sum(spec: CrossSectionSpectrum, q: int) -> int:
    """B = b^{q-1} + b^q, the density constant of the cross-section."""
    return spec.betti(q - 1) + spec.betti(q)


def window_top(G: GluedOperator, s: float) -> float:
    return math.pi**2 * s / G.T**2


def _coverage_check(G: GluedOperator, result: EigenResult, top: float) -> None:
    by_mode: dict[int, float] = {}
    counts: dict[int, int] = {}
    for e in result.entries:
        by_mode[e.mode_index] = max(by_mode.get(e.mode_index, -math.inf), e.value)
        counts[e.mode_index] = counts.get(e.mode_index, 0) + 1
    for i in range(len(G.modes)):
        exhausted = counts.get(i, 0) >= G.n_points
        if not exhausted and by_mode.get(i, -math.inf) <= top:
            raise InsufficientEigenvaluesError(
                f"mode {i}: computed spectrum stops below the counting window top {top:.3e}"
            )


def _eigen_for_window(G: GluedOperator, s: float) -> EigenResult:
    k = min(int(math.ceil(2.5 * math.sqrt(s))) + 8, G.n_points)
    return eigen_lowest(G, k)


def count_low_eigenvalues(G: GluedOperator, s: float, result: EigenResult | None = None) -> int:
    """Multiplicity count of eigenvalues in (threshold, pi^2 s/T^2]; the
    threshold 1e-10 keeps the numerical kernel out of the window."""
    top = window_top(G, s)
    if result is None:
        result = _eigen_for_window(G, s)
    _coverage_check(G, result, top)
    vals = result.values()
    return int(np.sum((vals > THRESHOLD_ZERO) & (vals <= top)))


def coexact_split_counts(
    G: GluedOperator, s: float, result: EigenResult | None = None
) -> tuple[int, int]:
    """(exact branch, coexact branch): window counts split by the mode's
    degree tag. Beta-tagged modes descend from harmonic (q-1)-forms and
    carry the exact branch; alpha-tagged modes carry the coexact one."""
    top = window_top(G, s)
    if result is None:
        result = _eigen_for_window(G, s)
    _coverage_check(G, result, top)
    exact = coexact = 0
    for e in result.entries:
        if THRESHOLD_ZERO < e.value <= top:
            if e.degree_tag == "beta":
                exact += 1
            else:
                coexact += 1
    return exact, coexact


def product_benchmark(spec: CrossSectionSpectrum, q: int, T: float, s: float) -> int:
    """Eigenvalue count of the product model circle(2T) x X in the window:
    values (k pi/T)^2 + nu over k in Z and the degree-q mode list."""
    top = math.pi**2 * s / T**2
    total = 0
    for m in mode_list(spec, q, cutoff=top):
        if m.nu > THRESHOLD_ZERO:
            room = top - m.nu
            if room < 0:
                continue
            k_max = int(math.floor(T * math.sqrt(room) / math.pi + 1e-9))
            total += 2 * k_max + 1
        else:
            total += 2 * int(math.floor(math.sqrt(s) + 1e-9))
    return total


def product_shift(G: GluedOperator, s: float, result: EigenResult | None = None) -> int:
    """Measured count minus the product benchmark; reported as data only."""
    return count_low_eigenvalues(G, s, result) - product_benchmark(G.spec, G.q, G.T, s)


# ---------------------------------------------------------------------------
# density sweeps


@dataclass(frozen=True)
class DensityReport:
    """Window counts over a (T, s) sweep against the density prediction."""

    q: int
    B: int
    b_exact: int  # b^{q-1}, the exact-branch multiplicity
    b_coexact: int  # b^q
    T_values: tuple[float, ...]
    s_values: tuple[float, ...]
    counts: tuple[tuple[int, ...], ...]  # indexed [T][s]
    prediction: tuple[float, ...]  # per s: 2 B sqrt(s)
    residuals: tuple[tuple[float, ...], ...]
    coexact: tuple[tuple[tuple[int, int], ...], ...] | None

    @property
    def max_residual(self) -> float:
        return float(max(abs(r) for row in self.residuals for r in row))


def density_sweep(
    builder: Callable[[float], GluedOperator],
    q: int,
    s_values,
    T_values,
    include_coexact: bool = True,
) -> DensityReport:
    """Count window eigenvalues for every (T, s) pair from one eigenvalue
    list per T; asserts count monotonicity in s and, when both s and 4s
    appear, that their residuals differ by at most 2B + 2."""
    s_values = tuple(float(s) for s in s_values)
    T_values = tuple(float(T) for T in T_values)
    if not s_values or not T_values:
        raise ContractViolation("density sweep needs at least one s and one T")
    counts = []
    coexact = [] if include_coexact else None
    B = b_exact = b_coexact = None
    for T in T_values:
        G = builder(T)
        if G.q != q:
            raise ContractViolation("builder produced an operator of the wrong degree")
        b_exact, b_coexact = G.spec.betti(q - 1), G.spec.betti(q)
        B = b_exact + b_coexact
        result = _eigen_for_window(G, max(s_values))
        row = [count_low_eigenvalues(G, s, result) for s in s_values]
        if any(b < a for a, b in zip(row, row[1:])) and sorted(s_values) == list(s_values):
            raise AnalysisError("window counts decreased in s")
        counts.append(tuple(row))
        if include_coexact:
            coexact.append(tuple(coexact_split_counts(G, s, result) for s in s_values))
    prediction = tuple(2.0 * B * math.sqrt(s) for s in s_values)
    residuals = tuple(
        tuple(c - p for c, p in zip(row, prediction)) for row in counts
    )
    for i, s in enumerate(s_values):
        for j, s4 in enumerate(s_values):
            if abs(s4 - 4.0 * s) < 1e-12:
                for row in residuals:
                    if abs(row[j] - row[i]) > 2 * B + 2:
                        raise AnalysisError(
                            f"residual drift between s = {s} and 4s exceeds 2B + 2"
                        )
    return DensityReport(
        q=q,
        B=B,
        b_exact=b_exact,
        b_coexact=b_coexact,
        T_values=T_values,
        s_values=s_values,
        counts=tuple(counts),
        prediction=prediction,
        residuals=residuals,
        coexact=tuple(coexact) if include_coexact else None,
    )


def density_csv(report: DensityReport) -> str:
    lines = ["q,T,s,count,prediction,residual,branch"]
    for i, T in enumerate(report.T_values):
        for j, s in enumerate(report.s_values):
            lines.append(
                f"{report.q},{format_real(T)},{format_real(s)},{report.counts[i][j]},"
                f"{format_real(report.prediction[j])},{format_real(report.residuals[i][j])},all"
            )
            if report.coexact is not None:
                ex, co = report.coexact[i][j]
                for name, cnt, mult in (("exact", ex, report.b_exact),
                                        ("coexact", co, report.b_coexact)):
                    pred = 2.0 * mult * math.sqrt(s)
                    lines.append(
                        f"{report.q},{format_real(T)},{format_real(s)},{cnt},"
                        f"{format_real(pred)},{format_real(cnt - pred)},{name}"
                    )
    return "\n".join(lines) + "\n"


def gnuplot_tables(report: DensityReport) -> dict[str, str]:
    """Two-column (s, count) tables, one file name per (q, T)."""
    out = {}
    for i, T in enumerate(report.T_values):
        rows = ["# s count"]
        for j, s in enumerate(report.s_values):
            rows.append(f"{format_real(s)} {report.counts[i][j]}")
        out[f"density_q{report.q}_T{format_real(T)}.dat"] = "\n".join(rows) + "\n"
    return out


# ---------------------------------------------------------------------------
# Fourier test spaces on [-1, 1]


@dataclass(frozen=True)
class TestSpace:
    """Span of e^{i k pi x} on [-1,1] cut by linear constraints on the
    coefficients; basis rows are orthonormal coefficient vectors."""

    kind: str
    n: int
    k_values: tuple[int, ...]
    basis: np.ndarray
    constraints: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def _k_window(n: int) -> tuple[int, ...]:
    return tuple(k for k in range(-n, n + 1) if k != 0)


def _constraint_rows(kind: str, n: int, ks: tuple[int, ...]) -> np.ndarray:
    sign = np.array([(-1.0) ** abs(k) for k in ks])
    karr = np.array(ks, dtype=float)
    if kind == "Vn":
        return np.vstack([sign, sign * karr])
    if kind == "E":
        return np.vstack([sign / karr, sign / karr**2])
    if kind == "VnPrime":
        rows = [sign / karr, sign / karr**2]
        for j, k in enumerate(ks):
            if abs(k) <= n:
                e = np.zeros(len(ks))
                e[j] = 1.0
                rows.append(e)
        return np.vstack(rows)
    if kind == "Wn":
        base = _constraint_rows("VnPrime", n, ks)
        return np.vstack([base, sign * karr**2])
    raise ContractViolation(f"unknown test-space kind {kind!r}")


def test_space(kind: str, n: int, window: int | None = None) -> TestSpace:
    """Build a finite Fourier model of V_n, E, V'_n or W_n.

    V_n lives on its own window |k| <= n; the others need window > n wide
    enough to leave room below the removed frequencies."""
    if kind == "Vn":
        if n < 2:
            raise ContractViolation("V_n needs n >= 2")
        ks = _k_window(n)
    else:
        if window is None:
            window = 2 * n + 2
        if kind in ("VnPrime", "Wn") and window <= n + 1:
            raise ContractViolation("window must exceed n + 1 to leave room in E")
        ks = _k_window(window)
    rows = _constraint_rows(kind, n, ks)
    basis = scipy.linalg.null_space(rows).T
    return TestSpace(kind=kind, n=n, k_values=ks, basis=basis, constraints=rows)


def space_contains(space: TestSpace, coeffs: Mapping[int, complex], tol: float = 1e-9) -> bool:
    """Whether the coefficient set satisfies the space's constraints (any
    frequency outside the window, or k = 0, disqualifies)."""
    scale = max((abs(v) for v in coeffs.values()), default=1.0)
    vec = np.zeros(len(space.k_values), dtype=complex)
    index = {k: i for i, k in enumerate(space.k_values)}
    for k, a in coeffs.items():
        if k not in index:
            if abs(a) > tol * scale:
                return False
            continue
        vec[index[k]] = a
    return bool(np.max(np.abs(space.constraints @ vec), initial=0.0) <= tol * scale)


def assert_space_dimensions(n: int, window: int | None = None) -> dict[str, int]:
    """Rank-certify dim V_n = 2n-2, codim E = 3 (with a_0), codim of V'_n
    inside E = 2n, and the single extra constraint of W_n."""
    if window is None:
        window = 2 * n + 2
    vn = test_space("Vn", n)
    e = test_space("E", n, window)
    vp = test_space("VnPrime", n, window)
    wn = test_space("Wn", n, window)
    dims = {
        "Vn": vn.dim,
        "E": e.dim,
        "VnPrime": vp.dim,
        "Wn": wn.dim,
        "E_codim": 2 * window + 1 - e.dim,
        "VnPrime_codim_in_E": e.dim - vp.dim,
        "Wn_codim_in_VnPrime": vp.dim - wn.dim,
    }
    expected = {
        "Vn": 2 * n - 2,
        "E_codim": 3,
        "VnPrime_codim_in_E": 2 * n,
        "Wn_codim_in_VnPrime": 1,
    }
    for key, want in expected.items():
        if dims[key] != want:
            raise AnalysisError(f"test-space dimension check failed: {key} = {dims[key]}, expected {want}")
    return dims


def fourier_values(k_values, coeffs, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(np.asarray(x, dtype=float), dtype=complex)
    for k, a in zip(k_values, coeffs):
        if a != 0:
            out = out + a * np.exp(1j * k * math.pi * np.asarray(x))
    return out


def fourier_l2_norm(coeffs: Mapping[int, complex], T: float) -> float:
    """L^2 norm of f_T(t) = f(t/T) on [-T, T] by Parseval."""
    return math.sqrt(2.0 * T * sum(abs(a) ** 2 for a in coeffs.values()))


def h_operator_check(coeffs: Mapping[int, complex], T: float, h: float = 1.0 / 128) -> float:
    """Compare H f_T(t) = int_{-inf}^t (tau - t) f_T(tau) dtau against its
    closed Fourier form (T^2/pi^2) sum a_k/k^2 e^{i k pi t/T}.

    Requires f in E: a_0 = 0 and the two alternating moment sums vanish,
    which is exactly what cancels the affine boundary terms at t = -T and
    makes Hf_T vanish beyond t = T. Returns the max absolute deviation,
    including the far-side moment defect; compare to 1e-6 ||f||.
    """
    if h > 1.0 / 128 + 1e-12:
        raise ContractViolation("need h <= 1/128 for the quadrature comparison")
    ks = sorted(coeffs)
    amax = max((abs(coeffs[k]) for k in ks), default=0.0)
    if amax == 0.0:
        return 0.0
    sums = [
        abs(coeffs.get(0, 0.0)),
        abs(sum((-1.0) ** abs(k) * coeffs[k] / k for k in ks if k != 0)),
        abs(sum((-1.0) ** abs(k) * coeffs[k] / k**2 for k in ks if k != 0)),
    ]
    if max(sums) > 1e-9 * amax:
        raise ContractViolation("test function is not in E (moment sums nonzero)")
    m = int(round(2.0 * T / h))
    t = -T + h * np.arange(m + 1)
    f = np.zeros(m + 1, dtype=complex)
    closed = np.zeros(m + 1, dtype=complex)
    for k in ks:
        if k == 0:
            continue
        phase = np.exp(1j * k * math.pi * t / T)
        f += coeffs[k] * phase
        closed += coeffs[k] / k**2 * phase
    closed *= T**2 / math.pi**2

    def cum(y):
        re = scipy.integrate.cumulative_simpson(y.real, dx=h, initial=0.0)
        im = scipy.integrate.cumulative_simpson(y.imag, dx=h, initial=0.0)
        return re + 1j * im

    m0 = cum(f)
    m1 = cum(t * f)
    numeric = m1 - t * m0
    dev = float(np.max(np.abs(numeric - closed)))
    # beyond T the closed form is zero; the numeric tail is affine in t
    # with coefficients given by the total moments
    tail = abs(m1[-1]) + abs(m0[-1]) * (T + 2.0)
    return max(dev, float(tail))


# ---------------------------------------------------------------------------
# min-max upper bounds


def minmax_upper_from_Vn(
    G: GluedOperator,
    n: int,
    dim_kernel: int | None = None,
    tau: float = 0.1,
    eps: float = 0.05,
) -> float:
    """Rayleigh bound from the V_n trial space on the neck.

    Places every V_n basis function, scaled to [-T, T] and cut at
    (1-tau) T, on each zero-mode row; returns the largest generalized
    Rayleigh quotient and asserts the min-max consequence: at least
    (2n-2) B - dim kernel eigenvalues lie in (threshold, (1+eps)(n pi)^2/T^2].
    """
    if n < 2:
        raise ContractViolation("need n >= 2")
    zero_modes = [i for i, m in enumerate(G.modes) if m.is_zero_mode]
    if not zero_modes:
        raise ContractViolation("no zero modes to carry the trial space")
    space = test_space("Vn", n)
    t = G.grid()
    cut = CutoffFunction(0.0)((1.0 - tau) * G.T - np.abs(t))
    trials = []
    for row in space.basis:
        trials.append(fourier_values(space.k_values, row, t / G.T) * cut)
    bound = 0.0
    for i in zero_modes:
        d = len(trials)
        A = np.zeros((d, d), dtype=complex)
        M = np.zeros((d, d), dtype=complex)
        applied = [G.apply_mode(i, u.astype(complex)) for u in trials]
        for a in range(d):
            for b in range(d):
                A[a, b] = G.h * np.sum(applied[b] * np.conj(trials[a]))
                M[a, b] = G.h * np.sum(trials[b] * np.conj(trials[a]))
        mvals = np.linalg.eigvalsh(M)
        if mvals[0] <= 1e-12 * max(mvals[-1], 1.0):
            raise ResolutionError("trial space is degenerate on this grid; refine h")
        vals = scipy.linalg.eigh(A, M, eigvals_only=True)
        bound = max(bound, float(np.max(vals.real)))
    target = (1.0 + eps) * (n * math.pi) ** 2 / G.T**2
    if bound > target:
        raise AnalysisError(
            f"trial Rayleigh bound {bound:.6e} exceeds (1+eps)(n pi)^2/T^2 = {target:.6e}"
        )
    want = (2 * n - 2) * len(zero_modes)
    result = eigen_lowest(G, min(want + 4, G.n_points))
    vals = result.values()
    if dim_kernel is None:
        dim_kernel = int(np.sum(vals <= THRESHOLD_ZERO))
    got = int(np.sum((vals > THRESHOLD_ZERO) & (vals <= target)))
    if got < want - dim_kernel:
        raise AnalysisError(
            f"min-max count failed: {got} eigenvalues below {target:.6e}, "
            f"expected at least {want - dim_kernel}"
        )
    return bound


def scalar_lambda1_bounds(
    G: GluedOperator, S: SubstituteKernel | None = None
) -> tuple[float, float]:
    """(lower, upper) for the first nonzero eigenvalue of the scalar model.

    Lower is the measured first eigenvalue above the kernel threshold;
    upper is the Rayleigh quotient of the clipped ramp t/T times the
    kernel profile, with its kernel component removed: the discrete
    version of the 6/T^2 test function bound.
    """
    if len(G.modes) != 1 or not G.modes[0].is_zero_mode:
        raise ContractViolation("scalar model expected: exactly one zero mode")
    res = eigen_lowest(G, 4)
    vals = res.values()
    above = vals[vals > THRESHOLD_ZERO]
    if len(above) == 0:
        raise InsufficientEigenvaluesError("no eigenvalue above the kernel threshold")
    lower = float(above[0])
    if S is None:
        S = substitute_kernel(G)
    t = G.grid()
    base = S.basis[0][1] if S.dim else np.ones(G.n_points)
    u = np.clip(t / G.T, -1.0, 1.0) * base
    u = u - (G.h * np.sum(u * base)) * base / (G.h * np.sum(base * base))
    num = G.h * float(np.sum(G.apply_mode(0, u.astype(complex)).real * u))
    den = G.h * float(np.sum(u * u))
    return lower, num / den


# ---------------------------------------------------------------------------
# substitute kernel vs discrete kernel


def discrete_kernel_vectors(G: GluedOperator, dim: int) -> np.ndarray:
    """The dim lowest eigenvectors of the glued matrices, flattened over
    (mode, grid) and sorted by eigenvalue."""
    if G.coupling_eff:
        raise ContractViolation("kernel extraction handles uncoupled modes only")
    n = G.n_points
    found = []
    for i in range(len(G.modes)):
        diag, off = G.mats[i]
        kk = min(dim, n)
        vals, vecs = scipy.linalg.eigh_tridiagonal(
            diag, off, select="i", select_range=(0, kk - 1)
        )
        for r in range(kk):
            found.append((float(vals[r]), i, vecs[:, r]))
    found.sort(key=lambda x: x[0])
    out = np.zeros((dim, len(G.modes) * n))
    for r, (_, i, vec) in enumerate(found[:dim]):
        out[r, i * n : (i + 1) * n] = vec / np.linalg.norm(vec)
    return out


def principal_angle_sines(G: GluedOperator, S: SubstituteKernel) -> np.ndarray:
    """Sines of the principal angles between the substitute kernel and the
    numerical kernel of the glued matrix (uniform grid weight, so the
    Euclidean angles are the grid-pairing angles)."""
    if S.dim == 0:
        raise ContractViolation("substitute kernel is trivial")
    A = S.flat_basis()
    K = discrete_kernel_vectors(G, S.dim)
    angles = scipy.linalg.subspace_angles(A.T, K.T)
    return np.sin(angles)

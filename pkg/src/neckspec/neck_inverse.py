"""Explicit right inverse of the mode operators on a long finite cylinder.

Everything here is per mode. Positive modes (nu > 0) are inverted by
convolution with the Green's function G_nu(t) = e^{-sqrt(nu)|t|}/(2 sqrt(nu)),
evaluated by two stable exponential recursions. Zero modes are inverted by
moment kernels: the Laplace zero mode by u(t) = -int_{-inf}^t (t - tau) f,
which is also an exact inverse of the discrete three-point stencil, and the
Dirac zero mode by u = -J int f. Beyond the support the zero-mode solutions
are affine; the asymptotic trace m0 - t m1 is computed from the same moment
sums, so the support law and trace identity hold exactly on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import AnalysisError, ContractViolation
from .ioutil import format_complex, format_real
from .polyhom import (
    CutoffFunction,
    DiracZero,
    DirectSumOperator,
    LaplaceZero,
    PolyhomSection,
    pairing_closed,
)
from .rng import SplitMix64
from .spectral_model import KIND_DIRAC, KIND_LAPLACE, ModeOperator


def mode_rows(modes: Sequence[ModeOperator]) -> list[slice]:
    """Row slice of each mode in a stacked value array: one row per Laplace
    mode, two (alpha then beta) per Dirac block."""
    out = []
    lo = 0
    for m in modes:
        width = 2 if m.kind == KIND_DIRAC else 1
        out.append(slice(lo, lo + width))
        lo += width
    return out


def total_rows(modes: Sequence[ModeOperator]) -> int:
    return sum(2 if m.kind == KIND_DIRAC else 1 for m in modes)


def cell_grid(s_max: float, h: float) -> np.ndarray:
    """Cell-centered grid on [-s_max, s_max]: midpoints of 2 s_max / h cells."""
    n = _exact_cells(2 * s_max, h)
    return -s_max + (np.arange(n) + 0.5) * h


def _exact_cells(length: float, h: float) -> int:
    n = round(length / h)
    if n < 1 or abs(n * h - length) > 1e-9 * max(1.0, length):
        raise ContractViolation(f"step {h} does not divide interval length {length}")
    return n


@dataclass(frozen=True)
class CompactSection:
    """Per-mode samples on a cell-centered grid, supported in [-support, support].

    ``values`` has one row per Laplace mode and two per Dirac block, in mode
    order; columns follow :func:`cell_grid`.
    """

    modes: tuple[ModeOperator, ...]
    s_max: float
    support: float
    h: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not 0 < self.support <= self.s_max:
            raise ContractViolation("need 0 < support <= s_max")
        _exact_cells(2 * self.s_max, self.h)
        _exact_cells(2 * self.support, self.h)
        t = cell_grid(self.s_max, self.h)
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (total_rows(self.modes), len(t)):
            raise ContractViolation(
                f"values shape {vals.shape}, expected ({total_rows(self.modes)}, {len(t)})"
            )
        outside = np.abs(t) > self.support
        if np.any(vals[:, outside] != 0):
            raise ContractViolation("section has samples outside its declared support")
        object.__setattr__(self, "values", vals)

    def grid(self) -> np.ndarray:
        return cell_grid(self.s_max, self.h)

    def norm(self) -> float:
        return math.sqrt(self.h * float(np.sum(np.abs(self.values) ** 2)))


@dataclass(frozen=True)
class NeckSolution:
    """Output of :func:`q0_apply`: regular and singular parts plus the
    polyhomogeneous trace of the singular part beyond the support."""

    modes: tuple[ModeOperator, ...]
    s_max: float
    support: float
    h: float
    regular: np.ndarray
    singular: np.ndarray
    trace_plus: PolyhomSection
    trace_minus: PolyhomSection

    def total(self) -> np.ndarray:
        return self.regular + self.singular

    def grid(self) -> np.ndarray:
        return cell_grid(self.s_max, self.h)


def trace_operator(modes: Sequence[ModeOperator]):
    """Fiber operator of the zero-mode trace space and the value-row index of
    each fiber slot. Returns (None, []) when no zero mode is present."""
    ops = []
    rows: list[int] = []
    slices = mode_rows(modes)
    for m, sl in zip(modes, slices):
        if not m.is_zero_mode:
            continue
        if m.kind == KIND_DIRAC:
            ops.append(DiracZero(1))
            rows.extend([sl.start, sl.start + 1])
        elif m.degree_tag == "beta":
            ops.append(LaplaceZero(0, 1))
            rows.append(sl.start)
        else:
            ops.append(LaplaceZero(1, 0))
            rows.append(sl.start)
    if not ops:
        return None, []
    op = ops[0] if len(ops) == 1 else DirectSumOperator(ops)
    return op, rows


# ---------------------------------------------------------------------------
# Green's function convolution for positive modes


def _panel_weights(a: float, h: float) -> tuple[float, float]:
    """Weights of the two endpoint samples in
    int_0^h e^{-a(h-s)} f(s) ds with f linear between samples."""
    x = a * h
    if x > 1e-3:
        e = math.exp(-x)
        w_near = (x - 1.0 + e) / (a * a * h)
        w_far = (1.0 - e) / a - w_near
    else:
        # series in x avoids the cancellation in (x - 1 + e^{-x})
        w_near = h * (0.5 - x / 6 + x * x / 24 - x**3 / 120)
        w_far = h * (0.5 - x / 3 + x * x / 8 - x**3 / 30)
    return w_far, w_near


def _gnu_convolve(f: np.ndarray, nu: float, h: float) -> np.ndarray:
    """Samples of (G_nu * f_lin) where f_lin interpolates f linearly.

    Two sweeps: F_j accumulates e^{-a(t_j - s)} mass from the left and B_j
    from the right; u = (F + B) / (2a). Decay of the recursions matches the
    decay of G_nu exactly, so no periodization or overflow appears.
    """
    a = math.sqrt(nu)
    e = math.exp(-a * h)
    w_prev, w_here = _panel_weights(a, h)
    n = len(f)
    forward = np.zeros(n, dtype=complex)
    for j in range(1, n):
        forward[j] = e * forward[j - 1] + w_prev * f[j - 1] + w_here * f[j]
    backward = np.zeros(n, dtype=complex)
    for j in range(n - 2, -1, -1):
        backward[j] = e * backward[j + 1] + w_prev * f[j + 1] + w_here * f[j]
    return (forward + backward) / (2 * a)


# ---------------------------------------------------------------------------
# zero-mode moment kernels


def _laplace_zero_inverse(f: np.ndarray, t: np.ndarray, h: float) -> np.ndarray:
    """u(t_j) = -int_{-inf}^{t_j} (t_j - tau) f(tau) dtau for cell-constant f.

    Exclusive cumulative sums make this an exact inverse of the discrete
    stencil -(u_{j+1} - 2u_j + u_{j-1})/h^2 = f_j, vanishing identically left
    of the support.
    """
    m0 = np.concatenate([[0.0], np.cumsum(f)[:-1]]) * h
    m1 = np.concatenate([[0.0], np.cumsum(t * f)[:-1]]) * h
    return -(t * m0 - m1)


def _cumulative_midpoint(f: np.ndarray, h: float) -> np.ndarray:
    """int_{-inf}^{t_j} f for cell-constant f: full cells below, half at t_j."""
    inclusive = np.cumsum(f) * h
    return inclusive - 0.5 * h * f


def q0_apply(modes: Sequence[ModeOperator], f: CompactSection) -> NeckSolution:
    """Apply the cylinder right inverse mode by mode.

    Positive modes produce the regular part (Green's convolution); zero
    modes produce the singular part and its affine trace. The grid must
    extend at least two units past the support so the trace identity has
    room to be checked.
    """
    if f.support > f.s_max - 2:
        raise ContractViolation("need s_max >= support + 2 to expose the trace")
    t = f.grid()
    h = f.h
    regular = np.zeros_like(f.values)
    singular = np.zeros_like(f.values)
    trace_terms: list[PolyhomSection] = []
    for m, sl in zip(f.modes, mode_rows(f.modes)):
        if m.kind == KIND_LAPLACE and not m.is_zero_mode:
            regular[sl.start] = _gnu_convolve(f.values[sl.start], m.nu, h)
        elif m.kind == KIND_LAPLACE:
            row = f.values[sl.start]
            singular[sl.start] = _laplace_zero_inverse(row, t, h)
            m1 = h * complex(np.sum(row))
            m0 = h * complex(np.sum(t * row))
            trace_terms.append(PolyhomSection(1, ((0.0, (np.array([m0]), np.array([-m1]))),)))
        else:
            fa, fb = f.values[sl.start], f.values[sl.start + 1]
            ca = _cumulative_midpoint(fa, h)
            cb = _cumulative_midpoint(fb, h)
            # u = -J int f with J(a, b) = (-b, a)
            singular[sl.start] = cb
            singular[sl.start + 1] = -ca
            ma = h * complex(np.sum(fa))
            mb = h * complex(np.sum(fb))
            trace_terms.append(PolyhomSection(2, ((0.0, (np.array([mb, -ma]),)),)))
    op, _ = trace_operator(f.modes)
    trace_plus = _concat_trace(trace_terms, op)
    trace_minus = PolyhomSection(trace_plus.fiber_dim, ())
    return NeckSolution(
        modes=f.modes,
        s_max=f.s_max,
        support=f.support,
        h=h,
        regular=regular,
        singular=singular,
        trace_plus=trace_plus,
        trace_minus=trace_minus,
    )


def _concat_trace(parts: list[PolyhomSection], op) -> PolyhomSection:
    if op is None:
        return PolyhomSection(0, ())
    dim = op.fiber_dim
    deg = max((len(p.coeffs_at(0.0)) for p in parts), default=0)
    coeffs = []
    for j in range(deg):
        row = []
        for p in parts:
            c = p.coeffs_at(0.0)
            row.append(c[j] if j < len(c) else np.zeros(p.fiber_dim))
        coeffs.append(np.concatenate(row))
    return PolyhomSection(dim, ((0.0, tuple(coeffs)),)) if coeffs else PolyhomSection(dim, ())


def asymptotic_trace(modes: Sequence[ModeOperator], f: CompactSection) -> PolyhomSection:
    """The affine section the singular part equals beyond the support."""
    return q0_apply(modes, f).trace_plus


# ---------------------------------------------------------------------------
# discrete operator application and checks


def apply_discrete(modes: Sequence[ModeOperator], values: np.ndarray, h: float) -> np.ndarray:
    """Three-point / central-difference application of the mode operators.

    Endpoint columns are returned as zero; callers only ever look at
    interior columns (the support sits strictly inside the grid).
    """
    out = np.zeros_like(np.asarray(values, dtype=complex))
    for m, sl in zip(modes, mode_rows(modes)):
        if m.kind == KIND_LAPLACE:
            u = values[sl.start]
            out[sl.start, 1:-1] = m.nu * u[1:-1] - (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
        else:
            ua, ub = values[sl.start], values[sl.start + 1]
            da = (ua[2:] - ua[:-2]) / (2 * h)
            db = (ub[2:] - ub[:-2]) / (2 * h)
            out[sl.start, 1:-1] = -db
            out[sl.start + 1, 1:-1] = da
    return out


def residual_on_support(modes: Sequence[ModeOperator], sol: NeckSolution, f: CompactSection) -> float:
    """Relative l2 error of P(u) against f over the support window."""
    t = f.grid()
    pu = apply_discrete(modes, sol.total(), f.h)
    window = (np.abs(t) <= f.support)
    window[0] = window[-1] = False
    diff = pu[:, window] - f.values[:, window]
    denom = math.sqrt(f.h * float(np.sum(np.abs(f.values[:, window]) ** 2)))
    if denom == 0:
        return 0.0
    return math.sqrt(f.h * float(np.sum(np.abs(diff) ** 2))) / denom


def duality_check(modes: Sequence[ModeOperator], f: CompactSection, v: PolyhomSection):
    """Both sides of the trace duality (u_f, v) = <f, v> and their gap.

    The first value is the closed-form pairing of the asymptotic trace with
    v; the second is the h-weighted grid sum of <f(t), v(t)>; both reduce to
    the same moment sums, so the gap is roundoff.
    """
    op, rows = trace_operator(modes)
    if op is None:
        return 0j, 0j, 0.0
    if v.fiber_dim != op.fiber_dim:
        raise ContractViolation("section fiber does not match the zero-mode fiber")
    trace = q0_apply(modes, f).trace_plus
    pair = pairing_closed(op, trace, v)
    t = f.grid()
    vv = v.evaluate(t)
    l2 = f.h * complex(np.sum(f.values[rows, :] * np.conj(vv)))
    return pair, l2, abs(pair - l2)


def invertibility_no_real_roots(modes: Sequence[ModeOperator], f: CompactSection):
    """Bounded inverse on mode sets with nu >= nu0 > 0.

    Returns the solution and the ratio ||u|| / ||f||; asserts the spectral
    bound ratio <= (1/nu0)(1 + h^2) and refuses mode sets with zero modes.
    """
    nus = [m.nu for m in modes]
    if any(m.is_zero_mode for m in modes):
        raise ContractViolation("bounded inverse requires every mode to have nu > 0")
    nu0 = min(nus)
    sol = q0_apply(modes, f)
    norm_f = f.norm()
    norm_u = math.sqrt(f.h * float(np.sum(np.abs(sol.total()) ** 2)))
    ratio = norm_u / norm_f if norm_f > 0 else 0.0
    bound = (1.0 + f.h**2) / nu0
    if ratio > bound:
        raise AnalysisError(f"inverse norm ratio {ratio} exceeds spectral bound {bound}")
    return sol, ratio


# ---------------------------------------------------------------------------
# operator-norm growth of the zero-mode inverse


@dataclass(frozen=True)
class NormLawFit:
    supports: tuple[float, ...]
    ratios: tuple[float, ...]
    exponent: float
    prefactor: float


def operator_norm_fit(kind: str, supports: Sequence[float], h: float = 1.0 / 16) -> NormLawFit:
    """Growth of ||Q0 f|| / ||f|| on the worst-case family f = 1 on [-T, T].

    The measured log-log slope is the degree of the moment kernel: 2 for the
    Laplace zero mode, 1 for the Dirac block.
    """
    ratios = []
    for t_half in supports:
        s_max = t_half + 2
        if kind == KIND_LAPLACE:
            modes = (ModeOperator(KIND_LAPLACE, 0.0, "alpha"),)
            vals = np.zeros((1, _exact_cells(2 * s_max, h)), dtype=complex)
        elif kind == KIND_DIRAC:
            modes = (ModeOperator(KIND_DIRAC, 0.0, "alpha"),)
            vals = np.zeros((2, _exact_cells(2 * s_max, h)), dtype=complex)
        else:
            raise ContractViolation(f"unknown operator kind {kind!r}")
        t = cell_grid(s_max, h)
        inside = np.abs(t) <= t_half
        vals[0, inside] = 1.0
        f = CompactSection(modes, s_max, t_half, h, vals)
        sol = q0_apply(modes, f)
        u = sol.total()[:, inside]
        norm_u = math.sqrt(h * float(np.sum(np.abs(u) ** 2)))
        norm_f = math.sqrt(h * float(np.sum(np.abs(vals[:, inside]) ** 2)))
        ratios.append(norm_u / norm_f)
    logs_t = np.log(np.asarray(supports, dtype=float))
    logs_r = np.log(np.asarray(ratios))
    slope, intercept = np.polyfit(logs_t, logs_r, 1)
    return NormLawFit(
        supports=tuple(float(x) for x in supports),
        ratios=tuple(float(r) for r in ratios),
        exponent=float(slope),
        prefactor=float(math.exp(intercept)),
    )


# ---------------------------------------------------------------------------
# seeded smooth test data and CSV output


def seeded_section(
    modes: Sequence[ModeOperator],
    s_max: float,
    support: float,
    h: float,
    seed: int,
    n_harmonics: int = 4,
) -> CompactSection:
    """Deterministic smooth random section supported in [-support, support].

    Each row is a short random Fourier sum under a C^2 bump envelope that
    vanishes identically outside the support. Harmonic k is damped by
    (1+k)^{-2} so higher derivatives stay of order one and
    discretization-error checks see smooth data.
    """
    rng = SplitMix64(seed)
    t = cell_grid(s_max, h)
    rise = CutoffFunction(center=-support + 0.5)
    envelope = rise(t) * rise(-t)
    vals = np.zeros((total_rows(modes), len(t)), dtype=complex)
    for r in range(vals.shape[0]):
        row = np.zeros(len(t))
        for k in range(n_harmonics):
            amp_c, amp_s = rng.uniforms(2, -1.0, 1.0) / (1 + k) ** 2
            row += amp_c * np.cos(k * math.pi * t / support) + amp_s * np.sin(
                (k + 1) * math.pi * t / support
            )
        vals[r] = row * envelope
    return CompactSection(tuple(modes), s_max, support, h, vals)


def solution_csv(sol: NeckSolution) -> str:
    """CSV dump with columns (t, mode_index, u_r, u_s); mode_index is the
    value-row index."""
    t = sol.grid()
    lines = ["t,mode_index,u_r,u_s"]
    for r in range(sol.regular.shape[0]):
        for j in range(len(t)):
            lines.append(
                f"{format_real(t[j])},{r},{format_complex(sol.regular[r, j])},"
                f"{format_complex(sol.singular[r, j])}"
            )
    return "\n".join(lines) + "\n"

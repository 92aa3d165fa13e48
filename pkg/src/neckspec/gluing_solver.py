"""Solvers on the glued grid: the substitute kernel, the characteristic
system at the neck, and the correction iteration.

The route mirrors the cylinder calculus. A source is windowed to the
neck and inverted there mode by mode with discrete-exact inverses; the
characteristic system then picks the affine trace correction v that
cancels the block obstructions; the leftover residual (supported in the
block regions) is removed by slope-zero block solves; crossfading the
pieces leaves a defect of size e^{-delta T}, which the exact solver
drives below tolerance by iteration.

All inner products are the grid pairing h * sum(x conj(y)) over every
mode row, and "orthogonal to the kernel" always means this pairing.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    AnalysisError,
    ContractViolation,
    DegenerateSystemError,
    NoContractionError,
    NotOrthogonalError,
)
from .glued_model import (
    KERNEL_TOL,
    NEUMANN,
    BlockKernelData,
    BuildingBlock,
    GluedOperator,
    ShootingElement,
    block_kernel,
)
from .ioutil import format_complex, format_real
from .polyhom import CutoffFunction
from .spectral_model import mode_list

_CUT = 2.0  # block subgrids reach this far past the neck center


def _require_uncoupled(G: GluedOperator) -> None:
    if G.coupling_eff:
        raise ContractViolation("neck solvers handle uncoupled mode families only")


def inner(G: GluedOperator, x: np.ndarray, y: np.ndarray) -> complex:
    return G.h * complex(np.sum(np.asarray(x) * np.conj(np.asarray(y))))


def norm(G: GluedOperator, x: np.ndarray) -> float:
    return math.sqrt(G.h * float(np.sum(np.abs(np.asarray(x)) ** 2)))


def neck_windows(G: GluedOperator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(w1, zeta0, zeta1): the block-1 crossfade weight 1 - chi(t) and the
    neck windows, zeta0 = 1 on |t| <= T fading out by T+1, zeta1 = 1 on
    |t| <= T-1 supported in [-T, T]."""
    t = G.grid()
    chi = CutoffFunction(0.0)
    w1 = 1.0 - chi(t)
    zeta0 = chi(G.T + 0.5 - np.abs(t))
    zeta1 = chi(G.T - 0.5 - np.abs(t))
    return w1, zeta0, zeta1


def transplant(G: GluedOperator, which: int, element: ShootingElement) -> np.ndarray:
    """Carry a shooting element onto the glued grid, continuing its affine
    far field a + b s beyond the shooting reach. Block 2 enters reversed."""
    if abs(element.h - G.h) > 1e-12:
        raise ContractViolation("element was shot at a different step than the glued grid")
    n = G.n_points
    t = G.grid()
    s = t + G.T + G.L1 if which == 1 else G.T + G.L2 - t
    out = element.a + element.b * s
    k = min(len(element.samples), n)
    if which == 1:
        out[:k] = element.samples[:k]
    else:
        out[n - k :] = element.samples[:k][::-1]
    return out


def _trace_in_t(G: GluedOperator, which: int, element: ShootingElement) -> tuple[float, float]:
    """The element's affine far field written in the glued coordinate:
    block 1 gives (a + b (T+L1)) + b t, block 2 gives (a + b (T+L2)) - b t."""
    if which == 1:
        return element.a + element.b * (G.T + G.L1), element.b
    return element.a + element.b * (G.T + G.L2), -element.b


# ---------------------------------------------------------------------------
# matching pairs and the substitute kernel


@dataclass(frozen=True)
class MatchingPair:
    """Two block kernel elements and their crossfaded glued section.

    matched_at_T records whether the transplanted traces agree through the
    neck (for the constant traces of bounded elements this is independent
    of T). A decaying element stands alone with the partner set to None.
    """

    mode_index: int
    u1: ShootingElement | None
    u2: ShootingElement | None
    matched_at_T: bool
    glued_section: np.ndarray


def matching_pair(G: GluedOperator, e1: ShootingElement | None, e2: ShootingElement | None,
                  tol: float = KERNEL_TOL) -> MatchingPair:
    """Crossfade two shooting elements (as given, no rescaling) and test
    whether their traces continue each other through the neck."""
    if e1 is None and e2 is None:
        raise ContractViolation("a matching pair needs at least one element")
    mode = e1.mode_index if e1 is not None else e2.mode_index
    if e1 is not None and e2 is not None and e1.mode_index != e2.mode_index:
        raise ContractViolation("elements of a pair must share their mode")
    w1 = neck_windows(G)[0]
    section = np.zeros(G.n_points)
    traces = []
    for e, which, w in ((e1, 1, w1), (e2, 2, 1.0 - w1)):
        if e is None:
            traces.append(None)
            continue
        section = section + w * transplant(G, which, e)
        traces.append(_trace_in_t(G, which, e))
    if None in traces:
        (tr,) = [x for x in traces if x is not None]
        matched = abs(tr[0]) <= tol and abs(tr[1]) <= tol  # lone element must decay
    else:
        (a1, b1), (a2, b2) = traces
        scale = max(1.0, abs(a1), abs(a2), (abs(b1) + abs(b2)) * G.T)
        matched = abs(a1 - a2) <= tol * scale and abs(b1 - b2) <= tol * scale
    return MatchingPair(mode_index=mode, u1=e1, u2=e2, matched_at_T=matched,
                        glued_section=section)


def _unit_trace(e: ShootingElement) -> ShootingElement:
    return dataclasses.replace(e, samples=e.samples / e.a, a=1.0, b=e.b / e.a)


@dataclass(frozen=True)
class SubstituteKernel:
    """Basis of the glued kernel built from matched block elements."""

    G: GluedOperator
    pairs: tuple[MatchingPair, ...]
    kernel1: BlockKernelData
    kernel2: BlockKernelData
    basis: tuple[tuple[int, np.ndarray], ...]  # (mode_index, orthonormal values)

    @property
    def dim(self) -> int:
        return len(self.pairs)

    def matched_modes(self) -> tuple[int, ...]:
        return tuple(p.mode_index for p in self.pairs if p.u1 is not None and p.u2 is not None)

    def overlaps(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.basis), dtype=complex)
        for k, (mode, vec) in enumerate(self.basis):
            out[k] = self.G.h * np.sum(np.asarray(f[mode]) * vec)
        return out

    def project_off(self, f: np.ndarray) -> np.ndarray:
        out = np.array(f, dtype=complex)
        for mode, vec in self.basis:
            out[mode] -= (self.G.h * np.sum(out[mode] * vec)) * vec
        return out

    def project_onto(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros_like(np.asarray(f, dtype=complex))
        for mode, vec in self.basis:
            out[mode] += (self.G.h * np.sum(np.asarray(f[mode]) * vec)) * vec
        return out

    def flat_basis(self) -> np.ndarray:
        """Orthonormal kernel vectors flattened over (mode, grid)."""
        n = self.G.n_points
        out = np.zeros((len(self.basis), len(self.G.modes) * n))
        for k, (mode, vec) in enumerate(self.basis):
            out[k, mode * n : (mode + 1) * n] = vec
        return out


def substitute_kernel(
    G: GluedOperator,
    kd1: BlockKernelData | None = None,
    kd2: BlockKernelData | None = None,
    tol: float = KERNEL_TOL,
) -> SubstituteKernel:
    """Shoot both blocks at the glued step and keep the crossfaded matched
    pairs: one kernel direction per mode where both traces are bounded
    (normalized to the shared constant), plus any decaying elements.

    The shooting reach is extended to cover the whole glued grid, so the
    transplanted sections are exact discrete solutions everywhere and no
    affine-continuation seam pollutes the crossfade."""
    span = 2 * G.T + G.L1 + G.L2
    if kd1 is None:
        kd1 = block_kernel(G.block1, G.spec, G.q, tol=tol, h=G.h, reach=span)
    if kd2 is None:
        kd2 = block_kernel(G.block2, G.spec, G.q, tol=tol, h=G.h, reach=span)
    by_mode1 = {e.mode_index: e for e in kd1.elements}
    by_mode2 = {e.mode_index: e for e in kd2.elements}
    pairs = []
    for i in sorted(by_mode1):
        e1, e2 = by_mode1[i], by_mode2[i]
        for e, slot in ((e1, 1), (e2, 2)):
            if e.decaying:
                pairs.append(matching_pair(G, e if slot == 1 else None,
                                           e if slot == 2 else None, tol))
        if e1.bounded and not e1.decaying and e2.bounded and not e2.decaying:
            pair = matching_pair(G, _unit_trace(e1), _unit_trace(e2), tol)
            if pair.matched_at_T:
                pairs.append(pair)
    basis = []
    for p in pairs:
        vec = np.array(p.glued_section, dtype=float)
        for mode, prev in basis:
            if mode == p.mode_index:
                vec -= G.h * np.sum(vec * prev) * prev
        nrm = math.sqrt(G.h * float(np.sum(vec * vec)))
        if nrm < 1e-12:
            raise AnalysisError("substitute kernel elements are linearly dependent")
        basis.append((p.mode_index, vec / nrm))
    return SubstituteKernel(G=G, pairs=tuple(pairs), kernel1=kd1, kernel2=kd2,
                            basis=tuple(basis))


def approx_residual(G: GluedOperator, pair: MatchingPair) -> float:
    """||P_T u_T|| / (||u1|| + ||u2||) for a crossfaded pair; decays like
    e^{-delta T} for matched pairs, only algebraically otherwise."""
    num = norm(G, G.apply_mode(pair.mode_index, pair.glued_section))
    den = 0.0
    for e, which in ((pair.u1, 1), (pair.u2, 2)):
        if e is not None:
            den += norm(G, transplant(G, which, e))
    return num / den


def projection_norm(S: SubstituteKernel) -> float:
    """Coefficient bound of the kernel projector in its natural basis:
    1 / sigma_min of the Gram matrix of the norm-one glued sections."""
    if S.dim == 0:
        return 1.0
    G = S.G
    vecs = []
    for p in S.pairs:
        v = p.glued_section / norm(G, p.glued_section)
        vecs.append((p.mode_index, v))
    gram = np.zeros((len(vecs), len(vecs)))
    for i, (mi, vi) in enumerate(vecs):
        for j, (mj, vj) in enumerate(vecs):
            if mi == mj:
                gram[i, j] = G.h * float(np.sum(vi * vj))
    smin = float(np.min(np.linalg.svd(gram, compute_uv=False)))
    if smin <= 0:
        raise DegenerateSystemError("kernel Gram matrix is singular")
    return 1.0 / smin


# ---------------------------------------------------------------------------
# the cylinder-model solve on the glued grid


def _laplace_zero_cylinder(f: np.ndarray, t: np.ndarray, h: float) -> np.ndarray:
    # exclusive cumulative moments invert the zero-mode stencil exactly and
    # vanish identically left of the support
    m0 = h * np.concatenate([[0.0], np.cumsum(f)[:-1]])
    m1 = h * np.concatenate([[0.0], np.cumsum(t * f)[:-1]])
    return -(t * m0 - m1)


def _positive_mode_cylinder(f: np.ndarray, nu: float, h: float) -> np.ndarray:
    # padded symmetric positive definite solve; every retained interior row
    # is reproduced exactly and the pad pushes the closure artifacts under
    # e^{-sqrt(nu) * 33/sqrt(nu)} = e^{-33}
    pad = min(int(math.ceil(33.0 / (math.sqrt(nu) * h))), 8000)
    n = len(f)
    ab = np.zeros((2, n + 2 * pad))
    ab[0] = nu + 2.0 / h**2
    ab[1, :-1] = -1.0 / h**2
    rhs = np.zeros(n + 2 * pad, dtype=complex)
    rhs[pad : pad + n] = f
    sol = scipy.linalg.solveh_banded(ab, rhs, lower=True)
    return sol[pad : pad + n]


def cylinder_solve(G: GluedOperator, f0: np.ndarray) -> np.ndarray:
    """Mode-by-mode inverse of the free cylinder operator on the glued
    grid; every interior stencil row of the result reproduces f0 exactly."""
    t = G.grid()
    out = np.zeros((len(G.modes), G.n_points), dtype=complex)
    for i, m in enumerate(G.modes):
        row = np.asarray(f0[i], dtype=complex)
        if m.is_zero_mode:
            out[i] = _laplace_zero_cylinder(row.real, t, G.h) + 1j * _laplace_zero_cylinder(
                row.imag, t, G.h
            )
        else:
            out[i] = _positive_mode_cylinder(row, m.nu, G.h)
    return out


# ---------------------------------------------------------------------------
# the characteristic system


@dataclass(frozen=True)
class CharacteristicSystem:
    """Rows pair trace data against transplanted shooting elements through
    the neck commutator; columns run over a fixed complement of the
    matched trace directions (the b coefficient of every zero mode, plus
    the a coefficient of the unmatched ones)."""

    G: GluedOperator
    zero_modes: tuple[int, ...]
    columns: tuple[tuple[int, str], ...]
    matrix: np.ndarray
    rhs: np.ndarray
    rank: int


@dataclass(frozen=True)
class CharacteristicSolution:
    coefficients: np.ndarray
    consistency: float
    rank: int


def _commutator_apply(G: GluedOperator, w: np.ndarray, mode_index: int,
                      g: np.ndarray) -> np.ndarray:
    """[P, w] g on one mode row; supported on the crossfade ramp, where the
    glued operator is the free cylinder."""
    return G.apply_mode(mode_index, w * g) - w * G.apply_mode(mode_index, g)


def characteristic_system(
    G: GluedOperator,
    S: SubstituteKernel,
    f: np.ndarray,
    expected_rank: int | None = None,
) -> CharacteristicSystem:
    """Green's identity on each block region reduces P u = f to a linear
    system for the affine trace correction v at the neck.

    Row of element g (block i, window w = w1 or 1 - w1):
        <v, [P, w] g~> = <f, w g~> - <zeta0 u0, [P, w] g~>,
    with u0 the cylinder solve of zeta1 f. The left side is an exact
    discrete Wronskian of the traces, so the entries are chi-independent.
    """
    _require_uncoupled(G)
    f = np.asarray(f, dtype=complex)
    t = G.grid()
    w1, zeta0, zeta1 = neck_windows(G)
    u0 = cylinder_solve(G, f * zeta1) * zeta0
    zero_modes = tuple(i for i, m in enumerate(G.modes) if m.is_zero_mode)
    matched = set(S.matched_modes())
    columns = []
    for mi in zero_modes:
        if mi not in matched:
            columns.append((mi, "a"))
        columns.append((mi, "b"))
    col_of = {c: k for k, c in enumerate(columns)}
    ones = np.ones_like(t)
    rows = []
    rhs = []
    for which, kd in ((1, S.kernel1), (2, S.kernel2)):
        w = w1 if which == 1 else 1.0 - w1
        for el in kd.elements:
            g = transplant(G, which, el)
            comm = _commutator_apply(G, w, el.mode_index, g)
            row = np.zeros(len(columns), dtype=complex)
            if (el.mode_index, "a") in col_of:
                row[col_of[(el.mode_index, "a")]] = G.h * np.sum(ones * np.conj(comm))
            row[col_of[(el.mode_index, "b")]] = G.h * np.sum(t * np.conj(comm))
            rows.append(row)
            rhs.append(
                G.h * np.sum(f[el.mode_index] * np.conj(w * g))
                - G.h * np.sum(u0[el.mode_index] * np.conj(comm))
            )
    A = np.array(rows) if rows else np.zeros((0, len(columns)))
    b = np.array(rhs) if rhs else np.zeros(0, dtype=complex)
    if A.size:
        smax = float(np.max(np.abs(np.linalg.svd(A, compute_uv=False))))
        rank = int(np.linalg.matrix_rank(A, tol=1e-10 * max(smax, 1.0)))
    else:
        rank = 0
    if expected_rank is not None and rank < expected_rank:
        raise DegenerateSystemError(
            f"characteristic system rank dropped to {rank} (expected {expected_rank})"
        )
    return CharacteristicSystem(G=G, zero_modes=zero_modes, columns=tuple(columns),
                                matrix=A, rhs=b, rank=rank)


def characteristic_solve(sys: CharacteristicSystem) -> CharacteristicSolution:
    """Minimum-norm least squares solution; the residual measures the
    inconsistency, i.e. the component of the source pairing with the
    global kernel."""
    if sys.matrix.size == 0:
        return CharacteristicSolution(np.zeros(0, dtype=complex), float(np.linalg.norm(sys.rhs)),
                                      sys.rank)
    v, *_ = np.linalg.lstsq(sys.matrix, sys.rhs, rcond=None)
    consistency = float(np.linalg.norm(sys.matrix @ v - sys.rhs))
    return CharacteristicSolution(coefficients=v, consistency=consistency, rank=sys.rank)


def _trace_grid(sys: CharacteristicSystem, coeffs: np.ndarray) -> np.ndarray:
    """Realize a coefficient vector as affine rows a + b t on the grid."""
    G = sys.G
    t = G.grid()
    out = np.zeros((len(G.modes), G.n_points), dtype=complex)
    for (mode, kind), c in zip(sys.columns, coeffs):
        out[mode] += c if kind == "a" else c * t
    return out


def dump_characteristic(sys: CharacteristicSystem) -> str:
    """Dense text form of the system for debugging."""
    head = " ".join(f"{m}:{k}" for m, k in sys.columns)
    body = np.array2string(np.column_stack([sys.matrix, sys.rhs[:, None]]),
                           precision=6, suppress_small=True, max_line_width=200)
    return f"columns: {head}\n[A | b]:\n{body}\nrank: {sys.rank}\n"


# ---------------------------------------------------------------------------
# block solves


def _block_subgrid(G: GluedOperator, which: int) -> tuple[slice, np.ndarray]:
    t = G.grid()
    if which == 1:
        j_cut = round((_CUT + G.T + G.L1) / G.h)
        return slice(0, j_cut), t[:j_cut]
    j_cut = round((G.T + G.L1 - _CUT) / G.h)
    return slice(j_cut, G.n_points), t[j_cut:]


def _block_matrix(G: GluedOperator, which: int, mode_index: int,
                  t_sub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal block operator on the subgrid with the unfaded potential
    and a slope-zero closure at the cut."""
    m = G.modes[mode_index]
    block = G.block1 if which == 1 else G.block2
    n_sub = len(t_sub)
    s = t_sub + G.T + G.L1 if which == 1 else G.T + G.L2 - t_sub
    pot = block.potential_for(mode_index)
    v = pot.values(s, G.h) if pot is not None else np.zeros(n_sub)
    diag = m.nu + v + 2.0 / G.h**2
    outer = 0 if which == 1 else n_sub - 1
    cut = n_sub - 1 - outer
    diag[outer] = m.nu + v[outer] + (
        1.0 / G.h**2 if block.boundary == NEUMANN else 3.0 / G.h**2
    )
    diag[cut] = m.nu + v[cut] + 1.0 / G.h**2
    off = np.full(n_sub - 1, -1.0 / G.h**2)
    return diag, off


def _solve_tridiag(diag: np.ndarray, off: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    ab = np.zeros((3, len(diag)), dtype=complex)
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    return scipy.linalg.solve_banded((1, 1), ab, rhs)


def _solve_bordered(diag: np.ndarray, off: np.ndarray, border: np.ndarray,
                    rhs: np.ndarray) -> np.ndarray:
    """Solve [[B, g], [g^T, 0]] [u; lam] = [rhs; 0] for a (near-)singular
    symmetric tridiagonal B with kernel direction g."""
    n = len(diag)
    M = scipy.sparse.lil_matrix((n + 1, n + 1), dtype=complex)
    M.setdiag(diag)
    M.setdiag(off, 1)
    M.setdiag(off, -1)
    M[n, n] = 0.0
    M[:n, n] = border.reshape(-1, 1)
    M[n, :n] = border
    lu = scipy.sparse.linalg.splu(M.tocsc())
    return lu.solve(np.concatenate([rhs, [0.0]]))[:n]


def _block_solve(G: GluedOperator, S: SubstituteKernel, which: int, mode_index: int,
                 f_sub: np.ndarray, t_sub: np.ndarray) -> np.ndarray:
    diag, off = _block_matrix(G, which, mode_index, t_sub)
    kd = S.kernel1 if which == 1 else S.kernel2
    bounded = next(
        (e for e in kd.elements if e.mode_index == mode_index and e.bounded), None
    )
    if bounded is None:
        return _solve_tridiag(diag, off, f_sub)
    g = transplant(G, which, bounded)[_block_subgrid(G, which)[0]]
    u = _solve_bordered(diag, off, g, f_sub)
    # remove the kernel multiple so the plateau at the cut is zero and the
    # crossfade transports nothing
    edge_len = round(1.0 / G.h)
    edge = slice(-edge_len, None) if which == 1 else slice(None, edge_len)
    scale = float(np.mean(g[edge].real))
    if abs(scale) > 1e-8:
        u = u - (np.mean(u[edge]) / scale) * g
    return u


# ---------------------------------------------------------------------------
# approximate and exact solves


def approx_solve(
    G: GluedOperator,
    S: SubstituteKernel,
    f: np.ndarray,
    orth_tol: float = 1e-6,
    check_orthogonality: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """One pass of the gluing construction: returns (u, e) with
    e = f - P_T u of relative size e^{-delta T}.

    Pipeline: window to the neck (zeta1), invert on the cylinder, add the
    affine trace v from the characteristic system (cancelling the block
    obstructions), then block solves with slope-zero closures, crossfade,
    and projection off the substitute kernel.
    """
    _require_uncoupled(G)
    f = np.asarray(f, dtype=complex)
    nf = norm(G, f)
    if nf == 0:
        return np.zeros_like(f), np.zeros_like(f)
    if check_orthogonality:
        ov = np.abs(S.overlaps(f))
        if ov.size and float(np.max(ov)) > orth_tol * nf:
            raise NotOrthogonalError(
                f"source overlaps the substitute kernel: |<f, k>| = {float(np.max(ov)):.3e}"
                f" > {orth_tol:.1e} * ||f|| = {orth_tol * nf:.3e}"
            )
    w1, zeta0, zeta1 = neck_windows(G)
    sys = characteristic_system(G, S, f)
    v = characteristic_solve(sys)
    u_neck = (cylinder_solve(G, f * zeta1) + _trace_grid(sys, v.coefficients)) * zeta0
    r = f - G.apply(u_neck)
    sub1, t1 = _block_subgrid(G, 1)
    sub2, t2 = _block_subgrid(G, 2)
    chi = 1.0 - w1
    u = u_neck
    for i in range(len(G.modes)):
        u1 = _block_solve(G, S, 1, i, r[i][sub1], t1)
        u2 = _block_solve(G, S, 2, i, r[i][sub2], t2)
        add = np.zeros(G.n_points, dtype=complex)
        add[sub1] += w1[sub1] * u1
        add[sub2] += chi[sub2] * u2
        u[i] = u[i] + add
    u = S.project_off(u)
    return u, f - G.apply(u)


@dataclass(frozen=True)
class SolveReport:
    """Outcome of the correction iteration: f = P_T u + w + residual with
    u orthogonal to the substitute kernel and w inside it."""

    u: np.ndarray
    w: np.ndarray
    iterations: int
    contraction: tuple[float, ...]
    residuals: tuple[float, ...]
    residual: float


def solve_exact(
    G: GluedOperator,
    S: SubstituteKernel,
    f: np.ndarray,
    rtol: float = 1e-9,
    max_iter: int = 80,
) -> SolveReport:
    """Iterate approx_solve on residuals, projecting each round's source
    off the substitute kernel, until ||f - P u - w|| <= rtol ||f||."""
    _require_uncoupled(G)
    f = np.asarray(f, dtype=complex)
    nf = norm(G, f)
    if nf == 0:
        return SolveReport(np.zeros_like(f), np.zeros_like(f), 0, (), (), 0.0)
    u = np.zeros_like(f)
    w = np.zeros_like(f)
    fn = f
    etas: list[float] = []
    residuals: list[float] = []
    for it in range(1, max_iter + 1):
        wn = S.project_onto(fn)
        w = w + wn
        src = fn - wn
        n_src = norm(G, src)
        if n_src <= rtol * nf:
            return SolveReport(u, w, it - 1, tuple(etas), tuple(residuals), n_src / nf)
        un, fn = approx_solve(G, S, src, check_orthogonality=False)
        u = u + un
        eta = norm(G, fn) / n_src
        etas.append(eta)
        residuals.append(norm(G, fn) / nf)
        if norm(G, fn) <= rtol * nf:
            return SolveReport(S.project_off(u), w, it, tuple(etas), tuple(residuals),
                               norm(G, fn) / nf)
        if len(etas) >= 2 and etas[-1] >= 1.0 and etas[-2] >= 1.0:
            raise NoContractionError(max(etas[-2:]))
    raise AnalysisError(f"correction iteration did not converge in {max_iter} rounds")


def solve_direct(G: GluedOperator, S: SubstituteKernel, f: np.ndarray) -> np.ndarray:
    """Mode-by-mode direct solve of the glued matrices, bordered by the
    substitute kernel directions where a mode is (near-)singular."""
    _require_uncoupled(G)
    f = np.asarray(f, dtype=complex)
    out = np.zeros_like(f)
    borders: dict[int, list[np.ndarray]] = {}
    for mode, vec in S.basis:
        borders.setdefault(mode, []).append(vec)
    for i in range(len(G.modes)):
        diag, off = G.mats[i]
        if i in borders:
            (g,) = borders[i]
            out[i] = _solve_bordered(diag, off, g, f[i])
        else:
            out[i] = _solve_tridiag(diag, off, f[i])
    return S.project_off(out)


def solve_report_csv(G: GluedOperator, report: SolveReport, f: np.ndarray) -> str:
    ratio = norm(G, report.u) / norm(G, f)
    lines = ["T,iter,residual,eta,u_norm_over_f_norm"]
    for k in range(report.iterations):
        lines.append(
            f"{format_real(G.T)},{k + 1},{format_real(report.residuals[k])},"
            f"{format_real(report.contraction[k])},{format_real(ratio)}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# block-level identities: the value of <Pu, v> and the obstruction frame


def valuepuv_check(
    block: BuildingBlock,
    mode_index: int,
    nu: float,
    u: np.ndarray,
    u_trace: tuple[complex, complex],
    v: np.ndarray,
    v_trace: tuple[complex, complex],
    h: float = 1.0 / 16,
) -> tuple[complex, complex, float]:
    """Check <B u, v> = (u0, v0) on the half-line block grid.

    u and v live on cells (j + 1/2) h with affine far fields u_trace and
    v_trace = (a, b); the far closure row is excluded from the sum, which
    is what turns the grid pairing into the boundary Wronskian
    a_u conj(b_v) - b_u conj(a_v). Returns (grid value, trace value,
    |difference|).
    """
    n = len(u)
    s = (np.arange(n) + 0.5) * h
    pot = block.potential_for(mode_index)
    vals = pot.values(s, h) if pot is not None else np.zeros(n)
    diag = nu + vals + 2.0 / h**2
    diag[0] = nu + vals[0] + (1.0 / h**2 if block.boundary == NEUMANN else 3.0 / h**2)
    off = -1.0 / h**2
    bu = diag * np.asarray(u, dtype=complex)
    bu[:-1] += off * u[1:]
    bu[1:] += off * u[:-1]
    lhs = h * complex(np.sum(bu[:-1] * np.conj(v[:-1])))
    rhs = u_trace[0] * np.conj(v_trace[1]) - u_trace[1] * np.conj(v_trace[0])
    return lhs, complex(rhs), abs(lhs - rhs)


def obstruction_frame(
    block: BuildingBlock,
    spec,
    q: int,
    h: float = 1.0 / 16,
    tol: float = 1e-8,
) -> tuple[list[tuple[int, np.ndarray]], list[tuple[int, np.ndarray]]]:
    """(g_j, h_j) on the block grid: g_j the normalized bounded kernel
    elements, h_j faded affine traces dual to them, certified to satisfy
    <B h_i, g_j> = delta_ij (far row excluded) within tol."""
    kd = block_kernel(block, spec, q, h=h)
    gs: list[tuple[int, np.ndarray]] = []
    hs: list[tuple[int, np.ndarray]] = []
    for el in kd.elements:
        if not el.bounded:
            continue
        n = len(el.samples)
        s = (np.arange(n) + 0.5) * h
        g = el.samples / math.sqrt(h * float(np.sum(el.samples**2)))
        a_g = el.a / math.sqrt(h * float(np.sum(el.samples**2)))
        # dual trace (0, b) with pairing(h, g) = -b conj(a_g) = 1
        fade = CutoffFunction(el.reach - 3.0)(s)
        hs.append((el.mode_index, fade * (-1.0 / a_g) * s))
        gs.append((el.mode_index, g))
    if not gs:
        return [], []
    pair = np.zeros((len(hs), len(gs)))
    for i, (mi, hvec) in enumerate(hs):
        for j, (mj, gvec) in enumerate(gs):
            if mi == mj:
                lhs, _, _ = valuepuv_check(block, mi, 0.0, hvec, (0, 0), gvec, (0, 0), h)
                pair[i, j] = lhs.real
    try:
        corr = np.linalg.inv(pair)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSystemError("obstruction pairing matrix is singular") from exc
    hs = [
        (hs[i][0], sum(corr[i, j] * hs[j][1] for j in range(len(hs)) if hs[j][0] == hs[i][0]))
        for i in range(len(hs))
    ]
    check = np.zeros((len(hs), len(gs)))
    for i, (mi, hvec) in enumerate(hs):
        for j, (mj, gvec) in enumerate(gs):
            if mi == mj:
                lhs, _, _ = valuepuv_check(block, mi, 0.0, hvec, (0, 0), gvec, (0, 0), h)
                check[i, j] = lhs.real
    defect = float(np.max(np.abs(check - np.eye(len(gs)))))
    if defect > tol:
        raise AnalysisError(f"obstruction frame certificate failed: defect {defect:.3e}")
    return gs, hs


# ---------------------------------------------------------------------------
# output


def solution_csv(G: GluedOperator, u: np.ndarray) -> str:
    t = G.grid()
    lines = ["t,mode_index,u"]
    for i in range(len(G.modes)):
        for j in range(G.n_points):
            lines.append(f"{format_real(float(t[j]))},{i},{format_complex(complex(u[i, j]))}")
    return "\n".join(lines) + "\n"

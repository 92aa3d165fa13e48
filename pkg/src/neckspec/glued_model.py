"""Discrete glued operators on [-T-L1, T+L2] and their building blocks.

A building block is half-line mode ODE data: an outer boundary condition
at s = 0, a compact part of length L, and per-mode potentials decaying at
a declared exponential rate beyond L. Gluing reverses the second block's
axis, concatenates the intervals with a half neck length T on each side,
and fades each block's potential out across the window where the cylinder
coordinate rho_i = s_i - L_i + 1 passes T. The result is one symmetric
tridiagonal matrix per cross-section mode on the cell-centered glued grid.

Block kernels are computed by shooting: one solution per zero mode fixed
by the boundary row, classified by its affine far field a + b s. Discrete
conventions are chosen so the classification is exact in the flat cases:
a Neumann block with V = 0 shoots u identically 1, a Dirichlet block
shoots u(s) = s.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .errors import AnalysisError, ContractViolation, MatchingConditionError, SpectrumFormatError
from .ioutil import format_real
from .polyhom import CutoffFunction
from .spectral_model import CrossSectionSpectrum, KIND_LAPLACE, ModeOperator, mode_list

NEUMANN = "neumann"
DIRICHLET = "dirichlet"

# shooting classification tolerance (relative) and its residual guard factor
KERNEL_TOL = 1e-6


class Potential:
    """One mode's potential on the half line, with declared decay rate mu.

    ``values(s, h)`` evaluates on a grid; the step h is passed so that
    discrete-quotient potentials (built from a target kernel profile w via
    V = (w(s+h) - 2w(s) + w(s-h)) / (h^2 w(s))) can depend on it. Plain
    callables and sample tables ignore h.
    """

    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray], mu: float,
                 kernel_profile: Callable[[np.ndarray], np.ndarray] | None = None):
        if mu <= 0:
            raise ContractViolation("decay rate mu must be positive")
        self._fn = fn
        self.mu = float(mu)
        self.kernel_profile = kernel_profile

    def values(self, s: np.ndarray, h: float) -> np.ndarray:
        out = np.asarray(self._fn(np.asarray(s, dtype=float), float(h)), dtype=float)
        if out.shape != np.shape(s):
            raise ContractViolation("potential evaluation changed the grid shape")
        return out

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], np.ndarray], mu: float) -> "Potential":
        return cls(lambda s, h: fn(s), mu)

    @classmethod
    def from_samples(cls, pairs: Sequence[tuple[float, float]], mu: float) -> "Potential":
        pts = np.asarray(sorted((float(a), float(b)) for a, b in pairs), dtype=float)
        if len(pts) == 0:
            return cls(lambda s, h: np.zeros_like(s), mu)
        s_tab, v_tab = pts[:, 0], pts[:, 1]
        return cls(lambda s, h: np.interp(s, s_tab, v_tab, left=0.0, right=0.0), mu)

    @classmethod
    def from_kernel_profile(cls, w: Callable[[np.ndarray], np.ndarray], mu: float) -> "Potential":
        """Discrete quotient of a positive profile w, making w an exact
        discrete solution of -u'' + V u = 0 for every step h."""

        def quotient(s, h):
            ws = w(s)
            return (w(s + h) - 2.0 * ws + w(s - h)) / (h * h * ws)

        return cls(quotient, mu, kernel_profile=w)


def kernel_potential_neumann(mu: float, c: float) -> Potential:
    """Potential whose Neumann shooting solution is exactly bounded.

    The profile w(s) = 1 + c sech(mu s) is even, so the mirror ghost of the
    cell-centered Neumann row matches w(-h/2) = w(h/2) exactly and the
    discrete solution equals w on the grid. Requires |c| < 1 so w > 0.
    """
    if not -1 < c < 1 or c == 0:
        raise ContractViolation("need 0 < |c| < 1 for a positive profile")

    def w(s):
        return 1.0 + c / np.cosh(mu * np.asarray(s, dtype=float))

    return Potential.from_kernel_profile(w, mu)


def kernel_potential_dirichlet(mu: float) -> Potential:
    """Potential whose Dirichlet shooting solution is exactly bounded:
    w(s) = tanh(mu s / 2) is odd, matching the antisymmetric ghost, and
    flattens to 1 at rate mu."""
    half = mu / 2.0

    def w(s):
        return np.tanh(half * np.asarray(s, dtype=float))

    return Potential.from_kernel_profile(w, mu)


def _shooting_reach(mu: float) -> int:
    return int(max(10, math.ceil(20.0 / mu)))


@dataclass(frozen=True)
class BuildingBlock:
    """Half-line block data: outer boundary condition, compact length, and
    per-mode potentials keyed by index into the active mode list."""

    spec: CrossSectionSpectrum
    L: float
    boundary: str
    mu: float
    potentials: Mapping[int, Potential] = field(default_factory=dict)
    coupling: Mapping[tuple[int, int], Potential] | None = None

    def __post_init__(self):
        if self.boundary not in (NEUMANN, DIRICHLET):
            raise ContractViolation(f"unknown boundary condition {self.boundary!r}")
        if self.L < 0:
            raise ContractViolation("compact length must be >= 0")
        if self.mu <= 0:
            raise ContractViolation("decay rate must be positive")
        object.__setattr__(self, "potentials", dict(self.potentials))
        if self.coupling is not None:
            norm = {}
            for (i, j), pot in self.coupling.items():
                if i == j:
                    raise ContractViolation("coupling entries must join two distinct modes")
                key = (min(i, j), max(i, j))
                norm[key] = pot
            object.__setattr__(self, "coupling", norm)
        for idx, pot in self.potentials.items():
            self._check_decay(pot, f"potentials[{idx}]")
        if self.coupling:
            for key, pot in self.coupling.items():
                self._check_decay(pot, f"coupling[{key}]")

    def _check_decay(self, pot: Potential, where: str) -> None:
        """Verify |V(s)| <= A e^{-mu (s-L)} beyond L with A inferred from the
        first stretch; a slower actual rate makes far samples break the bound."""
        h = 1.0 / 16
        reach = _shooting_reach(pot.mu)
        s = np.arange(self.L, self.L + reach + h / 2, h)
        v = np.abs(pot.values(s, h))
        weights = np.exp(pot.mu * (s - self.L))
        near = s <= self.L + 8.0
        amp = float(np.max(v[near] * weights[near], initial=0.0))
        amp = max(amp, 1e-12)
        # 10% slack absorbs the approach to the asymptotic amplitude; the
        # additive floor absorbs roundoff noise in computed sample tables.
        # A genuinely slower rate overshoots both by e^{(mu - rate) s}.
        floor = 1e-12 * max(1.0, float(np.max(v, initial=0.0)))
        bad = v > amp * np.exp(-pot.mu * (s - self.L)) * 1.1 + floor
        if np.any(bad):
            k = int(np.argmax(bad))
            raise AnalysisError(
                f"{where}: samples decay slower than the declared rate {pot.mu} "
                f"(first violation at s = {s[k]:.4f})"
            )

    def potential_for(self, mode_index: int) -> Potential | None:
        return self.potentials.get(mode_index)


def load_block(path: str, spec: CrossSectionSpectrum) -> BuildingBlock:
    """Read block data from JSON: { "L", "boundary", "mu", "potentials":
    { "<mode-index>": [[s, V], ...] } }. Strict about unknown keys."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpectrumFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise SpectrumFormatError("top level: expected an object")
    required = {"L", "boundary", "mu", "potentials"}
    missing = required - raw.keys()
    if missing:
        raise SpectrumFormatError(f"top level: missing field {sorted(missing)[0]!r}")
    unknown = raw.keys() - required
    if unknown:
        raise SpectrumFormatError(f"top level: unknown field {sorted(unknown)[0]!r}")
    if not isinstance(raw["potentials"], dict):
        raise SpectrumFormatError("potentials: expected an object")
    pots = {}
    for key, rows in raw["potentials"].items():
        try:
            idx = int(key)
        except ValueError:
            raise SpectrumFormatError(f"potentials[{key!r}]: key is not an integer") from None
        if not isinstance(rows, list) or any(
            not (isinstance(r, list) and len(r) == 2) for r in rows
        ):
            raise SpectrumFormatError(f"potentials[{key!r}]: expected [[s, V], ...] rows")
        pots[idx] = Potential.from_samples([(r[0], r[1]) for r in rows], float(raw["mu"]))
    return BuildingBlock(
        spec=spec,
        L=float(raw["L"]),
        boundary=str(raw["boundary"]),
        mu=float(raw["mu"]),
        potentials=pots,
    )


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class GluedOperator:
    """Per-mode symmetric tridiagonal matrices on the glued grid.

    The grid is cell-centered on [-T-L1, T+L2]. ``mats[i]`` holds the pair
    (diag, offdiag) for mode i; the off-diagonal is the constant -1/h^2
    stored as a full vector for the eigensolver's convenience.
    """

    spec: CrossSectionSpectrum
    q: int
    T: float
    h: float
    modes: tuple[ModeOperator, ...]
    block1: BuildingBlock
    block2: BuildingBlock
    mats: tuple[tuple[np.ndarray, np.ndarray], ...]
    potentials_eff: tuple[np.ndarray, ...]
    coupling_eff: Mapping[tuple[int, int], np.ndarray]

    @property
    def L1(self) -> float:
        return self.block1.L

    @property
    def L2(self) -> float:
        return self.block2.L

    def grid(self) -> np.ndarray:
        n = round((2 * self.T + self.L1 + self.L2) / self.h)
        return -self.T - self.L1 + (np.arange(n) + 0.5) * self.h

    @property
    def n_points(self) -> int:
        return round((2 * self.T + self.L1 + self.L2) / self.h)

    def apply_mode(self, i: int, u: np.ndarray) -> np.ndarray:
        diag, off = self.mats[i]
        out = diag * u
        out[:-1] += off * u[1:]
        out[1:] += off * u[:-1]
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        out = np.zeros_like(values, dtype=complex)
        for i in range(len(self.modes)):
            out[i] = self.apply_mode(i, values[i])
        if self.coupling_eff:
            for (i, j), c in self.coupling_eff.items():
                out[i] = out[i] + c * values[j]
                out[j] = out[j] + c * values[i]
        return out

    def inner(self, x: np.ndarray, y: np.ndarray) -> complex:
        return self.h * complex(np.sum(np.asarray(x) * np.conj(np.asarray(y))))

    def norm(self, x: np.ndarray) -> float:
        return math.sqrt(self.h * float(np.sum(np.abs(np.asarray(x)) ** 2)))


def _corner_value(boundary: str, h: float) -> float:
    # mirror ghost u_{-1} = u_0 (Neumann) keeps constants in the kernel;
    # antisymmetric ghost u_{-1} = -u_0 (Dirichlet) pins the wall at 0
    return 1.0 / h**2 if boundary == NEUMANN else 3.0 / h**2


def assemble(
    block1: BuildingBlock,
    block2: BuildingBlock,
    spec: CrossSectionSpectrum,
    q: int,
    T: float,
    h: float,
    cutoff: float | None = None,
) -> GluedOperator:
    """Glue two blocks across a neck of half length T.

    Block 1 occupies s1 = t + T + L1 (its boundary at the left end), block
    2 is axis-reversed with s2 = T + L2 - t. Each potential is multiplied
    by (1 - chi(rho_i - T)) with rho_i = s_i - L_i + 1, so both vanish
    identically on |t| <= 1/2 and are untouched where rho_i <= T - 1/2.
    """
    if block1.spec != spec or block2.spec != spec:
        raise MatchingConditionError("blocks must be built on the same cross-section spectrum")
    if h > 1.0 / 16 + 1e-12:
        raise ContractViolation("need h <= 1/16")
    if T < 2:
        raise ContractViolation("need T >= 2")
    # h | T keeps t = 0 on a cell boundary, where the solver splits residuals
    for name, length in (("T", T), ("L1", block1.L), ("L2", block2.L)):
        n = round(length / h)
        if abs(n * h - length) > 1e-9:
            raise ContractViolation(f"step {h} does not divide {name}")
    modes = tuple(mode_list(spec, q, cutoff if cutoff is not None else math.inf))
    if any(m.kind != KIND_LAPLACE for m in modes):
        raise ContractViolation("glued blocks are Laplace-type only")

    n = round((2 * T + block1.L + block2.L) / h)
    t = -T - block1.L + (np.arange(n) + 0.5) * h
    s1 = t + T + block1.L
    s2 = T + block2.L - t
    chi = CutoffFunction(0.0)
    fade1 = 1.0 - chi((s1 - block1.L + 1.0) - T)
    fade2 = 1.0 - chi((s2 - block2.L + 1.0) - T)

    mats = []
    pots_eff = []
    for i, m in enumerate(modes):
        v_eff = np.zeros(n)
        p1 = block1.potential_for(i)
        if p1 is not None:
            v_eff += p1.values(s1, h) * fade1
        p2 = block2.potential_for(i)
        if p2 is not None:
            v_eff += p2.values(s2, h) * fade2
        diag = m.nu + v_eff + 2.0 / h**2
        diag[0] = m.nu + v_eff[0] + _corner_value(block1.boundary, h)
        diag[-1] = m.nu + v_eff[-1] + _corner_value(block2.boundary, h)
        off = np.full(n - 1, -1.0 / h**2)
        mats.append((diag, off))
        pots_eff.append(v_eff)

    coupling_eff: dict[tuple[int, int], np.ndarray] = {}
    for block, s_block, fade in ((block1, s1, fade1), (block2, s2, fade2)):
        if block.coupling:
            for (i, j), pot in block.coupling.items():
                if i >= len(modes) or j >= len(modes):
                    raise ContractViolation("coupling references a mode beyond the cutoff")
                cur = coupling_eff.get((i, j), np.zeros(n))
                coupling_eff[(i, j)] = cur + pot.values(s_block, h) * fade

    return GluedOperator(
        spec=spec,
        q=q,
        T=float(T),
        h=float(h),
        modes=modes,
        block1=block1,
        block2=block2,
        mats=tuple(mats),
        potentials_eff=tuple(pots_eff),
        coupling_eff=coupling_eff,
    )


# ---------------------------------------------------------------------------
# block kernels by shooting


@dataclass(frozen=True)
class ShootingElement:
    """One zero mode's shooting solution and its affine far field a + b s."""

    mode_index: int
    nu: float
    degree_tag: str
    h: float
    reach: float
    samples: np.ndarray
    a: float
    b: float
    bounded: bool
    decaying: bool
    fit_residual: float


@dataclass(frozen=True)
class BlockKernelData:
    block: BuildingBlock
    q: int
    h: float
    elements: tuple[ShootingElement, ...]
    positive_modes_certified_empty: bool

    @property
    def dim_kernel(self) -> int:
        return sum(e.bounded for e in self.elements)

    @property
    def dim_kernel_decaying(self) -> int:
        return sum(e.decaying for e in self.elements)

    def bounded_elements(self) -> list[ShootingElement]:
        return [e for e in self.elements if e.bounded]


def _shoot_zero_mode(block: BuildingBlock, mode_index: int, h: float, reach: float) -> np.ndarray:
    """March u_{j+1} = 2u_j - u_{j-1} + h^2 V_j u_j from the boundary row.

    Starts are normalized to the exact flat solutions: u = 1 (Neumann) and
    u = s (Dirichlet).
    """
    n = round(reach / h)
    s = (np.arange(n) + 0.5) * h
    pot = block.potential_for(mode_index)
    v = pot.values(s, h) if pot is not None else np.zeros(n)
    u = np.zeros(n)
    if block.boundary == NEUMANN:
        u[0] = 1.0
        u[1] = u[0] * (1.0 + h * h * v[0])
    else:
        u[0] = h / 2.0
        u[1] = u[0] * (3.0 + h * h * v[0])
    for j in range(1, n - 1):
        u[j + 1] = 2.0 * u[j] - u[j - 1] + h * h * v[j] * u[j]
    return u


def _affine_fit(s: np.ndarray, u: np.ndarray) -> tuple[float, float, float]:
    design = np.column_stack([np.ones_like(s), s])
    coeff, *_ = np.linalg.lstsq(design, u, rcond=None)
    resid = u - design @ coeff
    return float(coeff[0]), float(coeff[1]), float(np.max(np.abs(resid)))


def _certify_positive_mode(block: BuildingBlock, mode_index: int, nu: float, h: float,
                           reach: float) -> None:
    """Check that the shooting solution of a nu > 0 mode grows at its free
    rate, i.e. no bound state or threshold resonance hides below nu."""
    n = round(reach / h)
    s = (np.arange(n) + 0.5) * h
    pot = block.potential_for(mode_index)
    v = nu + (pot.values(s, h) if pot is not None else np.zeros(n))
    u_prev = 1.0 if block.boundary == NEUMANN else h / 2.0
    u_here = u_prev * ((1.0 if block.boundary == NEUMANN else 3.0) + h * h * v[0])
    log_scale = 0.0
    logs = np.zeros(n)
    logs[0] = math.log(abs(u_prev)) if u_prev != 0 else -math.inf
    logs[1] = math.log(abs(u_here)) if u_here != 0 else -math.inf
    for j in range(1, n - 1):
        u_next = 2.0 * u_here - u_prev + h * h * v[j] * u_here
        mag = abs(u_next)
        if mag > 1e150:
            u_next /= mag
            u_here /= mag
            log_scale += math.log(mag)
        u_prev, u_here = u_here, u_next
        logs[j + 1] = (math.log(abs(u_here)) if u_here != 0 else -math.inf) + log_scale
    window = s >= s[-1] - 2.0
    slope = np.polyfit(s[window], logs[window], 1)[0]
    if not slope >= math.sqrt(nu) / 2.0:
        raise AnalysisError(
            f"mode {mode_index} (nu = {nu}) fails its free-growth certificate: "
            f"measured log slope {slope:.4f}; a bound state or threshold resonance is present"
        )


def block_kernel(
    block: BuildingBlock,
    spec: CrossSectionSpectrum,
    q: int,
    tol: float = KERNEL_TOL,
    h: float = 1.0 / 16,
    cutoff: float | None = None,
    reach: float | None = None,
) -> BlockKernelData:
    """Shoot every mode of degree q from the outer boundary and classify.

    Zero modes yield one element each with its affine far data (a, b);
    bounded means |b| below tol relative to the window scale. Positive
    modes are certified kernel-free by their growth rate. The shooting
    reach can only be extended, never shortened below its default.
    """
    if tol <= 0:
        raise ContractViolation("tolerance must be positive")
    if block.spec != spec:
        raise MatchingConditionError("block was built on a different spectrum")
    modes = mode_list(spec, q, cutoff if cutoff is not None else math.inf)
    default_reach = float(block.L + _shooting_reach(block.mu))
    reach = default_reach if reach is None else max(float(reach), default_reach)
    elements = []
    for i, m in enumerate(modes):
        if not m.is_zero_mode:
            _certify_positive_mode(block, i, m.nu, h, reach)
            continue
        u = _shoot_zero_mode(block, i, h, reach)
        n = len(u)
        s = (np.arange(n) + 0.5) * h
        window = s >= reach - 2.0
        a, b, resid = _affine_fit(s[window], u[window])
        scale = max(1.0, abs(a), abs(b) * reach, float(np.max(np.abs(u[window]))))
        if resid > 10.0 * tol * scale:
            raise AnalysisError(
                f"mode {i}: far field is not affine (fit residual {resid:.3e}); "
                "the potential violates its decay contract"
            )
        bounded = abs(b) <= tol * scale
        decaying = bounded and abs(a) <= tol * scale
        elements.append(
            ShootingElement(
                mode_index=i,
                nu=m.nu,
                degree_tag=m.degree_tag,
                h=h,
                reach=reach,
                samples=u,
                a=a,
                b=b,
                bounded=bounded,
                decaying=decaying,
                fit_residual=resid,
            )
        )
    return BlockKernelData(
        block=block,
        q=q,
        h=h,
        elements=tuple(elements),
        positive_modes_certified_empty=True,
    )


# ---------------------------------------------------------------------------
# eigenvalues


@dataclass(frozen=True)
class EigenEntry:
    value: float
    nu: float
    degree_tag: str
    mode_index: int
    k_within: int


@dataclass(frozen=True)
class EigenResult:
    entries: tuple[EigenEntry, ...]
    clipped: bool

    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])


def eigen_lowest(G: GluedOperator, k: int) -> EigenResult:
    """The k smallest eigenvalues of every per-mode matrix, merged sorted.

    Tridiagonal modes use Sturm bisection; coupled groups are solved
    densely and each eigenvalue is attributed to the mode carrying the
    largest share of its eigenvector mass.
    """
    if k < 1:
        raise ContractViolation("need k >= 1")
    n = G.n_points
    clipped = k > n
    kk = min(k, n)
    coupled = set()
    for (i, j) in G.coupling_eff:
        coupled.add(i)
        coupled.add(j)
    entries: list[EigenEntry] = []
    for i, m in enumerate(G.modes):
        if i in coupled:
            continue
        diag, off = G.mats[i]
        vals = scipy.linalg.eigvalsh_tridiagonal(
            diag, off, select="i", select_range=(0, kk - 1)
        )
        entries.extend(
            EigenEntry(float(v), m.nu, m.degree_tag, i, rank) for rank, v in enumerate(vals)
        )
    if coupled:
        group = sorted(coupled)
        size = len(group) * n
        big = np.zeros((size, size))
        pos = {mode: a for a, mode in enumerate(group)}
        for mode in group:
            diag, off = G.mats[mode]
            a = pos[mode] * n
            big[a : a + n, a : a + n] = (
                np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
            )
        for (i, j), c in G.coupling_eff.items():
            a, b = pos[i] * n, pos[j] * n
            big[a : a + n, b : b + n] = np.diag(c)
            big[b : b + n, a : a + n] = np.diag(c)
        vals, vecs = scipy.linalg.eigh(big)
        per_mode_rank: dict[int, int] = {mode: 0 for mode in group}
        for col in range(size):
            mass = [float(np.sum(vecs[pos[m0] * n : pos[m0] * n + n, col] ** 2)) for m0 in group]
            owner = group[int(np.argmax(mass))]
            rank = per_mode_rank[owner]
            if rank < kk:
                mo = G.modes[owner]
                entries.append(EigenEntry(float(vals[col]), mo.nu, mo.degree_tag, owner, rank))
            per_mode_rank[owner] = rank + 1
    entries.sort(key=lambda e: (e.value, e.mode_index, e.k_within))
    return EigenResult(entries=tuple(entries), clipped=clipped)


def eigen_csv(result: EigenResult) -> str:
    lines = ["mode_nu,degree_tag,k,lambda"]
    for e in result.entries:
        lines.append(f"{format_real(e.nu)},{e.degree_tag},{e.k_within},{format_real(e.value)}")
    return "\n".join(lines) + "\n"

"""Cross-section spectra and per-mode operator data.

Separation of variables on a cylinder R x X turns an elliptic operator
into a family of constant-coefficient ordinary differential operators,
one per eigenvalue nu of the form Laplacian on X. This module holds the
spectrum bookkeeping (:class:`CrossSectionSpectrum`), the per-mode
operators (:class:`ModeOperator`), their symbol roots, and the Laurent
expansion of the resolvent family around a base point.

Conventions. D_t = -i d/dt, so the Laplace mode with eigenvalue nu has
symbol P(lambda) = lambda^2 + nu and acts by p -> nu p - p''. The Dirac
zero-mode block acts on (alpha, beta) pairs by J d/dt with
J = [[0, -1], [1, 0]], so its symbol is i lambda J.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, SpectrumFormatError

KIND_LAPLACE = "laplace"
KIND_DIRAC = "dirac"

# eigenvalues closer than this are merged into one multiplicity entry
MERGE_TOL = 1e-12

J_MATRIX = np.array([[0.0, -1.0], [1.0, 0.0]])


def _normalize_degree(pairs: Sequence[tuple[float, int]], where: str) -> tuple[tuple[float, int], ...]:
    """Sort by eigenvalue and merge entries closer than MERGE_TOL."""
    items = []
    for k, (nu, mult) in enumerate(pairs):
        nu = float(nu)
        if not math.isfinite(nu) or nu < -MERGE_TOL:
            raise SpectrumFormatError(f"{where}[{k}]: eigenvalue must be finite and >= 0, got {nu!r}")
        if int(mult) != mult or mult < 1:
            raise SpectrumFormatError(f"{where}[{k}]: multiplicity must be a positive integer, got {mult!r}")
        items.append((max(nu, 0.0), int(mult)))
    items.sort(key=lambda p: p[0])
    merged: list[tuple[float, int]] = []
    for nu, mult in items:
        if merged and abs(nu - merged[-1][0]) <= MERGE_TOL * max(1.0, abs(nu)):
            merged[-1] = (merged[-1][0], merged[-1][1] + mult)
        else:
            merged.append((nu, mult))
    return tuple(merged)


@dataclass(frozen=True)
class CrossSectionSpectrum:
    """Form-Laplacian spectrum of a cross-section, one list per degree.

    ``degrees`` maps the form degree q to a sorted tuple of
    ``(eigenvalue, multiplicity)`` pairs. Only the data needed for the
    mode calculus is kept; the cross-section itself never appears.
    """

    name: str
    dimension: int
    degrees: Mapping[int, tuple[tuple[float, int], ...]]
    twist: Mapping[int, tuple[np.ndarray, ...]] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise SpectrumFormatError(f"dimension: must be >= 1, got {self.dimension}")
        clean = {}
        for q, pairs in self.degrees.items():
            if not 0 <= int(q) <= self.dimension:
                raise SpectrumFormatError(f"degrees[{q}]: degree outside [0, {self.dimension}]")
            clean[int(q)] = _normalize_degree(pairs, f"degrees[{q}]")
        object.__setattr__(self, "degrees", clean)

    def __eq__(self, other):
        if not isinstance(other, CrossSectionSpectrum):
            return NotImplemented
        return (
            self.name == other.name
            and self.dimension == other.dimension
            and self.degrees == other.degrees
        )

    def eigenvalues(self, q: int) -> tuple[tuple[float, int], ...]:
        return self.degrees.get(q, ())

    def betti(self, q: int) -> int:
        """Multiplicity of the zero eigenvalue in degree q."""
        for nu, mult in self.eigenvalues(q):
            if nu <= MERGE_TOL:
                return mult
        return 0


@dataclass(frozen=True)
class ModeOperator:
    """One separated mode: a Laplace operator -d^2/dt^2 + nu acting on the
    coefficient of a fixed eigenform (degree_tag records whether that form
    enters as a tangential alpha or a dt-wedge beta), or a first-order
    Dirac block coupling an (alpha, beta) pair of harmonic forms."""

    kind: Literal["laplace", "dirac"]
    nu: float
    degree_tag: Literal["alpha", "beta"]

    def __post_init__(self):
        if self.kind not in (KIND_LAPLACE, KIND_DIRAC):
            raise ContractViolation(f"unknown operator kind {self.kind!r}")
        if self.nu < 0:
            raise ContractViolation(f"mode eigenvalue must be >= 0, got {self.nu}")
        if self.kind == KIND_DIRAC and self.nu != 0:
            raise ContractViolation("Dirac blocks exist only for harmonic (nu = 0) pairs")

    @property
    def is_zero_mode(self) -> bool:
        return self.nu <= MERGE_TOL


@dataclass(frozen=True)
class RootData:
    """Symbol roots with orders, plus the real sublist used for growth rates."""

    roots: tuple[tuple[complex, int], ...]
    real_roots: tuple[tuple[float, int], ...]
    max_real_order: int


@dataclass(frozen=True)
class LaurentCoefficients:
    """Laurent data of the resolvent P(lambda)^{-1} around ``at_root``.

    ``coeffs[m]`` is the coefficient of (lambda - at_root)^m; scalar for
    Laplace modes and a 2 x 2 array for Dirac blocks. The expansion is
    truncated at ``m_max``.
    """

    at_root: complex
    coeffs: Mapping[int, complex | np.ndarray]
    m_max: int

    def pole_order(self) -> int:
        neg = [-m for m in self.coeffs if m < 0]
        return max(neg, default=0)

    def evaluate(self, lam: complex) -> complex | np.ndarray:
        z = lam - self.at_root
        total = None
        for m, c in sorted(self.coeffs.items()):
            term = c * z**m
            total = term if total is None else total + term
        return total


def circle_spectrum(length: float = 2 * math.pi, max_modes: int = 8) -> CrossSectionSpectrum:
    """Spectrum of the circle of a given circumference.

    Functions and one-forms share the eigenvalue list: 0 once and
    (2 pi k / length)^2 twice for k = 1 .. max_modes.
    """
    if length <= 0:
        raise ContractViolation("circle length must be positive")
    pairs = [(0.0, 1)] + [((2 * math.pi * k / length) ** 2, 2) for k in range(1, max_modes + 1)]
    return CrossSectionSpectrum(
        name=f"circle(length={length:g})",
        dimension=1,
        degrees={0: tuple(pairs), 1: tuple(pairs)},
    )


def scalar_spectrum(
    pairs: Sequence[tuple[float, int]] = ((0.0, 1),), name: str = "scalar"
) -> CrossSectionSpectrum:
    """Spectrum carrying modes in degree 0 only.

    This is the scalar (function) model: degree 0 holds the listed
    eigenvalues and no other degree contributes, so q = 0 mode lists
    consist of alpha modes alone.
    """
    return CrossSectionSpectrum(name=name, dimension=1, degrees={0: tuple(pairs)})


def torus2_spectrum(max_lattice: int = 6) -> CrossSectionSpectrum:
    """Square two-torus with unit side lengths.

    Scalar eigenvalues are 4 pi^2 (m^2 + n^2) over lattice points with
    |m|, |n| <= max_lattice; the degree-q multiplicity carries the extra
    binomial(2, q) factor from the form bundle.
    """
    counts: dict[float, int] = {}
    for m in range(-max_lattice, max_lattice + 1):
        for n in range(-max_lattice, max_lattice + 1):
            nu = 4 * math.pi**2 * (m * m + n * n)
            counts[nu] = counts.get(nu, 0) + 1
    scalar = sorted(counts.items())
    degrees = {
        q: tuple((nu, mult * math.comb(2, q)) for nu, mult in scalar)
        for q in range(3)
    }
    return CrossSectionSpectrum(name=f"torus2(max_lattice={max_lattice})", dimension=2, degrees=degrees)


def _require_keys(obj: dict, required: set[str], optional: set[str], where: str) -> None:
    missing = required - obj.keys()
    if missing:
        raise SpectrumFormatError(f"{where}: missing field {sorted(missing)[0]!r}")
    unknown = obj.keys() - required - optional
    if unknown:
        raise SpectrumFormatError(f"{where}: unknown field {sorted(unknown)[0]!r}")


def load_spectrum(path: str) -> CrossSectionSpectrum:
    """Read a spectrum from a JSON file, strictly.

    The schema is ``{"name", "dimension", "degrees": {"<q>": [[nu, mult],
    ...]}}`` with an optional ``"twist"`` table of per-degree orthogonal
    matrices. Unknown keys are errors, as are malformed entries; error
    messages name the offending field.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpectrumFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise SpectrumFormatError("top level: expected an object")
    _require_keys(raw, {"name", "dimension", "degrees"}, {"twist"}, "top level")
    if not isinstance(raw["name"], str):
        raise SpectrumFormatError("name: expected a string")
    if not isinstance(raw["dimension"], int) or isinstance(raw["dimension"], bool):
        raise SpectrumFormatError("dimension: expected an integer")
    if not isinstance(raw["degrees"], dict):
        raise SpectrumFormatError("degrees: expected an object")

    degrees: dict[int, list[tuple[float, int]]] = {}
    for key, rows in raw["degrees"].items():
        try:
            q = int(key)
        except ValueError:
            raise SpectrumFormatError(f"degrees[{key!r}]: key is not an integer") from None
        if not isinstance(rows, list):
            raise SpectrumFormatError(f"degrees[{key!r}]: expected a list of [nu, mult] pairs")
        pairs = []
        for k, row in enumerate(rows):
            if not (isinstance(row, list) and len(row) == 2):
                raise SpectrumFormatError(f"degrees[{key!r}][{k}]: expected a [nu, mult] pair")
            nu, mult = row
            if not isinstance(nu, (int, float)) or isinstance(nu, bool):
                raise SpectrumFormatError(f"degrees[{key!r}][{k}][0]: eigenvalue is not a number")
            if not isinstance(mult, int) or isinstance(mult, bool):
                raise SpectrumFormatError(f"degrees[{key!r}][{k}][1]: multiplicity is not an integer")
            pairs.append((float(nu), mult))
        degrees[q] = pairs

    twist = None
    if "twist" in raw:
        if not isinstance(raw["twist"], dict):
            raise SpectrumFormatError("twist: expected an object")
        twist = {}
        for key, mats in raw["twist"].items():
            try:
                q = int(key)
            except ValueError:
                raise SpectrumFormatError(f"twist[{key!r}]: key is not an integer") from None
            if q not in degrees:
                raise SpectrumFormatError(f"twist[{key!r}]: no such degree in 'degrees'")
            if not isinstance(mats, list) or len(mats) != len(degrees[q]):
                raise SpectrumFormatError(
                    f"twist[{key!r}]: expected one matrix per eigenvalue entry of degree {q}"
                )
            checked = []
            for k, mat in enumerate(mats):
                arr = np.asarray(mat, dtype=float)
                mult = degrees[q][k][1]
                if arr.shape != (mult, mult):
                    raise SpectrumFormatError(
                        f"twist[{key!r}][{k}]: expected a {mult} x {mult} matrix"
                    )
                if not np.allclose(arr.T @ arr, np.eye(mult), atol=1e-10):
                    raise SpectrumFormatError(f"twist[{key!r}][{k}]: matrix is not orthogonal")
                checked.append(arr)
            twist[q] = tuple(checked)

    return CrossSectionSpectrum(
        name=raw["name"], dimension=raw["dimension"], degrees=degrees, twist=twist
    )


def default_cutoff(t_max: float, s_max: float) -> float:
    """Mode cutoff that comfortably covers every eigenvalue window used in
    a sweep up to neck length t_max and window parameter s_max."""
    return 25.0 * (math.pi / t_max) ** 2 * s_max


def mode_list(spec: CrossSectionSpectrum, q: int, cutoff: float) -> list[ModeOperator]:
    """Laplace modes of degree q below the cutoff.

    Degree-q eigenforms enter tangentially (alpha), degree q-1 forms enter
    wedged with dt (beta); each eigenvalue is repeated per multiplicity.
    """
    modes: list[ModeOperator] = []
    for tag, deg in (("alpha", q), ("beta", q - 1)):
        for nu, mult in spec.eigenvalues(deg):
            if nu <= cutoff:
                modes.extend(ModeOperator(KIND_LAPLACE, nu, tag) for _ in range(mult))
    return modes


def roots_of(op: ModeOperator) -> RootData:
    """Roots of the mode symbol with orders."""
    if op.kind == KIND_DIRAC:
        roots = ((0j, 1),)
        return RootData(roots=roots, real_roots=((0.0, 1),), max_real_order=1)
    if op.nu <= MERGE_TOL:
        return RootData(roots=((0j, 2),), real_roots=((0.0, 2),), max_real_order=2)
    r = math.sqrt(op.nu)
    return RootData(roots=((1j * r, 1), (-1j * r, 1)), real_roots=(), max_real_order=0)


def symbol_taylor(op: ModeOperator, lambda0: complex) -> list[complex | np.ndarray]:
    """Taylor coefficients (1/n!) P^(n)(lambda0) of the mode symbol."""
    if op.kind == KIND_DIRAC:
        return [1j * lambda0 * J_MATRIX, 1j * J_MATRIX]
    return [lambda0**2 + op.nu, 2 * lambda0, 1.0 + 0j]


def _scalar_laurent(c: list[complex], m_max: int) -> dict[int, complex]:
    """Laurent coefficients of 1/p around 0 where p(z) = sum c[n] z^n.

    The convolution identity sum_{m+n=l} c[n] R[m] = [l = 0] determines the
    coefficients one at a time starting at m = -d, where d is the number of
    leading zero coefficients of p.
    """
    d = 0
    scale = max(abs(x) for x in c)
    while d < len(c) and abs(c[d]) <= 1e-14 * scale:
        d += 1
    if d >= len(c):
        raise ContractViolation("symbol vanishes identically")
    coeffs: dict[int, complex] = {}
    for l in range(-d, m_max + 1):
        # the equation sum_n c[n] R[(l+d) - n] = [l+d = 0] pins down R[l]
        acc = 1.0 + 0j if l + d == 0 else 0j
        for n in range(d + 1, len(c)):
            m = l + d - n
            if m in coeffs:
                acc -= c[n] * coeffs[m]
        coeffs[l] = acc / c[d]
    return coeffs


def _check_convolution(taylor: list, coeffs: dict, d: int, m_max: int, tol: float = 1e-10) -> None:
    # internal certificate: sum_{m+n=l} (1/n!) P^(n) R_m = [l = 0]
    dim = 1 if np.isscalar(taylor[0]) or np.asarray(taylor[0]).ndim == 0 else len(taylor[0])
    eye = 1.0 if dim == 1 else np.eye(dim)
    scale = max(float(np.max(np.abs(np.asarray(c)))) for c in coeffs.values())
    scale = max(scale, 1.0)
    for l in range(-d, m_max + 1):
        acc = (1.0 if l == 0 else 0.0) * eye
        for n, cn in enumerate(taylor):
            m = l - n
            if m in coeffs:
                if dim > 1:
                    acc = acc - np.asarray(cn) @ np.asarray(coeffs[m])
                else:
                    acc = acc - cn * coeffs[m]
        err = float(np.max(np.abs(np.asarray(acc))))
        if err > tol * scale:
            raise AssertionError(f"resolvent Laurent data fails its defining identity at l={l}: {err}")


def resolvent_laurent(op: ModeOperator, lambda0: complex, m_max: int) -> LaurentCoefficients:
    """Laurent expansion of P(lambda)^{-1} around lambda0, truncated at m_max.

    Coefficients are scalars for Laplace modes and 2 x 2 matrices for Dirac
    blocks. The defining convolution identity against the symbol Taylor
    coefficients is asserted internally before returning.
    """
    if op.kind == KIND_DIRAC:
        # i lambda J inverts to (i J) / lambda since (iJ)^2 = Id
        scalar = _scalar_laurent([complex(lambda0), 1.0 + 0j], m_max)
        coeffs = {m: c * (1j * J_MATRIX) for m, c in scalar.items()}
        d = 1 if abs(lambda0) <= 1e-14 else 0
        _check_convolution(symbol_taylor(op, lambda0), coeffs, d, m_max)
        return LaurentCoefficients(at_root=complex(lambda0), coeffs=coeffs, m_max=m_max)

    c = [complex(lambda0) ** 2 + op.nu, 2 * complex(lambda0), 1.0 + 0j]
    scale = max(abs(x) for x in c)
    d = 0
    while d < len(c) and abs(c[d]) <= 1e-14 * scale:
        d += 1
    coeffs = _scalar_laurent(c, m_max)
    _check_convolution(c, coeffs, d, m_max)
    return LaurentCoefficients(at_root=complex(lambda0), coeffs=coeffs, m_max=m_max)

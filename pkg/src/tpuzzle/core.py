"""Statevector substrate: Pauli strings, random Hermitians, gates and Cayley transforms.

States are plain ``numpy`` arrays of ``2**n`` complex amplitudes. Qubit 0 is
the most significant bit of the basis index, so ``|q0 q1 ... q_{n-1}>`` maps to
index ``sum(q_j << (n - 1 - j))``. Most routines also accept a 2-D array of
shape ``(2**n, m)`` and act column-wise, which is how dense matrices are built
from the same code paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, cg

DENSE_THRESHOLD = 10

_PHASES = (1, -1, 1j, -1j)
_LETTERS = "IXYZ"

# single-site products: (a, b) -> (phase, a*b)
_SITE_PRODUCT = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}


class ResourceCapError(ValueError):
    """A requested size exceeds a configured memory/time cap."""


class CayleySolveError(RuntimeError):
    """The iterative Cayley solve did not reach the requested residual."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"Cayley solve did not converge: residual {residual:.3e} after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator from an int, sequence of ints or SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(*entropy: int) -> int:
    """Stable 63-bit seed from a tuple of integers (used to fan out work items)."""
    state = np.random.SeedSequence([int(e) for e in entropy]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def num_qubits(state: np.ndarray) -> int:
    dim = state.shape[0]
    n = dim.bit_length() - 1
    if dim != 1 << n or n < 1:
        raise ValueError(f"state dimension {dim} is not a power of two >= 2")
    return n


def zero_state(n: int) -> np.ndarray:
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1.0
    return psi


def basis_state(bits: Sequence[int]) -> np.ndarray:
    n = len(bits)
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    psi = np.zeros(1 << n, dtype=complex)
    psi[idx] = 1.0
    return psi


def _check_qubits(targets: Iterable[int], n: int) -> tuple[int, ...]:
    targets = tuple(int(t) for t in targets)
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"qubit index {t} out of range for {n} qubits")
    if len(set(targets)) != len(targets):
        raise ValueError(f"repeated qubit in {targets}")
    return targets


# --------------------------------------------------------------------------- Pauli strings


@dataclass(frozen=True)
class PauliString:
    letters: str
    phase: complex = 1

    def __post_init__(self):
        letters = self.letters.upper()
        if not letters or any(c not in _LETTERS for c in letters):
            raise ValueError(f"invalid Pauli letters {self.letters!r}")
        phase = complex(self.phase)
        if phase not in _PHASES:
            raise ValueError(f"phase must be one of +-1, +-i, got {self.phase}")
        object.__setattr__(self, "letters", letters)
        object.__setattr__(self, "phase", phase)

    @property
    def n(self) -> int:
        return len(self.letters)

    @cached_property
    def xmask(self) -> int:
        return sum(1 << (self.n - 1 - j) for j, c in enumerate(self.letters) if c in "XY")

    @cached_property
    def zmask(self) -> int:
        return sum(1 << (self.n - 1 - j) for j, c in enumerate(self.letters) if c in "YZ")

    @property
    def is_offdiagonal(self) -> bool:
        return self.xmask != 0

    @property
    def is_hermitian(self) -> bool:
        return self.phase.imag == 0

    def __mul__(self, other: "PauliString") -> "PauliString":
        if other.n != self.n:
            raise ValueError("width mismatch")
        phase = self.phase * other.phase
        out = []
        for a, b in zip(self.letters, other.letters):
            p, c = _SITE_PRODUCT[(a, b)]
            phase *= p
            out.append(c)
        return PauliString("".join(out), phase)

    def commutes(self, other: "PauliString") -> bool:
        clashes = sum(
            1 for a, b in zip(self.letters, other.letters) if a != "I" and b != "I" and a != b
        )
        return clashes % 2 == 0

    def action(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(perm, coef)`` with ``(P psi)[b] = coef[b] * psi[perm[b]]``."""
        return _pauli_action(self.letters, self.phase)

    def __str__(self) -> str:
        sign = {1: "+", -1: "-", 1j: "+i", -1j: "-i"}[self.phase]
        return sign + self.letters


def _pauli_action(letters: str, phase: complex) -> tuple[np.ndarray, np.ndarray]:
    n = len(letters)
    x = sum(1 << (n - 1 - j) for j, c in enumerate(letters) if c in "XY")
    z = sum(1 << (n - 1 - j) for j, c in enumerate(letters) if c in "YZ")
    ny = letters.count("Y")
    idx = np.arange(1 << n, dtype=np.int64)
    perm = idx ^ x
    # P|b> = phase * i^{ny} * (-1)^{|b & z|} |b ^ x>, gathered at the source index perm[b]
    sign = 1 - 2 * (np.bitwise_count(perm & z) & 1).astype(np.int8)
    coef = (phase * 1j**ny) * sign
    return perm, coef.astype(complex)


def apply_pauli(p: PauliString, state: np.ndarray) -> np.ndarray:
    if num_qubits(state) != p.n:
        raise ValueError(f"Pauli string on {p.n} qubits applied to {num_qubits(state)}-qubit state")
    perm, coef = p.action()
    if state.ndim == 1:
        return coef * state[perm]
    return coef[:, None] * state[perm]


def sample_offdiagonal_strings(n: int, k: int, rng, dedup: bool = False) -> list[PauliString]:
    """Draw ``k`` strings uniformly from {I,X,Y}^n with at least one X or Y."""
    if n < 1 or k < 1:
        raise ValueError("need n >= 1 and k >= 1")
    if dedup and k > 3**n - 1:
        raise ValueError(f"only {3**n - 1} distinct off-diagonal strings exist for n={n}, asked {k}")
    rng = make_rng(rng)
    out: list[PauliString] = []
    seen: set[str] = set()
    while len(out) < k:
        digits = rng.integers(0, 3, size=n)
        if not digits.any():
            continue
        letters = "".join("IXY"[d] for d in digits)
        if dedup:
            if letters in seen:
                continue
            seen.add(letters)
        out.append(PauliString(letters))
    return out


@dataclass(frozen=True)
class RandomHermitian:
    """``scale * sum_j P_j`` for Hermitian Pauli strings ``P_j``.

    ``scale`` defaults to ``1/sqrt(k)``.
    """

    strings: tuple[PauliString, ...]
    scale: float | None = None

    def __post_init__(self):
        strings = tuple(self.strings)
        if not strings:
            raise ValueError("empty Pauli sum")
        n = strings[0].n
        for p in strings:
            if p.n != n:
                raise ValueError("strings of mixed width")
            if not p.is_hermitian:
                raise ValueError(f"string {p} is not Hermitian")
        object.__setattr__(self, "strings", strings)
        if self.scale is None:
            object.__setattr__(self, "scale", 1.0 / math.sqrt(len(strings)))

    @property
    def n(self) -> int:
        return self.strings[0].n

    @property
    def k(self) -> int:
        return len(self.strings)

    @cached_property
    def _terms(self) -> list[tuple[np.ndarray, np.ndarray]]:
        # strings sharing an X-mask act on the same permutation; merge their diagonals
        merged: dict[int, np.ndarray] = {}
        perms: dict[int, np.ndarray] = {}
        for p in self.strings:
            perm, coef = p.action()
            if p.xmask in merged:
                merged[p.xmask] += coef
            else:
                merged[p.xmask] = coef.copy()
                perms[p.xmask] = perm
        return [(perms[x], self.scale * merged[x]) for x in sorted(merged)]

    def apply(self, state: np.ndarray) -> np.ndarray:
        if num_qubits(state) != self.n:
            raise ValueError(f"Hermitian on {self.n} qubits applied to {num_qubits(state)}-qubit state")
        out = np.zeros_like(state, dtype=complex)
        for perm, coef in self._terms:
            if state.ndim == 1:
                out += coef * state[perm]
            else:
                out += coef[:, None] * state[perm]
        return out

    def dense(self) -> np.ndarray:
        dim = 1 << self.n
        mat = np.zeros((dim, dim), dtype=complex)
        rows = np.arange(dim)
        for perm, coef in self._terms:
            mat[rows, perm] += coef
        return mat


def random_hermitian(n: int, k: int | None, rng) -> RandomHermitian:
    """Hermitian ``(1/sqrt(k)) sum_j P_j`` with ``k`` (default ``4 n^2``) off-diagonal strings."""
    k = 4 * n * n if k is None else k
    return RandomHermitian(tuple(sample_offdiagonal_strings(n, k, rng)))


def apply_hermitian(h: RandomHermitian, state: np.ndarray) -> np.ndarray:
    return h.apply(state)


# --------------------------------------------------------------------------- gates

_S2 = 1 / math.sqrt(2)
_T_PHASE = np.exp(1j * math.pi / 4)

GATES_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "S": np.diag([1, 1j]).astype(complex),
    "SDG": np.diag([1, -1j]).astype(complex),
    "T": np.diag([1, _T_PHASE]).astype(complex),
    "TDG": np.diag([1, np.conj(_T_PHASE)]).astype(complex),
}


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(phi: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


_PARAM_GATES = {"RY": ry, "RZ": rz, "RX": rx}


def gate_matrix(name: str, param: float | None = None) -> np.ndarray:
    name = name.upper()
    if name in GATES_1Q:
        return GATES_1Q[name]
    if name in _PARAM_GATES:
        if param is None:
            raise ValueError(f"gate {name} needs an angle")
        return _PARAM_GATES[name](param)
    raise ValueError(f"unknown single-qubit gate {name!r}")


def apply_1q(state: np.ndarray, mat: np.ndarray, q: int) -> np.ndarray:
    """Apply a 2x2 matrix on qubit ``q`` without forming the full operator."""
    n = num_qubits(state)
    _check_qubits([q], n)
    v = state.reshape(1 << q, 2, -1)
    a, b = v[:, 0, :], v[:, 1, :]
    out = np.empty_like(v, dtype=complex)
    if mat[0, 1] == 0 and mat[1, 0] == 0:
        out[:, 0, :] = mat[0, 0] * a
        out[:, 1, :] = mat[1, 1] * b
    else:
        out[:, 0, :] = mat[0, 0] * a + mat[0, 1] * b
        out[:, 1, :] = mat[1, 0] * a + mat[1, 1] * b
    return out.reshape(state.shape)


def apply_product(state: np.ndarray, mats: Sequence[np.ndarray], group: int = 4) -> np.ndarray:
    """Apply ``mats[0] (x) mats[1] (x) ...`` (one 2x2 per qubit, in qubit order).

    Consecutive qubits are fused into blocks of at most ``2**group`` so a full
    layer costs a handful of small contractions.
    """
    n = num_qubits(state)
    if len(mats) != n:
        raise ValueError(f"need {n} single-qubit matrices, got {len(mats)}")
    out = state.astype(complex, copy=False)
    for start in range(0, n, group):
        stop = min(start + group, n)
        block = mats[start]
        for m in mats[start + 1:stop]:
            block = np.kron(block, m)
        v = out.reshape(1 << start, 1 << (stop - start), -1)
        out = np.matmul(block, v).reshape(state.shape)
    return out


def _two_qubit_view(state: np.ndarray, q1: int, q2: int):
    n = num_qubits(state)
    lo, hi = sorted((q1, q2))
    v = state.reshape(1 << lo, 2, 1 << (hi - lo - 1), 2, -1)

    def sl(b1: int, b2: int):
        bits = {q1: b1, q2: b2}
        return (slice(None), bits[lo], slice(None), bits[hi], slice(None))

    return v, sl


def apply_cz(state: np.ndarray, q1: int, q2: int) -> np.ndarray:
    _check_qubits([q1, q2], num_qubits(state))
    out = state.astype(complex, copy=True)
    v, sl = _two_qubit_view(out, q1, q2)
    v[sl(1, 1)] *= -1
    return out


def apply_cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    _check_qubits([control, target], num_qubits(state))
    out = state.astype(complex, copy=True)
    v, sl = _two_qubit_view(out, control, target)
    tmp = v[sl(1, 0)].copy()
    v[sl(1, 0)] = v[sl(1, 1)]
    v[sl(1, 1)] = tmp
    return out


def apply_gate(state: np.ndarray, name: str, targets, param: float | None = None) -> np.ndarray:
    """Apply one of T, TDG, H, S, SDG, X, Y, Z, RY, RZ, RX, CZ, CNOT.

    ``targets`` is a qubit index or a tuple (control first for CNOT).
    """
    name = name.upper()
    targets = (targets,) if isinstance(targets, (int, np.integer)) else tuple(targets)
    if name == "CZ":
        return apply_cz(state, *targets)
    if name in ("CNOT", "CX"):
        return apply_cnot(state, *targets)
    if len(targets) != 1:
        raise ValueError(f"gate {name} acts on one qubit, got {targets}")
    return apply_1q(state, gate_matrix(name, param), targets[0])


def apply_controlled(
    state: np.ndarray,
    controls: Sequence[int],
    ctrl_state: Sequence[int],
    op,
    targets: Sequence[int],
) -> np.ndarray:
    """Apply ``op(substate, remapped_targets)`` on the subspace where ``controls == ctrl_state``.

    ``op`` receives a ``(2**m, batch)`` array over the non-control qubits.
    """
    n = num_qubits(state)
    controls = _check_qubits(controls, n)
    _check_qubits(tuple(controls) + tuple(targets), n)
    rest = [q for q in range(n) if q not in controls]
    remap = {q: i for i, q in enumerate(rest)}
    out = state.astype(complex, copy=True)
    v = out.reshape((2,) * n + (-1,))
    idx = [slice(None)] * (n + 1)
    for c, b in zip(controls, ctrl_state):
        idx[c] = int(b)
    idx = tuple(idx)
    sub = v[idx].reshape(1 << len(rest), -1)
    v[idx] = op(sub, [remap[t] for t in targets]).reshape(v[idx].shape)
    return out


# --------------------------------------------------------------------------- Cayley transform


def dense_cayley(h: RandomHermitian, beta: float, dense_threshold: int = DENSE_THRESHOLD) -> np.ndarray:
    """Explicit ``W(beta) = (1 - i beta H)(1 + i beta H)^{-1}``."""
    if h.n > dense_threshold:
        raise ResourceCapError(f"dense Cayley limited to n <= {dense_threshold}, got n={h.n}")
    hm = h.dense()
    eye = np.eye(hm.shape[0])
    # numerator and denominator commute, so the order of the solve is immaterial
    return sla.solve(eye + 1j * beta * hm, eye - 1j * beta * hm)


def cayley_apply(
    h: RandomHermitian,
    beta: float,
    state: np.ndarray,
    *,
    adjoint: bool = False,
    method: str = "auto",
    dense_threshold: int = DENSE_THRESHOLD,
    tol: float = 1e-10,
    maxiter: int = 500,
) -> np.ndarray:
    """Return ``W(beta) psi`` (or ``W(beta)^dagger psi``).

    ``method`` is ``"dense"``, ``"iterative"`` or ``"auto"`` (dense up to
    ``dense_threshold`` qubits). The iterative path runs conjugate gradients on
    the normal equations ``(1 + beta^2 H^2) phi = (1 - i s beta H)^2 psi`` with
    ``s = +1`` (or ``-1`` for the adjoint), which is Hermitian positive definite
    with spectrum in ``[1, 1 + beta^2 ||H||^2]``.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if num_qubits(state) != h.n:
        raise ValueError("width mismatch between Hermitian and state")
    if beta == 0:
        return state.astype(complex, copy=True)
    sgn = -1.0 if adjoint else 1.0
    if method == "auto":
        method = "dense" if h.n <= dense_threshold else "iterative"
    if method == "dense":
        w = dense_cayley(h, beta, dense_threshold)
        return (w.conj().T if adjoint else w) @ state
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    if state.ndim != 1:
        return np.stack(
            [cayley_apply(h, beta, c, adjoint=adjoint, method="iterative", tol=tol, maxiter=maxiter)
             for c in state.T],
            axis=1,
        )

    dim = state.shape[0]
    rhs_b = state - 1j * sgn * beta * h.apply(state)
    rhs = rhs_b - 1j * sgn * beta * h.apply(rhs_b)
    normal = LinearOperator(
        (dim, dim), matvec=lambda v: v + beta**2 * h.apply(h.apply(v)), dtype=complex
    )
    iters = 0

    def _count(_):
        nonlocal iters
        iters += 1

    phi, _info = cg(normal, rhs, rtol=0.1 * tol, atol=0.0, maxiter=maxiter, callback=_count)
    residual = np.linalg.norm(phi + 1j * sgn * beta * h.apply(phi) - rhs_b) / max(
        np.linalg.norm(rhs_b), 1e-300
    )
    if residual > tol:
        raise CayleySolveError(float(residual), iters)
    return phi


# --------------------------------------------------------------------------- reduced states


def reduced_density(state: np.ndarray, subset: Sequence[int]) -> np.ndarray:
    """Density matrix of the qubits in ``subset`` (in the given order)."""
    n = num_qubits(state)
    subset = tuple(int(q) for q in subset)
    if not subset:
        raise ValueError("subset must be nonempty")
    _check_qubits(subset, n)
    rest = [q for q in range(n) if q not in subset]
    a = np.transpose(state.reshape((2,) * n), subset + tuple(rest)).reshape(1 << len(subset), -1)
    return a @ a.conj().T


def purity(state: np.ndarray, subset: Sequence[int]) -> float:
    """``tr(rho_A^2)`` computed through the smaller side of the bipartition."""
    n = num_qubits(state)
    subset = _check_qubits(subset, n)
    rest = tuple(q for q in range(n) if q not in subset)
    if not subset:
        raise ValueError("subset must be nonempty")
    if not rest:
        return float(np.vdot(state, state).real ** 2)
    a = np.transpose(state.reshape((2,) * n), subset + rest).reshape(1 << len(subset), -1)
    g = a @ a.conj().T if len(subset) <= len(rest) else a.conj().T @ a
    return float(np.sum(np.abs(g) ** 2))

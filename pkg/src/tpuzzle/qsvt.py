"""Gate-level Cayley transform through a nested block encoding and QSVT.

Wire layout for every circuit built here: wire 0 is the phase ancilla used by
the projector-controlled phases, wires ``1..K`` are the encoding ancillas and
the last ``n`` wires hold the system. With all ancillas in ``|0>`` the system
block is therefore the leading ``2**n x 2**n`` corner of the circuit matrix.

Phases are stored in the Wx convention,
``P(x) = <0| e^{i phi_0 Z} prod_k W(x) e^{i phi_k Z} |0>`` with
``W(x) = exp(i arccos(x) X)``. A block encoding acts on each singular value as
a reflection instead, so ``assemble_qsvt`` shifts the phases and adds a global
phase to compensate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .core import (
    GATES_1Q,
    PauliString,
    RandomHermitian,
    ResourceCapError,
    apply_1q,
    apply_controlled,
    apply_pauli,
    dense_cayley,
    make_rng,
    num_qubits,
    rz,
    sample_offdiagonal_strings,
)

MAX_ENCODING_WIRES = 11
MAX_DENSE_WIRES = 12


class QSPFitError(RuntimeError):
    def __init__(self, fit_error: float, tol: float):
        super().__init__(f"QSP fit stalled at max error {fit_error:.3e} > tol {tol:.1e}")
        self.fit_error = fit_error
        self.tol = tol


# --------------------------------------------------------------------------- commuting bases


def _symplectic(p: PauliString) -> int:
    return (p.xmask << p.n) | p.zmask


@dataclass(frozen=True)
class CommutingBasis:
    basis: tuple[PauliString, ...]

    def __post_init__(self):
        basis = tuple(self.basis)
        if not basis:
            raise ValueError("empty basis")
        n = basis[0].n
        span = {0}
        for b in basis:
            if b.n != n:
                raise ValueError("basis strings of mixed width")
            if not b.is_hermitian or "Z" in b.letters or not b.is_offdiagonal:
                raise ValueError(f"{b} is not a Hermitian off-diagonal string over I, X, Y")
            v = _symplectic(b)
            if v in span:
                raise ValueError(f"{b} is a product of earlier basis strings")
            span |= {s ^ v for s in span}
        for i, a in enumerate(basis):
            for b in basis[i + 1:]:
                if not a.commutes(b):
                    raise ValueError(f"{a} and {b} anticommute")
        object.__setattr__(self, "basis", basis)

    @property
    def n(self) -> int:
        return self.basis[0].n

    @property
    def K(self) -> int:
        return len(self.basis)

    @property
    def k(self) -> int:
        return 1 << self.K

    def products(self) -> list[PauliString]:
        """All ``2**K`` subset products; bit ``j`` of the subset index selects ``B_j``."""
        out = []
        for x in range(self.k):
            p = PauliString("I" * self.n)
            for j, b in enumerate(self.basis):
                if (x >> j) & 1:
                    p = p * b
            out.append(p)
        return out


def build_commuting_basis(n: int, K: int, rng=0, max_tries: int = 200) -> CommutingBasis:
    """Greedy random draw of ``K`` commuting, independent off-diagonal strings."""
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    rng = make_rng(rng)
    for _ in range(max_tries):
        chosen: list[PauliString] = []
        span = {0}
        for _draw in range(50 * K):
            (p,) = sample_offdiagonal_strings(n, 1, rng)
            v = _symplectic(p)
            if v in span or not all(p.commutes(c) for c in chosen):
                continue
            chosen.append(p)
            span |= {s ^ v for s in span}
            if len(chosen) == K:
                return CommutingBasis(tuple(chosen))
    raise RuntimeError(f"no commuting basis with K={K} on n={n} qubits after {max_tries} restarts")


def nested_hermitian(basis: CommutingBasis) -> RandomHermitian:
    """The encoded operator ``(1/k) sum_x P_x``, equal to ``prod_j (I + B_j)/2``."""
    return RandomHermitian(tuple(basis.products()), scale=1.0 / basis.k)


# --------------------------------------------------------------------------- circuit IR

GATE_NAMES = ("H", "RZ", "GPHASE", "MCX", "CPAULI")


@dataclass(frozen=True)
class Gate:
    """One instruction.

    ``MCX``: wires are the controls then the target, ``params = (ctrl_bits,)``.
    ``CPAULI``: wires are the control then the system targets,
    ``params = (ctrl_bit, letters)``. ``RZ`` and ``GPHASE`` carry an angle;
    ``GPHASE`` has no wires.
    """

    name: str
    wires: tuple[int, ...] = ()
    params: tuple = ()

    def inverse(self) -> "Gate":
        if self.name in ("RZ", "GPHASE"):
            return Gate(self.name, self.wires, (-self.params[0],))
        return self

    def to_line(self) -> str:
        wires = ",".join(str(w) for w in self.wires) or "-"
        params = " ".join(repr(p) if isinstance(p, float) else str(p) for p in self.params)
        return f"{self.name} {wires} {params}".rstrip()

    @classmethod
    def from_line(cls, line: str) -> "Gate":
        parts = line.split()
        name, wires = parts[0], parts[1]
        wires = () if wires == "-" else tuple(int(w) for w in wires.split(","))
        rest = parts[2:]
        if name in ("RZ", "GPHASE"):
            params = (float(rest[0]),)
        elif name == "MCX":
            params = (rest[0],)
        elif name == "CPAULI":
            params = (int(rest[0]), rest[1])
        elif name == "H":
            params = ()
        else:
            raise ValueError(f"unknown gate {name!r}")
        return cls(name, wires, params)


@dataclass
class CircuitIR:
    num_wires: int
    encoding_wires: tuple[int, ...]
    system_wires: tuple[int, ...]
    gates: list[Gate] = field(default_factory=list)
    phase_wire: int = 0

    def __post_init__(self):
        self.encoding_wires = tuple(self.encoding_wires)
        self.system_wires = tuple(self.system_wires)
        layout = (self.phase_wire,) + self.encoding_wires + self.system_wires
        if sorted(layout) != list(range(self.num_wires)):
            raise ValueError("wire layout must cover every wire exactly once")
        if self.system_wires != tuple(range(self.num_wires - len(self.system_wires), self.num_wires)):
            raise ValueError("system wires must be the trailing wires")
        for g in self.gates:
            self._check(g)

    def _check(self, g: Gate) -> None:
        if g.name not in GATE_NAMES:
            raise ValueError(f"unknown gate {g.name!r}")
        if any(not 0 <= w < self.num_wires for w in g.wires):
            raise ValueError(f"{g.to_line()} targets an undeclared wire")
        if len(set(g.wires)) != len(g.wires):
            raise ValueError(f"{g.to_line()} repeats a wire")

    def append(self, gate: Gate) -> None:
        self._check(gate)
        self.gates.append(gate)

    def extend(self, gates) -> None:
        for g in gates:
            self.append(g)

    def adjoint_gates(self) -> list[Gate]:
        return [g.inverse() for g in reversed(self.gates)]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for g in self.gates:
            out[g.name] = out.get(g.name, 0) + 1
        return out

    # simulation -----------------------------------------------------------

    def apply(self, state: np.ndarray) -> np.ndarray:
        if num_qubits(state) != self.num_wires:
            raise ValueError("state width does not match the circuit")
        out = state.astype(complex, copy=True)
        for g in self.gates:
            out = _apply_gate(out, g)
        return out

    def dense(self) -> np.ndarray:
        if self.num_wires > MAX_DENSE_WIRES:
            raise ResourceCapError(f"dense circuit matrices are capped at {MAX_DENSE_WIRES} wires")
        return self.apply(np.eye(1 << self.num_wires, dtype=complex))

    def columns_from_zero_ancillas(self) -> np.ndarray:
        """Circuit applied to ``|0...0>_anc |j>_sys`` for every system basis state."""
        if self.num_wires > MAX_DENSE_WIRES:
            raise ResourceCapError(f"dense circuit matrices are capped at {MAX_DENSE_WIRES} wires")
        dim_sys = 1 << len(self.system_wires)
        cols = np.zeros((1 << self.num_wires, dim_sys), dtype=complex)
        cols[:dim_sys, :] = np.eye(dim_sys)
        return self.apply(cols)

    def block(self) -> np.ndarray:
        """System operator obtained by projecting all ancillas onto ``|0>``."""
        dim_sys = 1 << len(self.system_wires)
        return self.columns_from_zero_ancillas()[:dim_sys]

    # text format ----------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            f"wires {self.num_wires}",
            f"phase {self.phase_wire}",
            "encoding " + " ".join(str(w) for w in self.encoding_wires),
            "system " + " ".join(str(w) for w in self.system_wires),
        ]
        lines += [g.to_line() for g in self.gates]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CircuitIR":
        header: dict[str, list[int]] = {}
        gates = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key = line.split()[0]
            if key in ("wires", "phase", "encoding", "system"):
                header[key] = [int(t) for t in line.split()[1:]]
            else:
                gates.append(Gate.from_line(line))
        return cls(
            num_wires=header["wires"][0],
            encoding_wires=tuple(header["encoding"]),
            system_wires=tuple(header["system"]),
            gates=gates,
            phase_wire=header["phase"][0],
        )


def _apply_gate(state: np.ndarray, g: Gate) -> np.ndarray:
    if g.name == "H":
        return apply_1q(state, GATES_1Q["H"], g.wires[0])
    if g.name == "RZ":
        return apply_1q(state, rz(g.params[0]), g.wires[0])
    if g.name == "GPHASE":
        return state * np.exp(1j * g.params[0])
    if g.name == "MCX":
        *controls, target = g.wires
        ctrl = [int(c) for c in g.params[0]]
        return apply_controlled(
            state, controls, ctrl, lambda sub, t: apply_1q(sub, GATES_1Q["X"], t[0]), [target]
        )
    if g.name == "CPAULI":
        control, *targets = g.wires
        ctrl_bit, letters = g.params

        def op(sub, remapped):
            width = num_qubits(sub)
            chars = ["I"] * width
            for q, c in zip(remapped, letters):
                chars[q] = c
            return apply_pauli(PauliString("".join(chars)), sub)

        return apply_controlled(state, [control], [ctrl_bit], op, targets)
    raise ValueError(f"unknown gate {g.name!r}")


def build_block_encoding(basis: CommutingBasis, open_controls: bool = True) -> CircuitIR:
    """Hadamards on the ``K`` ancillas, one controlled basis string per ancilla, Hadamards.

    The ancilla-zero block is ``prod_j (I + B_j)/2`` for either control polarity.
    """
    K, n = basis.K, basis.n
    if n + K > MAX_ENCODING_WIRES:
        raise ResourceCapError(f"block encodings are capped at n + K <= {MAX_ENCODING_WIRES}")
    enc = tuple(range(1, K + 1))
    sys = tuple(range(K + 1, K + 1 + n))
    circ = CircuitIR(num_wires=1 + K + n, encoding_wires=enc, system_wires=sys)
    ctrl = 0 if open_controls else 1
    circ.extend(Gate("H", (a,)) for a in enc)
    for a, b in zip(enc, basis.basis):
        circ.append(Gate("CPAULI", (a,) + sys, (ctrl, b.letters)))
    circ.extend(Gate("H", (a,)) for a in enc)
    return circ


# --------------------------------------------------------------------------- QSP phases


def cayley_function(beta: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (1 - 1j * beta * x) / (1 + 1j * beta * x)


def qsp_unitaries(phases: Sequence[float], x) -> np.ndarray:
    """``(len(x), 2, 2)`` stack of Wx-convention QSP products."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = np.sqrt(np.clip(1 - x * x, 0, None))
    w = np.empty((x.size, 2, 2), dtype=complex)
    w[:, 0, 0] = w[:, 1, 1] = x
    w[:, 0, 1] = w[:, 1, 0] = 1j * s
    phases = np.asarray(phases, dtype=float)

    def ez(p):
        return np.diag([np.exp(1j * p), np.exp(-1j * p)])

    u = np.broadcast_to(ez(phases[0]), w.shape).copy()
    for p in phases[1:]:
        u = u @ w @ ez(p)
    return u


def qsp_polynomial(phases: Sequence[float], x) -> np.ndarray:
    return qsp_unitaries(phases, x)[:, 0, 0]


@dataclass(frozen=True)
class QSPPhases:
    phases: tuple[float, ...]
    beta: float
    fit_error: float
    pinned_error: float = 0.0

    @property
    def d(self) -> int:
        return len(self.phases) - 1

    def polynomial(self, x) -> np.ndarray:
        return qsp_polynomial(self.phases, x)


def _identity_phases(d: int) -> np.ndarray:
    # W e^{i pi/2 Z} W e^{-i pi/2 Z} = 1, so alternating +-pi/2 gives P = 1
    return np.array([0.0] + [math.pi / 2 if k % 2 else -math.pi / 2 for k in range(1, d + 1)])


def qsp_angles_for_cayley(
    beta: float,
    d: int,
    grid_size: int = 201,
    tol: float | None = None,
    starts: int = 8,
    seed: int = 0,
) -> QSPPhases:
    """Fit ``Re P`` to ``Re f`` for ``f(x) = (1 - i beta x)/(1 + i beta x)``.

    The fit is a constrained minimax over a uniform grid on ``[-1, 1]`` that
    pins ``P(0) = 1`` and ``Re P(1) = Re f(1)`` exactly, the only points that
    matter for a projector. The sign of ``Im P(1)`` is then fixed by
    conjugating the phases if needed. ``tol`` turns a fit error above it into
    ``QSPFitError``.
    """
    if d < 0 or d % 2:
        raise ValueError(f"degree must be even and non-negative, got {d}")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    grid = np.linspace(-1.0, 1.0, grid_size)
    target = cayley_function(beta, grid).real
    f1 = cayley_function(beta, 1.0)

    def resid(ph):
        return qsp_polynomial(ph, grid).real - target

    def pins(ph):
        p = qsp_polynomial(ph, [0.0, 1.0]).real
        return np.array([p[0] - 1.0, p[1] - f1.real])

    best = _identity_phases(d)
    best_err = float(np.max(np.abs(resid(best))))
    if best_err > 1e-14 and d > 0:
        rng = make_rng(seed)
        inits = [_identity_phases(d)] + [
            _identity_phases(d) + rng.normal(scale=0.3, size=d + 1) for _ in range(starts - 1)
        ]
        for init in inits:
            ls = least_squares(lambda ph: np.concatenate([resid(ph), 30.0 * pins(ph)]), init)
            ph0 = ls.x
            t0 = float(np.max(np.abs(resid(ph0))))
            res = minimize(
                lambda v: v[-1],
                np.append(ph0, t0),
                method="SLSQP",
                constraints=[
                    {"type": "ineq", "fun": lambda v: v[-1] - resid(v[:-1])},
                    {"type": "ineq", "fun": lambda v: v[-1] + resid(v[:-1])},
                    {"type": "eq", "fun": lambda v: pins(v[:-1])},
                ],
                options={"maxiter": 500, "ftol": 1e-15},
            )
            ph = res.x[:-1] if np.max(np.abs(pins(res.x[:-1]))) < 1e-9 else ph0
            if np.max(np.abs(pins(ph))) > 1e-9:
                continue
            err = float(np.max(np.abs(resid(ph))))
            if err < best_err:
                best, best_err = ph, err
    p1 = qsp_polynomial(best, 1.0)[0]
    if np.sign(p1.imag) != np.sign(f1.imag) and abs(f1.imag) > 0:
        best = -best
    pinned = qsp_polynomial(best, [0.0, 1.0])
    pinned_err = float(max(abs(pinned[0] - 1.0), abs(pinned[1] - f1)))
    fit = QSPPhases(tuple(float(p) for p in best), float(beta), best_err, pinned_err)
    if tol is not None and best_err > tol:
        raise QSPFitError(best_err, tol)
    return fit


# --------------------------------------------------------------------------- QSVT assembly


def reflection_phases(phases: Sequence[float]) -> tuple[np.ndarray, float]:
    """Phases for the reflection-form iterate plus the global phase restoring ``P``."""
    ph = np.array(phases, dtype=float)
    d = len(ph) - 1
    if d > 0:
        ph[0] -= math.pi / 4
        ph[-1] -= math.pi / 4
        ph[1:-1] -= math.pi / 2
    return ph, d * math.pi / 2


def projector_phase(circ: CircuitIR, phi: float) -> list[Gate]:
    """``exp(i phi (2 Pi - 1))`` with ``Pi`` the all-zero encoding-ancilla projector."""
    ctrl = "0" * len(circ.encoding_wires)
    mcx = Gate("MCX", circ.encoding_wires + (circ.phase_wire,), (ctrl,))
    return [mcx, Gate("RZ", (circ.phase_wire,), (2.0 * float(phi),)), mcx]


def assemble_qsvt(encoding: CircuitIR, phases: QSPPhases) -> CircuitIR:
    """Alternate the encoding and its adjoint with projector-controlled phases."""
    circ = CircuitIR(
        num_wires=encoding.num_wires,
        encoding_wires=encoding.encoding_wires,
        system_wires=encoding.system_wires,
        phase_wire=encoding.phase_wire,
    )
    refl, gphase = reflection_phases(phases.phases)
    forward, backward = list(encoding.gates), encoding.adjoint_gates()
    # the last phase in the matrix product acts first
    d = len(refl) - 1
    circ.extend(projector_phase(circ, refl[d]))
    for step, k in enumerate(range(d - 1, -1, -1)):
        circ.extend(forward if step % 2 == 0 else backward)
        circ.extend(projector_phase(circ, refl[k]))
    if gphase:
        circ.append(Gate("GPHASE", (), (gphase,)))
    return circ


@dataclass(frozen=True)
class CayleyCheck:
    beta: float
    beta_eff: float
    d: int
    deviation: float
    fit_error: float
    pinned_error: float
    min_success_probability: float
    unitarity_error: float


def check_cayley_equivalence(
    basis: CommutingBasis,
    beta: float,
    d: int,
    rescale: bool = False,
    grid_size: int = 201,
    open_controls: bool = True,
) -> CayleyCheck:
    """Dense comparison of the QSVT system block with the Cayley transform of the encoded projector.

    ``rescale`` multiplies ``beta`` by ``sqrt(k)`` to match a ``1/sqrt(k)``
    normalized Pauli sum.
    """
    if basis.n + basis.K + 1 > MAX_DENSE_WIRES:
        raise ResourceCapError(f"QSVT verification is capped at n + K + 1 <= {MAX_DENSE_WIRES}")
    beta_eff = beta * math.sqrt(basis.k) if rescale else beta
    phases = qsp_angles_for_cayley(beta_eff, d, grid_size)
    circ = assemble_qsvt(build_block_encoding(basis, open_controls), phases)
    cols = circ.columns_from_zero_ancillas()
    dim = 1 << basis.n
    block = cols[:dim]
    target = dense_cayley(nested_hermitian(basis), beta_eff)
    success = np.sum(np.abs(block) ** 2, axis=0)
    return CayleyCheck(
        beta=float(beta),
        beta_eff=float(beta_eff),
        d=d,
        deviation=float(np.max(np.abs(block - target))),
        fit_error=phases.fit_error,
        pinned_error=phases.pinned_error,
        min_success_probability=float(success.min()),
        unitarity_error=float(np.max(np.abs(block.conj().T @ block - np.eye(dim)))),
    )


def verify_cayley_equivalence(basis: CommutingBasis, beta: float, d: int, rescale: bool = False) -> float:
    """Max entrywise deviation between the QSVT block and the dense Cayley transform."""
    return check_cayley_equivalence(basis, beta, d, rescale).deviation

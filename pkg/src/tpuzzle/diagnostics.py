"""Entanglement and non-stabilizerness diagnostics for puzzle states.

All routines take a statevector and leave it untouched.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import hadamard

from .core import (
    GATES_1Q,
    ResourceCapError,
    apply_1q,
    apply_cnot,
    cayley_apply,
    derive_seed,
    make_rng,
    num_qubits,
    purity,
    random_hermitian,
    zero_state,
)
from .puzzle import build_instance

EXHAUSTIVE_MAX_QUBITS = 8
ALL_PAIRS_MAX_QUBITS = 10
SAMPLED_PAIRS = 50
SCAN_MAX_QUBITS = 12
CLIFFORD_MAX_QUBITS = 12


# --------------------------------------------------------------------------- entanglement


def renyi2(state: np.ndarray, L: int, offset: int = 0) -> float:
    """Rényi-2 entropy (bits) of the contiguous block ``offset .. offset+L-1``."""
    n = num_qubits(state)
    if not 1 <= L < n:
        raise ValueError(f"block length must satisfy 1 <= L < n={n}, got {L}")
    if not 0 <= offset <= n - L:
        raise ValueError(f"offset {offset} puts the block outside {n} qubits")
    p = purity(state, range(offset, offset + L))
    return max(0.0, -math.log2(p))


def renyi2_profile(state: np.ndarray, lengths: Sequence[int] | None = None) -> dict[int, float]:
    """Mean contiguous-block Rényi-2 entropy per length, averaged over all offsets."""
    n = num_qubits(state)
    lengths = range(1, n) if lengths is None else lengths
    return {
        int(L): float(np.mean([renyi2(state, L, o) for o in range(n - L + 1)]))
        for L in lengths
    }


def qubit_pairs(n: int, rng=None, max_pairs: int = SAMPLED_PAIRS) -> list[tuple[int, int]]:
    """All pairs for ``n <= 10``, otherwise ``max_pairs`` distinct random pairs."""
    pairs = list(itertools.combinations(range(n), 2))
    if n <= ALL_PAIRS_MAX_QUBITS:
        return pairs
    rng = make_rng(0 if rng is None else rng)
    pick = rng.choice(len(pairs), size=min(max_pairs, len(pairs)), replace=False)
    return [pairs[i] for i in sorted(pick)]


def two_body_purity_excess(state: np.ndarray, rng=None) -> float:
    """Mean of ``tr(rho_ij^2) - 1/4`` over qubit pairs."""
    n = num_qubits(state)
    if n < 2:
        raise ValueError("need at least two qubits")
    return float(np.mean([purity(state, p) - 0.25 for p in qubit_pairs(n, rng)]))


# --------------------------------------------------------------------------- stabilizer norm


@dataclass(frozen=True)
class MagicEstimate:
    value: float
    mode: str
    sample_count: int
    stderr: float = 0.0


def pauli_expectations(state: np.ndarray) -> np.ndarray:
    """``|<P>|`` for every Pauli string, as a ``(2**n, 2**n)`` array indexed ``[x, z]``.

    Row ``x`` holds ``sum_b conj(psi[b^x]) psi[b] (-1)^{b.z}``, which is a
    Walsh-Hadamard transform of the shifted overlap vector.
    """
    n = num_qubits(state)
    idx = np.arange(1 << n)
    shifted = np.conj(state[idx[:, None] ^ idx[None, :]]) * state[None, :]
    return np.abs(shifted @ hadamard(1 << n))


def stabilizer_norm(
    state: np.ndarray, mode: str = "exhaustive", samples: int = 10_000, rng=0
) -> MagicEstimate:
    """``2^-n sum_P |<P>|``, either over all ``4^n`` strings or by uniform sampling."""
    n = num_qubits(state)
    if mode == "exhaustive":
        if n > EXHAUSTIVE_MAX_QUBITS:
            raise ResourceCapError(
                f"exhaustive stabilizer norm is capped at n <= {EXHAUSTIVE_MAX_QUBITS}, got n={n}"
            )
        total = pauli_expectations(state).sum()
        return MagicEstimate(float(total) / (1 << n), mode, 1 << (2 * n))
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    if samples < 2:
        raise ValueError("sampled mode needs at least two strings")
    rng = make_rng(rng)
    idx = np.arange(1 << n)
    vals = np.empty(samples)
    chunk = max(1, (1 << 20) >> n)
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        x = rng.integers(0, 1 << n, size=m)
        z = rng.integers(0, 1 << n, size=m)
        sign = 1 - 2 * (np.bitwise_count(idx[None, :] & z[:, None]) & 1).astype(np.int8)
        terms = np.conj(state[idx[None, :] ^ x[:, None]]) * state[None, :] * sign
        vals[start:start + m] = np.abs(terms.sum(axis=1))
    # the mean over 4^n strings times 2^n is the normalized sum
    scale = float(1 << n)
    return MagicEstimate(
        scale * float(vals.mean()), mode, samples, scale * float(vals.std(ddof=1)) / math.sqrt(samples)
    )


# --------------------------------------------------------------------------- Clifford sampling

CLIFFORD_GATES = ("H", "S", "CNOT")


@dataclass(frozen=True)
class CliffordCircuit:
    n: int
    gates: tuple[tuple[str, tuple[int, ...]], ...] = ()
    depth: int = 0
    seed: int | None = None

    def __post_init__(self):
        gates = tuple((g.upper(), tuple(int(q) for q in t)) for g, t in self.gates)
        for name, targets in gates:
            if name not in CLIFFORD_GATES:
                raise ValueError(f"{name} is not in the Clifford gate set {CLIFFORD_GATES}")
            arity = 2 if name == "CNOT" else 1
            if len(targets) != arity or len(set(targets)) != arity:
                raise ValueError(f"{name} needs {arity} distinct qubits, got {targets}")
            if any(not 0 <= q < self.n for q in targets):
                raise ValueError(f"{name} on {targets} outside {self.n} qubits")
        object.__setattr__(self, "gates", gates)

    def apply(self, state: np.ndarray) -> np.ndarray:
        out = state.astype(complex, copy=True)
        for name, targets in self.gates:
            if name == "CNOT":
                out = apply_cnot(out, *targets)
            else:
                out = apply_1q(out, GATES_1Q[name], targets[0])
        return out

    def state(self) -> np.ndarray:
        return self.apply(zero_state(self.n))


def sample_clifford(n: int, depth: int = 5, rng=0) -> CliffordCircuit:
    """Random layers of per-qubit H/S/identity followed by CNOTs on a random pairing."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if n > CLIFFORD_MAX_QUBITS:
        raise ResourceCapError(f"Clifford sampling is capped at n <= {CLIFFORD_MAX_QUBITS}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = make_rng(rng)
    gates = []
    for _ in range(depth):
        for q, choice in enumerate(rng.integers(0, 3, size=n)):
            if choice < 2:
                gates.append((("H", "S")[choice], (q,)))
        order = rng.permutation(n)
        for a, b in zip(order[0::2], order[1::2]):
            gates.append(("CNOT", (int(a), int(b))))
    return CliffordCircuit(n, tuple(gates), depth, seed)


def sample_cliffords(n: int, count: int, depth: int = 5, seed: int = 0) -> list[CliffordCircuit]:
    return [sample_clifford(n, depth, derive_seed(seed, n, depth, j)) for j in range(count)]


def stabilizer_fidelity(
    state: np.ndarray, samples: Sequence[CliffordCircuit]
) -> tuple[float, float]:
    """``(F_stab, 1 - F_stab)`` against the sampled stabilizer states and ``|0...0>``."""
    if not samples:
        raise ValueError("need at least one Clifford circuit")
    n = num_qubits(state)
    if any(c.n != n for c in samples):
        raise ValueError("Clifford circuit width differs from the state")
    best = abs(state[0]) ** 2
    for c in samples:
        best = max(best, abs(np.vdot(c.state(), state)) ** 2)
    best = min(1.0, float(best))
    return best, 1.0 - best


# --------------------------------------------------------------------------- experiments


def zero_projector_closed_form(beta: float) -> float:
    """``1 - ((1 - b^2)/(1 + b^2))^2``, the large-``k`` single-block loss."""
    r = (1 - beta * beta) / (1 + beta * beta)
    return 1 - r * r


def single_block_scan(
    n: int,
    betas: Sequence[float],
    instances: int = 20,
    k: int | None = None,
    seed: int = 0,
    renyi: bool = True,
    clifford_samples: int = 0,
    clifford_depth: int = 5,
) -> list[dict]:
    """Statistics of ``W(beta)|0>`` for one random Cayley block per instance.

    Instance ``j`` keeps the same Hermitian across the beta grid. Columns
    ``s2_L<L>`` hold the offset-averaged Rényi-2 entropy and
    ``mean_nonclifford`` is filled when ``clifford_samples > 0``.
    """
    if n > SCAN_MAX_QUBITS:
        raise ResourceCapError(f"single-block scans are capped at n <= {SCAN_MAX_QUBITS}")
    k = 4 * n * n if k is None else int(k)
    hs = [random_hermitian(n, k, make_rng(derive_seed(seed, n, k, j))) for j in range(instances)]
    cliffords = sample_cliffords(n, clifford_samples, clifford_depth, seed) if clifford_samples else []
    rows = []
    for beta in betas:
        losses, profiles, nonclifford = [], [], []
        for h in hs:
            psi = cayley_apply(h, float(beta), zero_state(n))
            losses.append(min(1.0, max(0.0, 1.0 - abs(psi[0]) ** 2)))
            if renyi:
                profiles.append(renyi2_profile(psi))
            if cliffords:
                nonclifford.append(stabilizer_fidelity(psi, cliffords)[1])
        row = {
            "n": n,
            "k": k,
            "beta_eff": float(beta),
            "instances": instances,
            "mean_loss": float(np.mean(losses)),
            "std_loss": float(np.std(losses, ddof=1)) if instances > 1 else 0.0,
            "closed_form": zero_projector_closed_form(float(beta)),
        }
        if renyi:
            for L in range(1, n):
                row[f"s2_L{L}"] = float(np.mean([p[L] for p in profiles]))
        if cliffords:
            row["mean_nonclifford"] = float(np.mean(nonclifford))
        rows.append(row)
    return rows


def hardness_experiment(
    sizes: Sequence[int],
    beta: float = 0.2,
    instances: int = 5,
    seed: int = 0,
    k: int | None = None,
    magic_samples: int = 20_000,
) -> list[dict]:
    """Two-body purity excess and stabilizer norm of puzzle targets with ``n = D``.

    The stabilizer norm is exhaustive up to 8 qubits and sampled beyond.
    """
    rows = []
    for n in sizes:
        if n > SCAN_MAX_QUBITS:
            raise ResourceCapError(f"hardness diagnostics are capped at n <= {SCAN_MAX_QUBITS}")
        excess, magic = [], []
        for j in range(instances):
            inst_seed = derive_seed(seed, n, n, j)
            psi = build_instance(n, n, beta, beta, k=k, seed=inst_seed).target_state
            excess.append(two_body_purity_excess(psi, rng=inst_seed))
            mode = "exhaustive" if n <= EXHAUSTIVE_MAX_QUBITS else "sampled"
            magic.append(stabilizer_norm(psi, mode, magic_samples, rng=inst_seed).value)
        rows.append({
            "n": n,
            "beta": float(beta),
            "instances": instances,
            "mean_purity_excess": float(np.mean(excess)),
            "std_purity_excess": float(np.std(excess, ddof=1)) if instances > 1 else 0.0,
            "mean_stabilizer_norm": float(np.mean(magic)),
            "std_stabilizer_norm": float(np.std(magic, ddof=1)) if instances > 1 else 0.0,
        })
    return rows

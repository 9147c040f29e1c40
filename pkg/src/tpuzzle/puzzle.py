"""Hidden-T-gate puzzle circuits, their ansatz, and the losses used to recover them.

Layer ``i`` of the target applies, in time order, ``W_i``, ``V_i``,
``T_{q[i]}`` (when ``s*_i = 1``) and ``V_i^dagger``. The ansatz undoes layers
from ``D`` down to ``1``; each block applies ``V_i``, ``T^dagger`` (when
``s_i = 1``), ``V_i^dagger`` and ``W_i^dagger``. Qubit positions ``q`` are
stored 1-based.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import (
    DENSE_THRESHOLD,
    GATES_1Q,
    RandomHermitian,
    ResourceCapError,
    apply_1q,
    apply_product,
    cayley_apply,
    dense_cayley,
    make_rng,
    random_hermitian,
    ry,
    rz,
    zero_state,
)

FORMAT_VERSION = 1
ROTATION_MAX_QUBITS = 24

Bits = tuple[int, ...]


def as_bits(s, D: int | None = None) -> Bits:
    """Normalize ``"1011"``, lists or arrays of 0/1 into a tuple of ints."""
    if isinstance(s, str):
        bits = tuple(int(c) for c in s.strip())
    else:
        bits = tuple(int(b) for b in s)
    if any(b not in (0, 1) for b in bits):
        raise ValueError(f"bitstring must contain only 0/1: {s!r}")
    if D is not None and len(bits) != D:
        raise ValueError(f"bitstring length {len(bits)} != D={D}")
    return bits


def bits_to_index(bits: Sequence[int]) -> int:
    """Index with the first bit most significant."""
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx


def index_to_bits(idx: int, D: int) -> Bits:
    return tuple((idx >> (D - 1 - i)) & 1 for i in range(D))


def _parity_signs(n: int) -> np.ndarray:
    return 1.0 - 2.0 * (np.bitwise_count(np.arange(1 << n, dtype=np.int64)) & 1)


def _finish_fidelity(psi: np.ndarray) -> float:
    return min(1.0, max(0.0, 1.0 - float(abs(psi[0]) ** 2)))


def _finish_parity(psi: np.ndarray, signs: np.ndarray) -> float:
    expect = float(np.dot(signs, np.abs(psi) ** 2))
    return min(1.0, max(0.0, 1.0 - expect**2))


LOSS_KINDS = ("fidelity", "parity")


# --------------------------------------------------------------------------- Cayley puzzles


@dataclass(frozen=True)
class PuzzleInstance:
    n: int
    D: int
    beta_w: float
    beta_v: float
    k: int
    seed: int
    s_star: Bits
    q: tuple[int, ...]
    backend: str = field(default="auto", compare=False)

    def __post_init__(self):
        if self.n < 1 or self.D < 1:
            raise ValueError("need n >= 1 and D >= 1")
        if self.beta_w < 0 or self.beta_v < 0:
            raise ValueError("beta must be non-negative")
        object.__setattr__(self, "s_star", as_bits(self.s_star, self.D))
        q = tuple(int(x) for x in self.q)
        if len(q) != self.D or any(not 1 <= x <= self.n for x in q):
            raise ValueError(f"q must hold D={self.D} positions in [1, {self.n}]")
        object.__setattr__(self, "q", q)
        if self.backend not in ("auto", "dense", "iterative"):
            raise ValueError(f"unknown backend {self.backend!r}")

    # generators -----------------------------------------------------------

    @cached_property
    def hermitians(self) -> tuple[tuple[RandomHermitian, ...], tuple[RandomHermitian, ...]]:
        """``(H_W, H_V)`` per layer, regenerated from ``seed``."""
        _, w_seq, v_seq = np.random.SeedSequence(self.seed).spawn(3)
        hw = tuple(random_hermitian(self.n, self.k, make_rng(s)) for s in w_seq.spawn(self.D))
        hv = tuple(random_hermitian(self.n, self.k, make_rng(s)) for s in v_seq.spawn(self.D))
        return hw, hv

    @property
    def uses_dense(self) -> bool:
        if self.backend == "auto":
            return self.n <= DENSE_THRESHOLD
        return self.backend == "dense"

    @cached_property
    def _dense_layers(self) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Ansatz block matrices for ``s_i = 0`` and ``s_i = 1`` plus the target state."""
        hw, hv = self.hermitians
        tdg = GATES_1Q["TDG"]
        t = GATES_1Q["T"]
        off, on = [], []
        psi = zero_state(self.n)
        for i in range(self.D):
            w = dense_cayley(hw[i], self.beta_w)
            v = dense_cayley(hv[i], self.beta_v)
            wd = w.conj().T
            dressed = v.conj().T @ apply_1q(v, tdg, self.q[i] - 1)
            off.append(wd)
            on.append(wd @ dressed)
            psi = v @ (w @ psi)
            if self.s_star[i]:
                psi = apply_1q(psi, t, self.q[i] - 1)
            psi = v.conj().T @ psi
        return off, on, psi

    def _apply_layer(self, i: int, psi: np.ndarray, bit: int, *, inverse: bool) -> np.ndarray:
        """Matrix-free layer ``i`` of the target (``inverse=False``) or ansatz block."""
        hw, hv = self.hermitians
        qb = self.q[i] - 1
        kw = dict(method="iterative")
        if not inverse:
            psi = cayley_apply(hw[i], self.beta_w, psi, **kw)
            psi = cayley_apply(hv[i], self.beta_v, psi, **kw)
            if bit:
                psi = apply_1q(psi, GATES_1Q["T"], qb)
            return cayley_apply(hv[i], self.beta_v, psi, adjoint=True, **kw)
        psi = cayley_apply(hv[i], self.beta_v, psi, **kw)
        if bit:
            psi = apply_1q(psi, GATES_1Q["TDG"], qb)
        psi = cayley_apply(hv[i], self.beta_v, psi, adjoint=True, **kw)
        return cayley_apply(hw[i], self.beta_w, psi, adjoint=True, **kw)

    @cached_property
    def target_state(self) -> np.ndarray:
        if self.uses_dense:
            return self._dense_layers[2]
        psi = zero_state(self.n)
        for i in range(self.D):
            psi = self._apply_layer(i, psi, self.s_star[i], inverse=False)
        return psi

    # ansatz ---------------------------------------------------------------

    def apply_ansatz(self, s, psi: np.ndarray) -> np.ndarray:
        """``U_bar(s) psi``: blocks ``D ... 1`` in time order."""
        s = as_bits(s, self.D)
        if self.uses_dense:
            off, on, _ = self._dense_layers
            for i in reversed(range(self.D)):
                psi = (on if s[i] else off)[i] @ psi
            return psi
        for i in reversed(range(self.D)):
            psi = self._apply_layer(i, psi, s[i], inverse=True)
        return psi

    def apply_ansatz_adjoint(self, s, psi: np.ndarray) -> np.ndarray:
        """``U_bar(s)^dagger psi``."""
        s = as_bits(s, self.D)
        if self.uses_dense:
            off, on, _ = self._dense_layers
            for i in range(self.D):
                psi = (on if s[i] else off)[i].conj().T @ psi
            return psi
        hw, hv = self.hermitians
        kw = dict(method="iterative")
        for i in range(self.D):
            psi = cayley_apply(hw[i], self.beta_w, psi, **kw)
            psi = cayley_apply(hv[i], self.beta_v, psi, **kw)
            if s[i]:
                psi = apply_1q(psi, GATES_1Q["T"], self.q[i] - 1)
            psi = cayley_apply(hv[i], self.beta_v, psi, adjoint=True, **kw)
        return psi

    def recompiled_state(self, s) -> np.ndarray:
        return self.apply_ansatz(s, self.target_state)

    def loss(self, s) -> float:
        return _finish_fidelity(self.recompiled_state(s))

    def parity_loss(self, s) -> float:
        return _finish_parity(self.recompiled_state(s), self._signs)

    @cached_property
    def _signs(self) -> np.ndarray:
        return _parity_signs(self.n)

    def loss_fn(self, kind: str = "fidelity") -> Callable[[Bits], float]:
        if kind == "fidelity":
            return self.loss
        if kind == "parity":
            return self.parity_loss
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")

    def all_losses(self, kind: str = "fidelity") -> np.ndarray:
        """Loss for every bitstring, in index order (first bit most significant).

        The dense backend shares work between strings with a common suffix by
        pushing a block of states through each ansatz layer at once.
        """
        if kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {kind!r}")
        fn = self.loss_fn(kind)
        if not self.uses_dense or (self.n + self.D) > 26:
            return np.array([fn(index_to_bits(i, self.D)) for i in range(1 << self.D)])
        off, on, target = self._dense_layers
        states = target[:, None]
        # processing layer D first: its bit becomes the least significant
        for i in reversed(range(self.D)):
            states = np.concatenate([off[i] @ states, on[i] @ states], axis=1)
        if kind == "fidelity":
            vals = 1.0 - np.abs(states[0]) ** 2
        else:
            vals = 1.0 - (self._signs @ (np.abs(states) ** 2)) ** 2
        return np.clip(vals, 0.0, 1.0)

    # persistence ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n": self.n,
            "D": self.D,
            "beta_w": self.beta_w,
            "beta_v": self.beta_v,
            "k": self.k,
            "seed": self.seed,
            "s_star": "".join(str(b) for b in self.s_star),
            "q": list(self.q),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PuzzleInstance":
        version = data.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported instance format_version {version}")
        return cls(
            n=int(data["n"]),
            D=int(data["D"]),
            beta_w=float(data["beta_w"]),
            beta_v=float(data["beta_v"]),
            k=int(data["k"]),
            seed=int(data["seed"]),
            s_star=as_bits(data["s_star"]),
            q=tuple(data["q"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PuzzleInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_instance(
    n: int,
    D: int,
    beta_w: float,
    beta_v: float,
    k: int | None = None,
    seed: int = 0,
    s_star=None,
    backend: str = "auto",
) -> PuzzleInstance:
    """Sample target positions (and ``s*`` if not given) from ``seed``.

    With ``D <= n`` the positions are a prefix of a shuffled ``1..n``; otherwise
    they are drawn with replacement. ``k`` defaults to ``4 n^2``.
    """
    if n < 1 or D < 1:
        raise ValueError("need n >= 1 and D >= 1")
    k = 4 * n * n if k is None else int(k)
    qs_seq, _, _ = np.random.SeedSequence(seed).spawn(3)
    rng = make_rng(qs_seq)
    if D <= n:
        q = rng.permutation(n)[:D] + 1
    else:
        q = rng.integers(1, n + 1, size=D)
    drawn = rng.integers(0, 2, size=D)
    s = drawn if s_star is None else as_bits(s_star, D)
    return PuzzleInstance(
        n=n, D=D, beta_w=float(beta_w), beta_v=float(beta_v), k=k, seed=int(seed),
        s_star=tuple(int(b) for b in s), q=tuple(int(x) for x in q), backend=backend,
    )


def prepare_target(inst: PuzzleInstance) -> np.ndarray:
    return inst.target_state.copy()


def loss(inst: PuzzleInstance, s) -> float:
    return inst.loss(s)


def parity_loss(inst: PuzzleInstance, s) -> float:
    return inst.parity_loss(s)


@dataclass
class NoisyLossModel:
    """Additive Gaussian shot noise, ``sigma ~ 1/sqrt(shots)``."""

    sigma: float
    rng: np.random.Generator = field(default_factory=lambda: make_rng(0))

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.rng = make_rng(self.rng)

    @classmethod
    def from_shots(cls, shots: int, rng=0) -> "NoisyLossModel":
        return cls(1.0 / math.sqrt(shots), rng)

    def perturb(self, value: float) -> float:
        if self.sigma == 0:
            return value
        return value + self.sigma * float(self.rng.standard_normal())


def noisy_loss(inst, s, model: NoisyLossModel, kind: str = "fidelity") -> float:
    """Exact loss plus ``sigma * eta``; no clamping."""
    return model.perturb(inst.loss_fn(kind)(s))


# --------------------------------------------------------------------------- rotation puzzles


def _kick(phi: float, theta: float) -> np.ndarray:
    # R_Z(phi) R_Y(theta) R_Z(phi)^dagger, rightmost applied first
    return rz(phi) @ ry(theta) @ rz(phi).conj().T


@dataclass(frozen=True)
class RotationInstance:
    """Puzzle built from single-qubit kicks and sparse CZ layers.

    ``targets`` are 1-based linear indices on a ``rows x cols`` grid; the puzzle
    in layer ``i`` sits on ``targets[i]`` and the hidden string is all ones.
    """

    rows: int
    cols: int
    D: int
    sigma_rot1: float
    sigma_rot2: float
    L_V: int
    cz_enabled: bool
    seed: int
    targets: tuple[int, ...]
    max_qubits: int = field(default=ROTATION_MAX_QUBITS, compare=False)

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def s_star(self) -> Bits:
        return (1,) * self.D

    def __post_init__(self):
        if self.D > self.n:
            raise ValueError("need D <= rows * cols")
        if len(set(self.targets)) != self.D or any(not 1 <= t <= self.n for t in self.targets):
            raise ValueError("targets must be D distinct positions in [1, n]")

    @cached_property
    def angles(self) -> dict[str, np.ndarray]:
        """Per-layer kick angles; shapes ``(D, n)`` for W kicks and ``(D,)`` for V kicks."""
        _, w_seq, v_seq = np.random.SeedSequence(self.seed).spawn(3)
        rw, rv = make_rng(w_seq), make_rng(v_seq)
        n, D = self.n, self.D
        return {
            "phi": rw.uniform(0, 2 * np.pi, size=(D, n)),
            "theta": rw.standard_normal((D, n)) * self.sigma_rot1,
            "phi2": rw.uniform(0, 2 * np.pi, size=(D, n)),
            "theta2": rw.standard_normal((D, n)) * self.sigma_rot1,
            "phi_v": rv.uniform(0, 2 * np.pi, size=D),
            "theta_v": rv.standard_normal(D) * self.sigma_rot2,
        }

    @cached_property
    def _ops(self):
        if self.n > self.max_qubits:
            raise ResourceCapError(
                f"rotation instances are simulated as statevectors up to {self.max_qubits} qubits; "
                f"n={self.n} requested"
            )
        a = self.angles
        k1 = [[_kick(a["phi"][i, j], a["theta"][i, j]) for j in range(self.n)] for i in range(self.D)]
        k2 = [[_kick(a["phi2"][i, j], a["theta2"][i, j]) for j in range(self.n)] for i in range(self.D)]
        dressed = []
        for i in range(self.D):
            v = np.linalg.matrix_power(_kick(a["phi_v"][i], a["theta_v"][i]), self.L_V)
            vd = v.conj().T
            dressed.append((vd @ GATES_1Q["T"] @ v, vd @ GATES_1Q["TDG"] @ v))
        idx = np.arange(1 << self.n, dtype=np.int64)
        bits = [(idx >> (self.n - 1 - j)) & 1 for j in range(self.n)]
        odd = np.ones(1 << self.n)
        even = np.ones(1 << self.n)
        if self.cz_enabled:
            # 1-based pairs (1,2),(3,4),... and (2,3),(4,5),... on the linear index
            for j in range(0, self.n - 1, 2):
                odd *= 1 - 2 * (bits[j] & bits[j + 1])
            for j in range(1, self.n - 1, 2):
                even *= 1 - 2 * (bits[j] & bits[j + 1])
        return k1, k2, dressed, odd, even

    def _apply_w(self, i: int, psi: np.ndarray, adjoint: bool) -> np.ndarray:
        k1, k2, _, odd, even = self._ops
        if not adjoint:
            psi = odd * apply_product(psi, k1[i])
            return even * apply_product(psi, k2[i])
        psi = apply_product(even * psi, [m.conj().T for m in k2[i]])
        return apply_product(odd * psi, [m.conj().T for m in k1[i]])

    @cached_property
    def target_state(self) -> np.ndarray:
        _, _, dressed, _, _ = self._ops
        psi = zero_state(self.n)
        for i in range(self.D):
            psi = self._apply_w(i, psi, adjoint=False)
            psi = apply_1q(psi, dressed[i][0], self.targets[i] - 1)
        return psi

    def recompiled_state(self, s) -> np.ndarray:
        s = as_bits(s, self.D)
        _, _, dressed, _, _ = self._ops
        psi = self.target_state
        for i in reversed(range(self.D)):
            if s[i]:
                psi = apply_1q(psi, dressed[i][1], self.targets[i] - 1)
            psi = self._apply_w(i, psi, adjoint=True)
        return psi

    def loss(self, s) -> float:
        return _finish_fidelity(self.recompiled_state(s))

    def parity_loss(self, s) -> float:
        return _finish_parity(self.recompiled_state(s), _parity_signs(self.n))

    def loss_fn(self, kind: str = "fidelity") -> Callable[[Bits], float]:
        if kind == "fidelity":
            return self.loss
        if kind == "parity":
            return self.parity_loss
        raise ValueError(f"unknown loss kind {kind!r}")


def build_rotation_instance(
    rows: int,
    cols: int,
    D: int,
    sigma_rot1: float = 0.25,
    sigma_rot2: float = 0.4,
    L_V: int = 2,
    cz_enabled: bool = True,
    seed: int = 0,
    max_qubits: int = ROTATION_MAX_QUBITS,
) -> RotationInstance:
    n = rows * cols
    if D > n:
        raise ValueError("need D <= rows * cols")
    t_seq, _, _ = np.random.SeedSequence(seed).spawn(3)
    targets = make_rng(t_seq).choice(n, size=D, replace=False) + 1
    return RotationInstance(
        rows=rows, cols=cols, D=D, sigma_rot1=float(sigma_rot1), sigma_rot2=float(sigma_rot2),
        L_V=int(L_V), cz_enabled=bool(cz_enabled), seed=int(seed),
        targets=tuple(int(t) for t in targets), max_qubits=max_qubits,
    )


def rotation_loss(rinst: RotationInstance, s) -> float:
    return rinst.loss(s)

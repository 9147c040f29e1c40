"""Exhaustive loss maps over D-bit strings and their structural classification.

Strings are indexed with the first bit most significant, matching
``puzzle.bits_to_index``. Hamming shells and subset orders are taken relative
to a reference string by XOR, so ``mask = index ^ index(s_star)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import derive_seed
from .parallel import ordered_map
from .puzzle import Bits, as_bits, bits_to_index, build_instance, index_to_bits

MAX_ENUM_BITS = 16
MAX_EXPERIMENT_BITS = 10
EXACT_TOL = 1e-12
SEPARABLE_TOL = 1e-8


@dataclass(frozen=True)
class LossMap:
    D: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (1 << self.D,):
            raise ValueError(f"need {1 << self.D} values for D={self.D}, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("loss map contains non-finite values")
        if values.min() < -EXACT_TOL or values.max() > 1 + EXACT_TOL:
            raise ValueError("loss values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __getitem__(self, s) -> float:
        return float(self.values[bits_to_index(as_bits(s, self.D))])

    @property
    def argmin(self) -> Bits:
        return index_to_bits(int(np.argmin(self.values)), self.D)

    def masks(self, s_star) -> np.ndarray:
        """Disagreement mask of every index with ``s_star``."""
        ref = bits_to_index(as_bits(s_star, self.D))
        return np.arange(1 << self.D, dtype=np.int64) ^ ref

    def distances(self, s_star) -> np.ndarray:
        return np.bitwise_count(self.masks(s_star)).astype(int)

    def shell(self, s_star, h: int) -> np.ndarray:
        """Loss values at Hamming distance ``h`` from ``s_star``, in index order."""
        return self.values[self.distances(s_star) == h]

    def shell_means(self, s_star) -> np.ndarray:
        dist = self.distances(s_star)
        return np.array([self.values[dist == h].mean() for h in range(self.D + 1)])

    # binary export --------------------------------------------------------

    def save(self, path, **meta) -> Path:
        """Write little-endian float64 values plus a ``.json`` sidecar header."""
        path = Path(path)
        path.write_bytes(self.values.astype("<f8").tobytes())
        header = {"D": self.D, "dtype": "<f8", "count": 1 << self.D, "order": "index, first bit most significant"}
        header.update(meta)
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        return sidecar

    @classmethod
    def load(cls, path) -> "LossMap":
        path = Path(path)
        header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        values = np.frombuffer(path.read_bytes(), dtype="<f8")
        if values.size != header["count"]:
            raise ValueError(f"{path}: expected {header['count']} values, found {values.size}")
        return cls(int(header["D"]), values)


@dataclass(frozen=True)
class LandscapeReport:
    unimodal: bool
    monotonic: bool
    separable: bool
    delta_s: float
    delta_gap: float
    argmin: Bits


def enumerate_losses(loss_fn: Callable[[Bits], float], D: int) -> LossMap:
    if not 1 <= D <= MAX_ENUM_BITS:
        raise ValueError(f"enumeration is capped at 1 <= D <= {MAX_ENUM_BITS}, got {D}")
    return LossMap(D, [loss_fn(index_to_bits(i, D)) for i in range(1 << D)])


def instance_loss_map(inst, kind: str = "fidelity") -> LossMap:
    """Loss map of a puzzle instance using its batched evaluator."""
    if inst.D > MAX_ENUM_BITS:
        raise ValueError(f"enumeration is capped at D <= {MAX_ENUM_BITS}")
    return LossMap(inst.D, inst.all_losses(kind))


def _bit_pairs(D: int, bit: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices with ``bit`` cleared and the same indices with it set."""
    idx = np.arange(1 << D, dtype=np.int64)
    mask = 1 << (D - 1 - bit)
    low = idx[(idx & mask) == 0]
    return low, low | mask


def is_unimodal(lmap: LossMap, tol: float = EXACT_TOL) -> bool:
    v = lmap.values
    best = v.min()
    if np.count_nonzero(v <= best + tol) != 1:
        return False
    # smallest one-flip neighbour of every string
    idx = np.arange(1 << lmap.D, dtype=np.int64)
    nbr_min = np.full(v.shape, np.inf)
    for b in range(lmap.D):
        nbr_min = np.minimum(nbr_min, v[idx ^ (1 << b)])
    others = v > best + tol
    return bool(np.all(nbr_min[others] < v[others] - tol))


def is_monotonic(lmap: LossMap, s_star, tol: float = EXACT_TOL) -> bool:
    """Loss never decreases when more bits disagree with ``s_star``.

    Checking single-bit extensions of every disagreement mask is enough: the
    subset order is their transitive closure.
    """
    ref = bits_to_index(as_bits(s_star, lmap.D))
    by_mask = lmap.values[np.arange(1 << lmap.D, dtype=np.int64) ^ ref]
    for b in range(lmap.D):
        low, high = _bit_pairs(lmap.D, b)
        if np.any(by_mask[low] > by_mask[high] + tol):
            return False
    return True


def flip_differences(lmap: LossMap, bit: int) -> np.ndarray:
    """``l(s | s_bit=1) - l(s | s_bit=0)`` over all contexts of the other bits."""
    low, high = _bit_pairs(lmap.D, bit)
    return lmap.values[high] - lmap.values[low]


def is_separable(lmap: LossMap, tol: float = SEPARABLE_TOL) -> bool:
    for b in range(lmap.D):
        d = flip_differences(lmap, b)
        if d.max() - d.min() > tol:
            return False
    return True


def sliding_step(lmap: LossMap, s_star) -> float:
    """Mean step between consecutive Hamming-shell means."""
    means = lmap.shell_means(s_star)
    return float(np.sum(np.diff(means)) / lmap.D)


def gap_delta(lmap: LossMap, s_star) -> float:
    """Mean gap between sorted losses in the shell at distance ``ceil(D/2)``."""
    h = math.ceil(lmap.D / 2)
    shell = np.sort(lmap.shell(s_star, h))
    if shell.size < 2:
        raise ValueError(f"shell at h={h} has {shell.size} string(s); need at least 2")
    return float(np.mean(np.diff(shell)))


def classify(lmap: LossMap, s_star) -> LandscapeReport:
    try:
        gap = gap_delta(lmap, s_star)
    except ValueError:
        gap = math.nan
    return LandscapeReport(
        unimodal=is_unimodal(lmap),
        monotonic=is_monotonic(lmap, s_star),
        separable=is_separable(lmap),
        delta_s=sliding_step(lmap, s_star),
        delta_gap=gap,
        argmin=lmap.argmin,
    )


# --------------------------------------------------------------------------- experiments


def _instance_report(item, k, loss_kind) -> LandscapeReport:
    n, D, beta, inst_seed = item
    inst = build_instance(n, D, beta, beta, k=k, seed=inst_seed)
    return classify(instance_loss_map(inst, loss_kind), inst.s_star)


def heatmap_experiment(
    n: int,
    D: int,
    betas: Sequence[float],
    instances_per_cell: int = 6,
    seed: int = 0,
    k: int | None = None,
    loss_kind: str = "fidelity",
    workers: int = 1,
) -> list[dict]:
    """Fractions of non-unimodal, non-separable and non-monotonic instances per beta.

    Instance ``j`` uses the same seed in every beta cell, so cells differ only
    in the rotation strength.
    """
    if D > MAX_EXPERIMENT_BITS:
        raise ValueError(f"heatmap experiments are capped at D <= {MAX_EXPERIMENT_BITS}")
    items = [
        (n, D, float(beta), derive_seed(seed, n, D, j))
        for beta in betas
        for j in range(instances_per_cell)
    ]
    reports = ordered_map(partial(_instance_report, k=k, loss_kind=loss_kind), items, workers)
    rows = []
    for c, beta in enumerate(betas):
        cell = reports[c * instances_per_cell:(c + 1) * instances_per_cell]
        rows.append({
            "n": n,
            "D": D,
            "beta": float(beta),
            "instances": len(cell),
            "non_unimodal_fraction": float(np.mean([not r.unimodal for r in cell])),
            "non_separable_fraction": float(np.mean([not r.separable for r in cell])),
            "non_monotonic_fraction": float(np.mean([not r.monotonic for r in cell])),
        })
    return rows


def concentration_experiment(
    sizes: Sequence[int],
    beta: float = 0.2,
    instances: int = 10,
    seed: int = 0,
    k: int | None = None,
    loss_kind: str = "fidelity",
    workers: int = 1,
) -> list[dict]:
    """Per-size mean and spread of the sliding step and the mid-shell gap (``n = D``)."""
    if max(sizes) > MAX_EXPERIMENT_BITS:
        raise ValueError(f"concentration experiments are capped at n <= {MAX_EXPERIMENT_BITS}")
    items = [(n, n, float(beta), derive_seed(seed, n, n, j)) for n in sizes for j in range(instances)]
    reports = ordered_map(partial(_instance_report, k=k, loss_kind=loss_kind), items, workers)
    rows = []
    for c, n in enumerate(sizes):
        cell = reports[c * instances:(c + 1) * instances]
        ds = np.array([r.delta_s for r in cell])
        gaps = np.array([r.delta_gap for r in cell])
        rows.append({
            "n": n,
            "beta": float(beta),
            "instances": instances,
            "mean_delta_s": float(ds.mean()),
            "std_delta_s": float(ds.std(ddof=1)) if instances > 1 else 0.0,
            "mean_delta_gap": float(gaps.mean()),
            "std_delta_gap": float(gaps.std(ddof=1)) if instances > 1 else 0.0,
        })
    return rows

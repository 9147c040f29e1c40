"""Adaptive bit-flip search and the non-adaptive random-search baseline."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import ResourceCapError, derive_seed, make_rng
from .parallel import ordered_map
from .puzzle import (
    ROTATION_MAX_QUBITS,
    Bits,
    NoisyLossModel,
    as_bits,
    bits_to_index,
    build_instance,
    build_rotation_instance,
    index_to_bits,
)

LossFn = Callable[[Bits], float]

TERMINATIONS = ("converged", "no_improvement", "iteration_cap")


def flip(s: Bits, i: int) -> Bits:
    return s[:i] + (1 - s[i],) + s[i + 1:]


@dataclass
class OptTrace:
    """Record of one optimization run.

    ``loss_per_sweep[0]`` is the loss at the start point; entry ``j`` is the
    (estimated) loss of the incumbent after sweep ``j``. ``f_evals`` counts
    neighbour evaluations (noiseless) or individual noisy draws (noisy mode).
    """

    path: list[Bits]
    loss_per_sweep: list[float]
    f_evals: int
    termination: str
    evals_per_sweep: list[int] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    success: bool | None = None

    @property
    def s_final(self) -> Bits:
        return self.path[-1]

    @property
    def sweeps(self) -> int:
        return len(self.evals_per_sweep)

    @property
    def moves(self) -> int:
        return len(self.path) - 1

    def judged(self, s_star) -> "OptTrace":
        """Copy with ``success`` set by comparing the final string to ``s_star``."""
        return replace(self, success=self.s_final == as_bits(s_star))

    def rows(self) -> list[tuple[int, float, int, str]]:
        """``(sweep, current_loss, f_evals_cumulative, bitstring_hex)`` per sweep."""
        D = len(self.path[0])
        width = max(1, math.ceil(D / 4))
        out = []
        cumulative = 0
        # the incumbent after sweep j is the last path entry reached by then
        incumbents = self._incumbents()
        for j, value in enumerate(self.loss_per_sweep):
            if j > 0:
                cumulative += self.evals_per_sweep[j - 1]
            out.append((j, value, cumulative, format(bits_to_index(incumbents[j]), f"0{width}x")))
        return out

    def _incumbents(self) -> list[Bits]:
        if len(self.accepted) != len(self.loss_per_sweep) - 1:
            return [self.path[-1]] * len(self.loss_per_sweep)
        out, pos = [self.path[0]], 0
        for moved in self.accepted:
            pos += int(moved)
            out.append(self.path[pos])
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "current_loss", "f_evals_cumulative", "bitstring_hex"])
            for sweep, value, cum, hx in self.rows():
                w.writerow([sweep, f"{value:.17g}", cum, hx])


def _trace(path, losses, f_evals, termination, per_sweep, moved) -> OptTrace:
    return OptTrace(path, losses, f_evals, termination, per_sweep, moved)


def hill_climb(
    loss_fn: LossFn,
    D: int,
    s0,
    tol: float = 1e-10,
    max_sweeps: int | None = None,
) -> OptTrace:
    """Steepest-descent bit-flip hill climbing.

    Every sweep evaluates all ``D`` one-flip neighbours and moves to the best
    one if it strictly improves (ties go to the lowest index). The run stops
    when a sweep finds no improvement, when the incumbent loss drops below
    ``tol`` after a sweep, or after ``max_sweeps`` (default ``2**D``). The
    evaluation of ``s0`` itself is not counted in ``f_evals``.
    """
    s = as_bits(s0, D)
    cap = (1 << D) if max_sweeps is None else max_sweeps
    current = loss_fn(s)
    path, losses, per_sweep, moved = [s], [current], [], []
    f_evals = 0
    while True:
        if len(per_sweep) >= cap:
            return _trace(path, losses, f_evals, "iteration_cap", per_sweep, moved)
        values = [loss_fn(flip(s, i)) for i in range(D)]
        f_evals += D
        per_sweep.append(D)
        best = int(np.argmin(values))  # first index on ties
        improved = values[best] < current
        if improved:
            s, current = flip(s, best), values[best]
            path.append(s)
        moved.append(improved)
        losses.append(current)
        if current < tol:
            return _trace(path, losses, f_evals, "converged", per_sweep, moved)
        if not improved:
            return _trace(path, losses, f_evals, "no_improvement", per_sweep, moved)


@dataclass(frozen=True)
class NoisySchedule:
    """Piecewise ``loss -> (breadth, trials)`` map; tiers sorted by decreasing threshold."""

    tiers: tuple[tuple[float, int, int], ...] = ((0.3, 36, 1), (0.1, 12, 3), (-math.inf, 2, 6))

    def __post_init__(self):
        tiers = tuple((float(t), int(lam), int(m)) for t, lam, m in self.tiers)
        if not tiers:
            raise ValueError("empty schedule")
        th = [t for t, _, _ in tiers]
        if any(a <= b for a, b in zip(th, th[1:])):
            raise ValueError("schedule thresholds must be strictly decreasing")
        if any(lam < 1 or m < 1 for _, lam, m in tiers):
            raise ValueError("breadth and trials must be >= 1")
        object.__setattr__(self, "tiers", tiers)

    def __call__(self, estimate: float) -> tuple[int, int]:
        for threshold, lam, m in self.tiers:
            if estimate >= threshold:
                return lam, m
        return self.tiers[-1][1], self.tiers[-1][2]


def noisy_hill_climb(
    noisy_loss_fn: LossFn,
    D: int,
    s0,
    sigma: float,
    rng=0,
    schedule: NoisySchedule | None = None,
    margin_factor: float = 1.0,
    max_sweeps: int = 200,
    tol: float = 1e-10,
) -> OptTrace:
    """Hill climbing on a noisy loss with a breadth/depth schedule.

    Each sweep picks ``(lam, m)`` from the latest incumbent estimate, averages
    ``m`` draws for ``lam`` distinct random neighbours and for the incumbent,
    and moves when the best neighbour beats the incumbent by more than
    ``margin_factor * sigma * sqrt(2/m)``. It stops once the incumbent estimate
    falls below ``max(2 sigma / sqrt(m), tol)``.
    """
    schedule = schedule or NoisySchedule()
    rng = make_rng(rng)
    s = as_bits(s0, D)

    def estimate(x: Bits, m: int) -> float:
        return float(np.mean([noisy_loss_fn(x) for _ in range(m)]))

    _, m0 = schedule(math.inf)
    est = estimate(s, m0)
    f_evals = m0
    path, losses, per_sweep, moved = [s], [est], [], []
    while len(per_sweep) < max_sweeps:
        lam, m = schedule(est)
        lam = min(lam, D)
        current = estimate(s, m)
        if current < max(2 * sigma / math.sqrt(m), tol):
            per_sweep.append(m)
            f_evals += m
            moved.append(False)
            losses.append(current)
            return _trace(path, losses, f_evals, "converged", per_sweep, moved)
        picks = rng.choice(D, size=lam, replace=False)
        neighbours = [(estimate(flip(s, int(i)), m), int(i)) for i in picks]
        per_sweep.append(lam * m + m)
        f_evals += lam * m + m
        best_val, best_i = min(neighbours)
        if best_val < current - margin_factor * sigma * math.sqrt(2 / m):
            s = flip(s, best_i)
            path.append(s)
            est = best_val
            moved.append(True)
        else:
            est = current
            moved.append(False)
        losses.append(est)
    return _trace(path, losses, f_evals, "iteration_cap", per_sweep, moved)


def random_search(loss_fn: LossFn, D: int, rng, tol: float = 1e-10) -> OptTrace:
    """Evaluate strings in a uniformly random order until the loss drops below ``tol``."""
    if D > 20:
        raise ValueError("random search is capped at D <= 20")
    rng = make_rng(rng)
    order = rng.permutation(1 << D)
    best, best_val = None, math.inf
    for pos, idx in enumerate(order, start=1):
        s = index_to_bits(int(idx), D)
        val = loss_fn(s)
        if val < best_val:
            best, best_val = s, val
        if val < tol:
            return OptTrace([s], [val], pos, "converged", [pos], [])
    return OptTrace([best], [best_val], 1 << D, "no_improvement", [1 << D], [])


def summarize(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    return {
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
        "q25": float(np.percentile(v, 25)),
        "median": float(np.median(v)),
        "q75": float(np.percentile(v, 75)),
    }


def _scaling_item(item) -> list[dict]:
    n, j, method, beta, k, seed, starts, trials, loss_kind = item
    inst_seed = derive_seed(seed, n, n, j)
    inst = build_instance(n, n, beta, beta, k=k, seed=inst_seed)
    rng = make_rng(derive_seed(seed, n, j, 1))
    runs = []
    if method == "hill":
        fn = inst.loss_fn(loss_kind)
        for r in range(starts):
            s0 = tuple(int(b) for b in rng.integers(0, 2, size=n))
            runs.append((r, hill_climb(fn, n, s0).judged(inst.s_star)))
    else:
        table = inst.all_losses(loss_kind)
        fn = lambda s: float(table[bits_to_index(s)])
        for r in range(trials):
            runs.append((r, random_search(fn, n, rng).judged(inst.s_star)))
    return [
        {
            "n": n,
            "method": method,
            "instance": j,
            "instance_seed": inst_seed,
            "run": r,
            "f_evals": tr.f_evals,
            "sweeps": tr.sweeps,
            "termination": tr.termination,
            "final_loss": tr.loss_per_sweep[-1],
            "success": tr.success,
        }
        for r, tr in runs
    ]


def scaling_experiment(
    sizes: Sequence[int],
    instances_per_size: int,
    method: str = "hill",
    beta: float = 0.2,
    k: int | None = None,
    seed: int = 0,
    starts_per_instance: int = 1,
    trials_per_instance: int = 20,
    loss_kind: str = "fidelity",
    workers: int = 1,
    runs: list | None = None,
) -> list[dict]:
    """Function-evaluation statistics per size ``n = D``.

    ``method`` is ``"hill"`` (random starts) or ``"random"`` (random search
    replayed ``trials_per_instance`` times against each instance's loss
    table). Per-run records are appended to ``runs`` when it is given.
    """
    if method not in ("hill", "random"):
        raise ValueError(f"unknown method {method!r}")
    if max(sizes) > 12:
        raise ValueError("exact simulation limited to n <= 12")
    items = [
        (n, j, method, beta, k, seed, starts_per_instance, trials_per_instance, loss_kind)
        for n in sizes
        for j in range(instances_per_size)
    ]
    per_item = ordered_map(_scaling_item, items, workers)
    rows = []
    for n in sizes:
        recs = [r for batch in per_item for r in batch if r["n"] == n]
        if runs is not None:
            runs.extend(recs)
        row = {"n": n, "method": method, "runs": len(recs)}
        row.update({f"{key}_f_evals": val for key, val in summarize([r["f_evals"] for r in recs]).items()})
        row["success_rate"] = float(np.mean([r["success"] for r in recs]))
        row["reference"] = adaptive_reference(n) if method == "hill" else random_search_expectation(n)
        rows.append(row)
    return rows


def _noisy_item(item) -> list[dict]:
    n, j, sigmas, beta, k, seed, loss_kind, schedule, margin_factor = item
    inst_seed = derive_seed(seed, n, n, j)
    inst = build_instance(n, n, beta, beta, k=k, seed=inst_seed)
    # exact values come from the table; only the noise is drawn per evaluation
    table = inst.all_losses(loss_kind)
    out = []
    for c, sigma in enumerate(sigmas):
        rng = make_rng(derive_seed(seed, n, j, 2, c))
        model = NoisyLossModel(sigma, rng)
        fn = lambda s: model.perturb(float(table[bits_to_index(s)]))
        s0 = tuple(int(b) for b in rng.integers(0, 2, size=n))
        tr = noisy_hill_climb(fn, n, s0, sigma, rng=rng, schedule=schedule, margin_factor=margin_factor)
        tr = tr.judged(inst.s_star)
        out.append({
            "n": n, "sigma": sigma, "run": j, "instance_seed": inst_seed,
            "f_evals": tr.f_evals, "sweeps": tr.sweeps, "termination": tr.termination,
            "success": tr.success,
        })
    return out


def noisy_experiment(
    sizes: Sequence[int],
    sigmas: Sequence[float],
    runs_per_size: int = 20,
    beta: float = 0.2,
    k: int | None = None,
    seed: int = 0,
    loss_kind: str = "fidelity",
    schedule: NoisySchedule | None = None,
    margin_factor: float = 1.0,
    workers: int = 1,
    runs: list | None = None,
) -> list[dict]:
    """Success rate of noisy hill climbing per ``(n, sigma)``.

    Run ``j`` uses a fresh instance and a random start; the same instance is
    reused across the sigma grid.
    """
    schedule = schedule or NoisySchedule()
    items = [
        (n, j, tuple(float(x) for x in sigmas), beta, k, seed, loss_kind, schedule, margin_factor)
        for n in sizes
        for j in range(runs_per_size)
    ]
    recs = [r for batch in ordered_map(_noisy_item, items, workers) for r in batch]
    if runs is not None:
        runs.extend(recs)
    rows = []
    for n in sizes:
        for sigma in sigmas:
            cell = [r for r in recs if r["n"] == n and r["sigma"] == float(sigma)]
            rows.append({
                "n": n,
                "sigma": float(sigma),
                "loss": loss_kind,
                "runs": len(cell),
                "success_rate": float(np.mean([r["success"] for r in cell])),
                "mean_f_evals": float(np.mean([r["f_evals"] for r in cell])),
                "mean_sweeps": float(np.mean([r["sweeps"] for r in cell])),
            })
    return rows


def _rotation_item(item) -> dict:
    rows, cols, D, s1, s2, L_V, cz, inst_seed, start_seed, max_qubits = item
    rinst = build_rotation_instance(
        rows, cols, D, sigma_rot1=s1, sigma_rot2=s2, L_V=L_V, cz_enabled=cz,
        seed=inst_seed, max_qubits=max_qubits,
    )
    s0 = tuple(int(b) for b in make_rng(start_seed).integers(0, 2, size=D))
    return {"trace": hill_climb(rinst.loss_fn(), D, s0).judged(rinst.s_star), "instance": rinst}


def rotation_experiment(
    rows: int = 4,
    cols: int = 4,
    D: int = 8,
    sigma_rot1: float = 0.25,
    sigma_rot2: float = 0.4,
    L_V: int = 2,
    instances: int = 10,
    seed: int = 0,
    cz_options: Sequence[bool] = (True, False),
    max_qubits: int = ROTATION_MAX_QUBITS,
    workers: int = 1,
) -> list[dict]:
    """Hill-climbing traces on rotation-circuit instances, with and without CZ layers.

    Instance ``j`` shares its seed and start string across the CZ options.
    """
    if rows * cols > max_qubits:
        raise ResourceCapError(
            f"{rows}x{cols} = {rows * cols} qubits exceeds the statevector cap of {max_qubits}"
        )
    items = [
        (rows, cols, D, sigma_rot1, sigma_rot2, L_V, cz, derive_seed(seed, rows, cols, D, j),
         derive_seed(seed, rows, cols, D, j, 1), max_qubits)
        for cz in cz_options
        for j in range(instances)
    ]
    results = ordered_map(_rotation_item, items, workers)
    out = []
    for (_, _, _, _, _, _, cz, inst_seed, _, _), res in zip(items, results):
        tr = res["trace"]
        out.append({
            "cz_enabled": cz,
            "instance_seed": inst_seed,
            "trace": tr,
            "within_D_sweeps": bool(tr.success and tr.sweeps <= D),
        })
    return out


def adaptive_reference(n: float) -> float:
    return n * n / 2 - n / 4


def exhaustive_reference(n: float) -> float:
    return 2**n / 2


def random_search_expectation(D: int) -> float:
    """Mean position of the single optimum in a uniformly random order."""
    return ((1 << D) + 1) / 2

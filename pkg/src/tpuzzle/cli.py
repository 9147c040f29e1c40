"""Command-line experiment runner.

Every subcommand writes CSV tables (with a provenance header) under
``--out``. Options can also come from a JSON file passed with ``--config``;
flags given on the command line win over the file.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 resource cap.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import CayleySolveError, ResourceCapError, derive_seed
from .diagnostics import hardness_experiment, single_block_scan
from .landscape import concentration_experiment, heatmap_experiment, instance_loss_map
from .optimize import (
    hill_climb,
    noisy_experiment,
    rotation_experiment,
    scaling_experiment,
)
from .plots import SchemaError, plot_table
from .puzzle import PuzzleInstance, build_instance
from .qsvt import QSPFitError, build_commuting_basis, check_cayley_equivalence
from .results import ResultTable, read_table

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CAP = 0, 2, 3, 4

DEFAULTS = {
    "generate": {"beta": 0.2, "k": None},
    "solve": {
        "sizes": [4, 6, 8, 10], "instances": 20, "starts": 1, "method": "both",
        "trials": 20, "beta": 0.2, "k": None, "loss": "fidelity",
    },
    "noisy-solve": {
        "sizes": [6, 8], "sigmas": [0.0, 0.005, 0.01, 0.02, 0.05, 0.1], "runs": 20,
        "beta": 0.2, "k": None, "loss": "fidelity", "margin": 1.0,
    },
    "landscape": {
        "n": 6, "D": None, "betas": [0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.4, 0.6],
        "instances": 6, "sizes": [6, 8, 10], "concentration_instances": 10, "beta": 0.2,
        "k": None, "loss": "fidelity",
    },
    "diagnose": {
        "sizes": [4, 6, 8], "beta": 0.2, "instances": 5, "scan_n": 8,
        "beta_grid": [round(0.1 * i, 1) for i in range(11)] + [1.5, 2.0],
        "scan_instances": 20, "k": None, "clifford_samples": 0,
    },
    "qsvt-verify": {"n": 2, "K": 2, "betas": [0.0, 0.5, 0.75, 2.0], "degrees": [2, 4, 10]},
    "largescale": {
        "rows": 4, "cols": 4, "D": 8, "sigma_rot1": 0.25, "sigma_rot2": 0.4, "L_V": 2,
        "instances": 10, "max_qubits": 24,
    },
    "plot": {},
}


class UsageError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--workers", type=int, default=None, help="worker processes (default 1)")
    common.add_argument("--out", default=None, help="output directory (default results)")
    common.add_argument("--config", default=None, help="JSON file with option values")

    p = argparse.ArgumentParser(prog="tpuzzle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a puzzle instance as JSON")
    g.add_argument("--n", type=int)
    g.add_argument("--D", type=int, help="number of hidden gates (default n)")
    g.add_argument("--beta", type=float, help="sets both rotation strengths")
    g.add_argument("--beta-w", type=float)
    g.add_argument("--beta-v", type=float)
    g.add_argument("--k", type=int, help="Pauli strings per Hermitian (default 4 n^2)")
    g.add_argument("--s-star", help="hidden bitstring override, e.g. 0110")

    s = sub.add_parser("solve", parents=[common], help="hill climbing and random-search scaling")
    s.add_argument("--instance", help="solve one stored instance instead of a size sweep")
    s.add_argument("--sizes", type=int, nargs="+")
    s.add_argument("--instances", type=int)
    s.add_argument("--starts", type=int)
    s.add_argument("--method", choices=["hill", "random", "both"])
    s.add_argument("--trials", type=int, help="random-search replays per instance")
    s.add_argument("--beta", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--loss", choices=["fidelity", "parity"])

    ns = sub.add_parser("noisy-solve", parents=[common], help="noisy hill climbing success rates")
    ns.add_argument("--sizes", type=int, nargs="+")
    ns.add_argument("--sigmas", type=float, nargs="+")
    ns.add_argument("--runs", type=int)
    ns.add_argument("--beta", type=float)
    ns.add_argument("--k", type=int)
    ns.add_argument("--loss", choices=["fidelity", "parity"])
    ns.add_argument("--margin", type=float, help="acceptance margin in units of sigma*sqrt(2/m)")

    ls = sub.add_parser("landscape", parents=[common], help="landscape classes and shell statistics")
    ls.add_argument("--n", type=int)
    ls.add_argument("--D", type=int)
    ls.add_argument("--betas", type=float, nargs="+")
    ls.add_argument("--instances", type=int)
    ls.add_argument("--sizes", type=int, nargs="*", help="sizes for shell statistics (none to skip)")
    ls.add_argument("--concentration-instances", type=int)
    ls.add_argument("--beta", type=float, help="beta for shell statistics")
    ls.add_argument("--k", type=int)
    ls.add_argument("--loss", choices=["fidelity", "parity"])
    ls.add_argument("--export-maps", action="store_true", help="also write binary loss maps")

    d = sub.add_parser("diagnose", parents=[common], help="entanglement and magic diagnostics")
    d.add_argument("--sizes", type=int, nargs="+")
    d.add_argument("--beta", type=float)
    d.add_argument("--instances", type=int)
    d.add_argument("--scan-n", type=int)
    d.add_argument("--beta-grid", type=float, nargs="+")
    d.add_argument("--scan-instances", type=int)
    d.add_argument("--k", type=int)
    d.add_argument("--clifford-samples", type=int)

    q = sub.add_parser("qsvt-verify", parents=[common], help="QSVT block vs dense Cayley transform")
    q.add_argument("--n", type=int)
    q.add_argument("--K", type=int)
    q.add_argument("--betas", type=float, nargs="+")
    q.add_argument("--degrees", type=int, nargs="+")
    q.add_argument("--rescale", action="store_true", help="use beta*sqrt(k)")

    lg = sub.add_parser("largescale", parents=[common], help="rotation-circuit hill climbing traces")
    lg.add_argument("--rows", type=int)
    lg.add_argument("--cols", type=int)
    lg.add_argument("--D", type=int)
    lg.add_argument("--sigma-rot1", type=float)
    lg.add_argument("--sigma-rot2", type=float)
    lg.add_argument("--L-V", dest="L_V", type=int)
    lg.add_argument("--instances", type=int)
    lg.add_argument("--max-qubits", type=int)
    lg.add_argument("--no-reference", action="store_true", help="skip the run without CZ layers")

    pl = sub.add_parser("plot", parents=[common], help="render CSV tables as SVG")
    pl.add_argument("inputs", nargs="+")
    return p


def _resolve(args: argparse.Namespace) -> dict:
    """Merge command-line flags over the JSON config over built-in defaults."""
    opts = dict(DEFAULTS[args.command])
    opts.update({"seed": 0, "workers": 1, "out": "results"})
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None and value is not False:
            opts[key] = value
        else:
            opts.setdefault(key, value)
    return opts


def _write(rows, path: Path, command: str, opts: dict, columns=None) -> Path:
    table = ResultTable.from_rows(rows, columns)
    config = {k: v for k, v in opts.items() if k not in ("workers", "out")}
    out = table.write(path, command, config, opts.get("seed"))
    print(f"wrote {out} ({len(rows)} rows)")
    return out


def cmd_generate(opts: dict) -> int:
    if opts.get("n") is None:
        raise UsageError("generate requires --n")
    n = int(opts["n"])
    beta = opts.get("beta")
    bw = opts.get("beta_w") if opts.get("beta_w") is not None else beta
    bv = opts.get("beta_v") if opts.get("beta_v") is not None else beta
    inst = build_instance(
        n, int(opts.get("D") or n), bw, bv, k=opts.get("k"), seed=int(opts["seed"]),
        s_star=opts.get("s_star"),
    )
    out = Path(opts["out"])
    path = out if out.suffix == ".json" else out / "instance.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    inst.save(path)
    print(f"wrote {path}")
    return EXIT_OK


def _trace_rows(tr, **extra) -> list[dict]:
    return [
        {**extra, "sweep": sw, "current_loss": loss, "f_evals_cumulative": cum, "bitstring_hex": hx}
        for sw, loss, cum, hx in tr.rows()
    ]


def cmd_solve(opts: dict) -> int:
    out = Path(opts["out"])
    if opts.get("instance"):
        inst = PuzzleInstance.load(opts["instance"])
        fn = inst.loss_fn(opts["loss"])
        rng = np.random.default_rng(derive_seed(opts["seed"], 1))
        runs, traces = [], []
        for r in range(int(opts["starts"])):
            s0 = tuple(int(b) for b in rng.integers(0, 2, size=inst.D))
            tr = hill_climb(fn, inst.D, s0).judged(inst.s_star)
            traces += _trace_rows(tr, run=r)
            runs.append({"run": r, "f_evals": tr.f_evals, "sweeps": tr.sweeps,
                         "termination": tr.termination, "final_loss": tr.loss_per_sweep[-1],
                         "success": tr.success})
        _write(runs, out / "runs.csv", "solve", opts)
        _write(traces, out / "trace.csv", "solve", opts)
        return EXIT_OK
    methods = ["hill", "random"] if opts["method"] == "both" else [opts["method"]]
    rows, runs = [], []
    for method in methods:
        rows += scaling_experiment(
            opts["sizes"], int(opts["instances"]), method=method, beta=float(opts["beta"]),
            k=opts.get("k"), seed=int(opts["seed"]), starts_per_instance=int(opts["starts"]),
            trials_per_instance=int(opts["trials"]), loss_kind=opts["loss"],
            workers=int(opts["workers"]), runs=runs,
        )
    _write(rows, out / "scaling.csv", "solve", opts)
    _write(runs, out / "runs.csv", "solve", opts)
    return EXIT_OK


def cmd_noisy_solve(opts: dict) -> int:
    runs: list[dict] = []
    rows = noisy_experiment(
        opts["sizes"], opts["sigmas"], int(opts["runs"]), beta=float(opts["beta"]),
        k=opts.get("k"), seed=int(opts["seed"]), loss_kind=opts["loss"],
        margin_factor=float(opts["margin"]), workers=int(opts["workers"]), runs=runs,
    )
    out = Path(opts["out"])
    _write(rows, out / "noisy.csv", "noisy-solve", opts)
    _write(runs, out / "noisy_runs.csv", "noisy-solve", opts)
    return EXIT_OK


def cmd_landscape(opts: dict) -> int:
    out = Path(opts["out"])
    n = int(opts["n"])
    D = int(opts.get("D") or n)
    rows = heatmap_experiment(
        n, D, opts["betas"], int(opts["instances"]), seed=int(opts["seed"]), k=opts.get("k"),
        loss_kind=opts["loss"], workers=int(opts["workers"]),
    )
    _write(rows, out / "heatmap.csv", "landscape", opts)
    if opts.get("sizes"):
        conc = concentration_experiment(
            opts["sizes"], float(opts["beta"]), int(opts["concentration_instances"]),
            seed=int(opts["seed"]), k=opts.get("k"), loss_kind=opts["loss"],
            workers=int(opts["workers"]),
        )
        _write(conc, out / "concentration.csv", "landscape", opts)
    if opts.get("export_maps"):
        maps = out / "maps"
        maps.mkdir(parents=True, exist_ok=True)
        for beta in opts["betas"]:
            for j in range(int(opts["instances"])):
                inst_seed = derive_seed(int(opts["seed"]), n, D, j)
                inst = build_instance(n, D, beta, beta, k=opts.get("k"), seed=inst_seed)
                name = f"n{n}_D{D}_beta{beta:g}_i{j}.f64"
                instance_loss_map(inst, opts["loss"]).save(
                    maps / name, instance=inst.to_dict(), loss=opts["loss"]
                )
        print(f"wrote loss maps under {maps}")
    return EXIT_OK


def cmd_diagnose(opts: dict) -> int:
    out = Path(opts["out"])
    rows = hardness_experiment(
        opts["sizes"], float(opts["beta"]), int(opts["instances"]), seed=int(opts["seed"]),
        k=opts.get("k"),
    )
    _write(rows, out / "hardness.csv", "diagnose", opts)
    scan = single_block_scan(
        int(opts["scan_n"]), opts["beta_grid"], int(opts["scan_instances"]), k=opts.get("k"),
        seed=int(opts["seed"]), clifford_samples=int(opts["clifford_samples"]),
    )
    _write(scan, out / "single_block.csv", "diagnose", opts)
    return EXIT_OK


def cmd_qsvt_verify(opts: dict) -> int:
    basis = build_commuting_basis(int(opts["n"]), int(opts["K"]), int(opts["seed"]))
    rows = []
    for beta in opts["betas"]:
        for d in opts["degrees"]:
            c = check_cayley_equivalence(basis, float(beta), int(d), rescale=bool(opts.get("rescale")))
            rows.append({
                "n": basis.n, "K": basis.K, "basis": " ".join(b.letters for b in basis.basis),
                "beta": c.beta, "beta_eff": c.beta_eff, "d": c.d, "deviation": c.deviation,
                "fit_error": c.fit_error, "pinned_error": c.pinned_error,
                "min_success_probability": c.min_success_probability,
                "unitarity_error": c.unitarity_error,
            })
    _write(rows, Path(opts["out"]) / "qsvt.csv", "qsvt-verify", opts)
    return EXIT_OK


def cmd_largescale(opts: dict) -> int:
    cz_options = (True,) if opts.get("no_reference") else (True, False)
    results = rotation_experiment(
        int(opts["rows"]), int(opts["cols"]), int(opts["D"]), float(opts["sigma_rot1"]),
        float(opts["sigma_rot2"]), int(opts["L_V"]), int(opts["instances"]),
        seed=int(opts["seed"]), cz_options=cz_options, max_qubits=int(opts["max_qubits"]),
        workers=int(opts["workers"]),
    )
    summary, traces = [], []
    per_cz: dict[bool, int] = {}
    for res in results:
        tr = res["trace"]
        j = per_cz.get(res["cz_enabled"], 0)
        per_cz[res["cz_enabled"]] = j + 1
        summary.append({
            "cz_enabled": res["cz_enabled"], "instance": j, "instance_seed": res["instance_seed"],
            "sweeps": tr.sweeps, "f_evals": tr.f_evals, "final_loss": tr.loss_per_sweep[-1],
            "success": tr.success, "within_D_sweeps": res["within_D_sweeps"],
        })
        traces += _trace_rows(tr, cz_enabled=res["cz_enabled"], instance=j)
    out = Path(opts["out"])
    _write(summary, out / "largescale.csv", "largescale", opts)
    _write(traces, out / "largescale_trace.csv", "largescale", opts)
    return EXIT_OK


def cmd_plot(opts: dict) -> int:
    out = Path(opts["out"])
    for name in opts["inputs"]:
        table = read_table(name)
        path = plot_table(table, out / (Path(name).stem + ".svg"))
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "noisy-solve": cmd_noisy_solve,
    "landscape": cmd_landscape,
    "diagnose": cmd_diagnose,
    "qsvt-verify": cmd_qsvt_verify,
    "largescale": cmd_largescale,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](_resolve(args))
    except ResourceCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (CayleySolveError, QSPFitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, SchemaError, ValueError, OSError, KeyError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

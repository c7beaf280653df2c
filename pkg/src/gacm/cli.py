"""Command-line pipeline: simulate | select | scb | bench.

File conventions: CSVs carry a leading ``# config: {...}`` comment with the
full run configuration and seed, so any output is reproducible from its own
header; JSON outputs embed the same under a ``config`` key.  The data schema
is a header row ``y,x1..xd,t1..tp`` with plain decimal numbers and no
missing-value tokens.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, replace

import numpy as np

from .bands import bootstrap_curves, build_band, scb_grid, sd_smoothed, sd_unsmoothed
from .design import Dataset, make_dataset
from .errors import GacmError
from .family import family_from_name
from .select import SelectConfig, select_model
from .simlab import BenchConfig, gen_example1, run_benchmark
from .twostep import choose_knots_bic, fit_initial, fit_second_step

__all__ = ["RunConfig", "main", "read_data_csv"]


class SchemaError(GacmError, ValueError):
    """An input file violates the documented schema."""


@dataclass(frozen=True)
class RunConfig:
    """Validated parameters of one CLI invocation; embedded in every output."""

    command: str
    data: str = ""
    out: str = "."
    family: str = "bernoulli-logit"
    q: int = 4
    c: float = 2.0
    nu: float = 0.5
    grid_size: int = 50
    grid_floor_ratio: float = 1e-3
    warm_start: bool = True
    alpha: float = 0.05
    boot: int = 200
    grid_points: int = 20
    seed: int = 0
    threads: int = 1
    n: int = 300
    p: int = 200
    reps: int = 100
    maf: float = 0.5
    block_rho: float = 0.3
    block_size: int = 10
    with_bands: bool = True

    def validate(self):
        if self.q < 2:
            raise ValueError("q must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.boot < 2:
            raise ValueError("boot must be >= 2")
        if self.grid_points < 1:
            raise ValueError("grid must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError("nu must be in [0, 1]")
        return self

    def select_config(self) -> SelectConfig:
        return SelectConfig(
            family=self.family,
            q=self.q,
            c=self.c,
            nu=self.nu,
            grid_size=self.grid_size,
            grid_floor_ratio=self.grid_floor_ratio,
            warm_start=self.warm_start,
        )


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _config_payload(config: RunConfig) -> dict:
    # The thread count is an execution resource, not part of the result:
    # outputs are identical for any value, and embedding it would break
    # byte-level reproducibility checks across thread settings.
    payload = asdict(config)
    payload.pop("threads", None)
    return payload


def _config_line(config: RunConfig) -> str:
    return "# config: " + json.dumps(_config_payload(config), sort_keys=True)


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, config: RunConfig, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_config_line(config) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_data_csv(path: str) -> Dataset:
    """Read a dataset CSV (header y,x1..xd,t1..tp); raises SchemaError on violations."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise SchemaError("empty data file")
    header = body[0].split(",")
    if header[0] != "y":
        raise SchemaError(f"first column must be 'y', got {header[0]!r}")
    d = 0
    idx = 1
    while idx < len(header) and header[idx] == f"x{d + 1}":
        d += 1
        idx += 1
    p = 0
    while idx < len(header) and header[idx] == f"t{p + 1}":
        p += 1
        idx += 1
    if idx != len(header):
        raise SchemaError(f"unexpected column {header[idx]!r}; expected y,x1..xd,t1..tp")
    if d == 0 or p == 0:
        raise SchemaError("need at least one x column and one t column")
    values = np.empty((len(body) - 1, len(header)))
    for i, ln in enumerate(body[1:]):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise SchemaError(f"row {i + 1} has {len(parts)} fields, expected {len(header)}")
        for j, token in enumerate(parts):
            token = token.strip()
            if token == "" or token.upper() in ("NA", "NAN", "NULL"):
                raise SchemaError(f"missing value in column {header[j]!r} at data row {i + 1}")
            try:
                values[i, j] = float(token)
            except ValueError:
                raise SchemaError(f"non-numeric value {token!r} in column {header[j]!r} at data row {i + 1}") from None
    y = values[:, 0]
    X = values[:, 1 : 1 + d]
    T = values[:, 1 + d :]
    return make_dataset(y, X, T)


def cmd_simulate(config: RunConfig) -> int:
    ds, truth = gen_example1(
        config.n,
        config.p,
        seed=config.seed,
        maf=config.maf,
        block_rho=config.block_rho,
        block_size=config.block_size,
    )
    os.makedirs(config.out, exist_ok=True)
    header = ["y"] + [f"x{k + 1}" for k in range(ds.d)] + [f"t{l + 1}" for l in range(ds.p)]
    rows = (
        [ds.y[i]] + list(ds.X[i]) + list(ds.T[i])
        for i in range(ds.n)
    )
    _write_csv(os.path.join(config.out, "data.csv"), config, header, rows)
    _write_json(
        os.path.join(config.out, "truth.json"),
        {"config": _config_payload(config), "truth": truth.to_dict()},
    )
    return 0


def cmd_select(config: RunConfig) -> int:
    ds = read_data_csv(config.data)
    result = select_model(ds, config.select_config())

    def path_payload(path):
        return {
            "lambda": [pt.lam for pt in path],
            "ebic": [pt.ebic for pt in path],
            "s_star": [pt.s_star for pt in path],
            "selected": [[int(l) + 1 for l in pt.selected] for pt in path],
        }

    payload = {
        "config": _config_payload(config),
        "i1": [int(l) + 1 for l in result.i1],
        "i1_names": [ds.t_names[l] for l in result.i1],
        "empty_selection": bool(result.empty_selection),
        "stage1": path_payload(result.stage1_path),
        "stage1_chosen_lambda": result.stage1_choice.lam,
        "stage1_selected": [int(l) + 1 for l in result.stage1_choice.selected],
        # 1/w is finite for every group (zero means excluded), so the JSON
        # stays standard-compliant.
        "inverse_weights": [float(v) for v in np.where(np.isfinite(result.weights), 1.0 / result.weights, 0.0)],
        "stage2": path_payload(result.stage2_path),
        "stage2_chosen_lambda": result.choice.lam if result.choice is not None else None,
        "knot_warnings": list(result.knot_warnings),
    }
    os.makedirs(config.out, exist_ok=True)
    _write_json(os.path.join(config.out, "selection.json"), payload)
    return 0


def cmd_scb(config: RunConfig) -> int:
    ds = read_data_csv(config.data)
    selection_path = os.path.join(config.out, "selection.json")
    if not os.path.exists(selection_path):
        raise SchemaError(f"selection.json not found in {config.out!r}; run 'gacm select' first")
    with open(selection_path, encoding="utf-8") as fh:
        selection = json.load(fh)
    i1 = tuple(int(l) - 1 for l in selection["i1"])
    if not i1:
        print("selection is empty; nothing to band", file=sys.stderr)
        return 0
    fam = family_from_name(config.family)
    init = fit_initial(ds, i1, fam, q=config.q, c=config.c)
    knots = [choose_knots_bic(ds, i1, init, k, config.q, fam) for k in range(ds.d)]
    grid = scb_grid(config.grid_points)
    run = bootstrap_curves(
        ds,
        i1,
        fam,
        knots,
        config.boot,
        grid,
        seed=config.seed,
        q=config.q,
        c=config.c,
        threads=config.threads,
    )
    os.makedirs(config.out, exist_ok=True)
    header = ["grid", "center", "sd", "lower", "upper"]
    for k in range(ds.d):
        step2 = fit_second_step(ds, i1, init, k, knots[k], fam)
        for l in i1:
            center_u = step2.curve(l, grid)
            band_u = build_band(grid, center_u, sd_unsmoothed(run, l, k), config.grid_points, config.alpha)
            center_s, sd_s = sd_smoothed(run, l, k)
            band_s = build_band(grid, center_s, sd_s, config.grid_points, config.alpha)
            for variant, band in (("unsmoothed", band_u), ("smoothed", band_s)):
                rows = zip(band.grid, band.center, band.sd, band.lower, band.upper)
                name = f"band_{l + 1}_{k + 1}_{variant}.csv"
                _write_csv(os.path.join(config.out, name), config, header, rows)
    return 0


def cmd_bench(config: RunConfig) -> int:
    bench = BenchConfig(
        reps=config.reps,
        n=config.n,
        p=config.p,
        B=config.boot,
        seed=config.seed,
        q=config.q,
        c=config.c,
        nu=config.nu,
        grid_size=config.grid_size,
        grid_floor_ratio=config.grid_floor_ratio,
        alpha=config.alpha,
        band_points=config.grid_points,
        threads=config.threads,
        with_bands=config.with_bands,
        maf=config.maf,
        block_rho=config.block_rho,
        block_size=config.block_size,
    )
    result = run_benchmark(bench)
    os.makedirs(config.out, exist_ok=True)
    t1_header = ["method", "C", "O", "I", "TP", "FP", "MR"]
    _write_csv(
        os.path.join(config.out, "table1.csv"),
        config,
        t1_header,
        ([row[h] if h == "method" else row[h] for h in t1_header] for row in result.table1),
    )
    t2_header = [
        "curve",
        "cov_unsmoothed",
        "sd_median_unsmoothed",
        "sd_mean_unsmoothed",
        "cov_smoothed",
        "sd_median_smoothed",
        "sd_mean_smoothed",
        "reps_covered",
    ]
    _write_csv(
        os.path.join(config.out, "table2.csv"),
        config,
        t2_header,
        ([row[h] for h in t2_header] for row in result.table2),
    )
    _write_json(
        os.path.join(config.out, "reps.json"),
        {"config": _config_payload(config), "per_rep": result.per_rep},
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gacm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--config", default=None, help="JSON file with tuning keys (q, c, nu, ...)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None, help="worker processes (default: $GACM_THREADS or 1)")
        p.add_argument("--family", default="bernoulli-logit")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--boot", type=int, default=200, metavar="B")
        p.add_argument("--grid", type=int, default=20, metavar="L_n", dest="grid_points")

    sim = sub.add_parser("simulate", help="write a synthetic benchmark dataset")
    common(sim)
    sim.add_argument("--n", type=int, default=300)
    sim.add_argument("--p", type=int, default=200)
    sim.add_argument("--maf", type=float, default=0.5)
    sim.add_argument("--rho", type=float, default=0.3, dest="block_rho")
    sim.add_argument("--block-size", type=int, default=10)

    sel = sub.add_parser("select", help="run the two-stage grouped selection")
    common(sel)
    sel.add_argument("--data", required=True)

    scb = sub.add_parser("scb", help="build simultaneous confidence bands for the selected model")
    common(scb)
    scb.add_argument("--data", required=True)

    bench = sub.add_parser("bench", help="run the replicated benchmark tables")
    common(bench)
    bench.add_argument("--reps", type=int, default=100)
    bench.add_argument("--n", type=int, default=300)
    bench.add_argument("--p", type=int, default=200)
    bench.add_argument("--maf", type=float, default=0.5)
    bench.add_argument("--rho", type=float, default=0.3, dest="block_rho")
    bench.add_argument("--block-size", type=int, default=10)
    bench.add_argument("--no-bands", action="store_true", help="skip the coverage table")
    return parser


def _resolve_threads(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("GACM_THREADS")
    return int(env) if env else 1


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    base = RunConfig(command=args.command)
    known = set(base.__dataclass_fields__)
    bad = sorted(set(overrides) - known)
    if bad:
        raise SchemaError(f"unknown config keys: {bad}")
    cfg = replace(base, **overrides)
    direct = {
        k: v
        for k, v in vars(args).items()
        if k in known and v is not None and k not in ("command", "config")
    }
    if getattr(args, "no_bands", False):
        direct["with_bands"] = False
    cfg = replace(cfg, command=args.command, **direct)
    cfg = replace(cfg, threads=_resolve_threads(args.threads))
    return cfg.validate()


def main(argv=None) -> int:
    from ._threads import pin_blas_single_thread

    pin_blas_single_thread()
    args = _build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        handler = {
            "simulate": cmd_simulate,
            "select": cmd_select,
            "scb": cmd_scb,
            "bench": cmd_bench,
        }[config.command]
        return handler(config)
    except SchemaError as exc:
        print(f"gacm: schema error: {exc}", file=sys.stderr)
        return 2
    except (GacmError, OSError, ValueError) as exc:
        print(f"gacm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: brwre-lab <env|trees|chi|simulate|pde|experiment>.

Every subcommand builds one request, sends it through LabClient (in-process
by default, --server for a remote instance), prints a JSON or CSV report to
stdout, and optionally persists data files under --out-dir.  Data files are
byte-reproducible for a fixed command line; timestamps and wall-clock live
in separate .meta.json files.

Exit codes: 0 on success or a passing report, 2 when an experiment fails
its gate or raises anomaly flags, 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .client import LabClient
from .errors import LabError, ParameterError


class CliUsageError(LabError):
    """Malformed command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); keep 2 for flags
        raise CliUsageError(message)


def _coords(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p != ""]
    except ValueError:
        raise ParameterError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p != ""]
    except ValueError:
        raise ParameterError(f"expected comma-separated reals, got {text!r}")


def _rho_token(text: str):
    if text.strip().lower() in ("inf", "infinity"):
        return "inf"
    try:
        return float(text)
    except ValueError:
        raise ParameterError(f"expected a real or 'inf', got {text!r}")


def _dist_spec(text: str) -> dict:
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"distribution spec is not valid JSON: {exc}")
    if not isinstance(spec, dict):
        raise ParameterError("distribution spec must be a JSON object")
    return spec


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path} is not valid JSON: {exc}")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(obj) -> None:
    sys.stdout.write(_dump_json(obj))


def _out_path(args, name: str) -> Optional[Path]:
    if args.out_dir is None:
        return None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _write_text(path: Optional[Path], text: str) -> None:
    if path is not None:
        path.write_text(text)


def _csv_text(fieldnames: Sequence[str], rows: Sequence[dict]) -> str:
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _threads(args, default: int = 1) -> int:
    return default if args.threads is None else args.threads


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--server", default=None, help="remote service URL")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--out-dir", default=None, help="directory for data files")

    parser = _Parser(prog="brwre-lab", description=__doc__.splitlines()[0])
    top = parser.add_subparsers(dest="group", required=True)

    env = top.add_parser("env", help="environment sampling and validation")
    env_sub = env.add_subparsers(dest="command", required=True)
    p = env_sub.add_parser("sample", parents=[common])
    p.add_argument("--dist0", required=True, type=_dist_spec, help="killing law JSON")
    p.add_argument("--dist2", required=True, type=_dist_spec, help="branching law JSON")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--R", type=int, default=3)
    p.add_argument("--boundary", choices=("periodic", "zero"), default="periodic")
    p.set_defaults(func=cmd_env_sample)
    p = env_sub.add_parser("validate", parents=[common])
    p.add_argument("--env", required=True, help="environment JSON file")
    p.set_defaults(func=cmd_env_validate)

    trees = top.add_parser("trees", help="skeleton tree enumeration")
    trees_sub = trees.add_subparsers(dest="command", required=True)
    p = trees_sub.add_parser("enum", parents=[common])
    p.add_argument("--k", required=True, type=int)
    p.add_argument("--numberings", action="store_true")
    p.set_defaults(func=cmd_trees_enum)

    chi = top.add_parser("chi", help="variational constant")
    chi_sub = chi.add_subparsers(dest="command", required=True)
    p = chi_sub.add_parser("solve", parents=[common])
    p.add_argument("--rho", required=True, type=_rho_token)
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--no-window-check", action="store_true")
    p.set_defaults(func=cmd_chi_solve)
    p = chi_sub.add_parser("table", parents=[common])
    p.add_argument("--rho-grid", required=True, help="comma list, 'inf' allowed")
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=8)
    p.set_defaults(func=cmd_chi_table)

    sim = top.add_parser("simulate", help="Monte Carlo moment estimators")
    sim_sub = sim.add_subparsers(dest="command", required=True)
    p = sim_sub.add_parser("direct", parents=[common])
    p.add_argument("--env", required=True)
    p.add_argument("--x", required=True, type=_coords)
    p.add_argument("--t", required=True, type=float)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--samples", required=True, type=int)
    p.add_argument("--cap", type=int, default=None)
    p.add_argument("--y", type=_coords, default=None)
    p.add_argument("--kappa", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate_direct)
    p = sim_sub.add_parser("fk", parents=[common])
    p.add_argument("--env", required=True)
    p.add_argument("--x", required=True, type=_coords)
    p.add_argument("--t", required=True, type=float)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--samples", required=True, type=int)
    p.add_argument("--y", type=_coords, default=None)
    p.add_argument("--warped-sampler", action="store_true")
    p.add_argument("--warp-a", type=float, default=None)
    p.add_argument("--kappa", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate_fk)

    pde = top.add_parser("pde", help="finite-box moment equations")
    pde_sub = pde.add_subparsers(dest="command", required=True)
    p = pde_sub.add_parser("solve", parents=[common])
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--times", type=_floats, default=None)
    p.add_argument(
        "--init", choices=("localized", "delocalized"), default="delocalized"
    )
    p.add_argument("--y", type=_coords, default=None)
    p.add_argument("--method", choices=("expm", "rk4"), default=None)
    p.add_argument("--kappa", type=float, default=1.0)
    p.set_defaults(func=cmd_pde_solve)

    exp = top.add_parser("experiment", help="experiment orchestration")
    exp_sub = exp.add_subparsers(dest="command", required=True)
    p = exp_sub.add_parser("run", parents=[common])
    p.add_argument("--config", required=True, help="ExperimentConfig JSON file")
    p.set_defaults(func=cmd_experiment_run)

    serve = top.add_parser("serve", help="run the HTTP service", parents=[common])
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)

    return parser


def cmd_env_sample(client: LabClient, args) -> int:
    env = client.env_sample(
        {
            "dist0": args.dist0,
            "dist2": args.dist2,
            "d": args.d,
            "R": args.R,
            "boundary": args.boundary,
            "seed": _seed(args),
        }
    )
    _emit(env)
    _write_text(_out_path(args, "environment.json"), _dump_json(env))
    return 0


def cmd_env_validate(client: LabClient, args) -> int:
    report = client.env_validate(_load_json(args.env))
    _emit({"nsites": report["nsites"], "max_abs_xi": report["max_abs_xi"]})
    return 0


def cmd_trees_enum(client: LabClient, args) -> int:
    report = client.trees_enum(args.k, numberings=True)
    for item in report["trees"]:
        line = f"{item['encoding']}\t{item['numbering_count']}"
        if args.numberings:
            line += "\t" + ";".join(json.dumps(nb) for nb in item["numberings"])
        sys.stdout.write(line + "\n")
    sys.stdout.write(
        f"trees={report['count']} catalan={report['catalan']} "
        f"numberings_total={report['total_numberings']}\n"
    )
    _write_text(_out_path(args, f"trees_k{args.k}.json"), _dump_json(report))
    return 0


def cmd_chi_solve(client: LabClient, args) -> int:
    report = client.chi_solve(
        {
            "rho": args.rho,
            "window": args.window,
            "tol": args.tol,
            "restarts": args.restarts,
            "seed": _seed(args),
            "window_check": not args.no_window_check,
        }
    )
    _emit(report)
    _write_text(_out_path(args, "chi_solve.json"), _dump_json(report))
    return 0


def cmd_chi_table(client: LabClient, args) -> int:
    grid = [_rho_token(tok) for tok in args.rho_grid.split(",") if tok != ""]
    report = client.chi_table(
        {
            "rho_grid": grid,
            "window": args.window,
            "tol": args.tol,
            "restarts": args.restarts,
            "seed": _seed(args),
        }
    )
    fields = ["rho", "chi", "window", "iterations", "status", "drift_at_wider_window"]
    text = _csv_text(fields, report["rows"])
    sys.stdout.write(text)
    _write_text(_out_path(args, "chi_table.csv"), text)
    return 0


def cmd_simulate_direct(client: LabClient, args) -> int:
    report = client.simulate_direct(
        {
            "env": _load_json(args.env),
            "x": args.x,
            "t": args.t,
            "n": args.n,
            "samples": args.samples,
            "seed": _seed(args),
            "kappa": args.kappa,
            "cap": args.cap,
            "y": args.y,
            "threads": _threads(args),
        }
    )
    _emit(report)
    _write_text(_out_path(args, "simulate_direct.json"), _dump_json(report))
    return 0


def cmd_simulate_fk(client: LabClient, args) -> int:
    warp_a = args.warp_a
    if warp_a is None and args.warped_sampler:
        warp_a = 0.5
    report = client.simulate_fk(
        {
            "env": _load_json(args.env),
            "x": args.x,
            "t": args.t,
            "n": args.n,
            "samples": args.samples,
            "seed": _seed(args),
            "kappa": args.kappa,
            "y": args.y,
            "warp_a": warp_a,
            "threads": _threads(args),
        }
    )
    _emit(report)
    _write_text(_out_path(args, "simulate_fk.json"), _dump_json(report))
    return 0


def _pde_csv(report: dict) -> str:
    d = len(report["sites"][0])
    fields = ["time", *(f"x{i + 1}" for i in range(d)), "value"]
    rows = []
    for ti, t in enumerate(report["times"]):
        for si, site in enumerate(report["sites"]):
            row = {"time": t, "value": report["values"][ti][si]}
            row.update({f"x{i + 1}": c for i, c in enumerate(site)})
            rows.append(row)
    return _csv_text(fields, rows)


def cmd_pde_solve(client: LabClient, args) -> int:
    if (args.t is None) == (args.times is None):
        raise CliUsageError("provide exactly one of --t or --times")
    times = args.times if args.times is not None else [args.t]
    report = client.pde_solve(
        {
            "env": _load_json(args.env),
            "n": args.n,
            "times": times,
            "init": args.init,
            "y": args.y,
            "method": args.method,
            "kappa": args.kappa,
        }
    )
    csv_text = _pde_csv(report)
    summary = {
        "order": report["order"],
        "init": report["init"],
        "method": report["method"],
        "summary": report["summary"],
    }
    if args.out_dir is None:
        sys.stdout.write(csv_text)
    else:
        _write_text(_out_path(args, "pde_solution.csv"), csv_text)
        _write_text(_out_path(args, "pde_summary.json"), _dump_json(summary))
        _emit(summary)
    return 0


def cmd_experiment_run(client: LabClient, args) -> int:
    config = _load_json(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.threads is not None:
        config["threads"] = args.threads
    result = client.run_experiment(config)
    meta = result.pop("meta", {})
    kind = result["kind"]
    _write_text(_out_path(args, f"experiment_{kind}.json"), _dump_json(result))
    if result["records"]:
        fields = list(result["records"][0].keys())
        _write_text(
            _out_path(args, f"experiment_{kind}_records.csv"),
            _csv_text(fields, result["records"]),
        )
    _write_text(_out_path(args, f"experiment_{kind}.meta.json"), _dump_json(meta))
    _emit(
        {
            "kind": kind,
            "passed": result["passed"],
            "flags": result["flags"],
            "summary": result["summary"],
        }
    )
    if result["passed"] is False or result["flags"]:
        return 2
    return 0


def cmd_serve(client: LabClient, args) -> int:
    try:
        import uvicorn
    except ImportError:
        raise ParameterError(
            "serving requires uvicorn; install the 'server' extra"
        )
    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.func is cmd_serve:
            return cmd_serve(None, args)
        with LabClient(server=args.server) as client:
            return args.func(client, args)
    except LabError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands ``filter``, ``multi``, ``simulate`` and ``rerun``.  Settings are
resolved as built-in defaults, then the ``--config`` JSON file, then flags
given on the command line.  Exit status: 0 success, 2 input error, 3
numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import __version__
from .errors import InputError, NumericalError
from .filter import GENERATORS, run_filter
from .io import RunManifest, file_digest, ingest_csv
from .multi import consensus_select, run_multi, write_heatmap
from .rng import SeededStream, stream_id_for

log = logging.getLogger("mixknock")

FILTER_DEFAULTS = {"q": 0.2, "generator": "sequential", "seed": 0, "alpha": 0.5,
                   "out_dir": "mixknock_out", "threads": 1, "schema": None}
MULTI_DEFAULTS = {**FILTER_DEFAULTS, "B": 1000, "plot": False, "order": "by-frequency"}
SIM_DEFAULTS = {"out_dir": "mixknock_sim", "threads": 1, "plot": False, "record_runtime": False}


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except ValueError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None


def bundled_config(name: str) -> dict:
    """Load ``configs/<name>.json`` shipped with the package."""
    res = resources.files("mixknock") / "configs" / f"{name}.json"
    if not res.is_file():
        raise InputError(f"no bundled config named {name!r}; see 'mixknock simulate --list'")
    return json.loads(res.read_text())


def bundled_names() -> list[str]:
    root = resources.files("mixknock") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve(defaults: dict, args: argparse.Namespace) -> dict:
    cfg = dict(defaults)
    given = {k: v for k, v in vars(args).items() if k not in ("cmd", "config", "func", "verbose")}
    if getattr(args, "config", None):
        file_cfg = _load_json(args.config)
        unknown = set(file_cfg) - set(defaults) - {"input", "response"}
        if unknown:
            raise InputError(f"unknown keys in {args.config}: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(given)
    return cfg


def _check_filter_cfg(cfg: dict, multi: bool) -> None:
    if not cfg.get("input"):
        raise InputError("missing --input (path to a CSV file)")
    if not cfg.get("response"):
        raise InputError("missing --response (name of the response column)")
    if cfg["generator"] not in GENERATORS:
        raise InputError(f"--generator must be one of {GENERATORS}")
    if not 0.0 < float(cfg["q"]) < 1.0:
        raise InputError("--q must lie in (0, 1)")
    if not 0.0 <= float(cfg["alpha"]) <= 1.0:
        raise InputError("--alpha must lie in [0, 1]")
    if int(cfg["seed"]) < 0:
        raise InputError("--seed must be non-negative")
    if multi and int(cfg["B"]) < 1:
        raise InputError("--B must be at least 1")
    if not Path(cfg["input"]).is_file():
        raise InputError(f"--input {cfg['input']!r} does not exist")


def _finish(command: str, cfg: dict, seed: int, inputs: dict, out: Path, outputs: list, t0: float,
            started: str) -> None:
    RunManifest(command, cfg, seed, inputs, timing={"started": started,
                                                    "elapsed_s": round(time.time() - t0, 3)},
                outputs=sorted(outputs)).write(out / "manifest.json")


def cmd_filter(cfg: dict) -> int:
    _check_filter_cfg(cfg, multi=False)
    t0, started = time.time(), datetime.now(timezone.utc).isoformat()
    X, y, report = ingest_csv(cfg["input"], cfg["response"], cfg.get("schema"))
    stream = SeededStream(int(cfg["seed"]), stream_id_for(0, 0))
    res = run_filter(X, y, float(cfg["q"]), cfg["generator"], stream, float(cfg["alpha"]))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    doc = res.to_dict(X.names)
    doc["variables"] = X.names
    doc["ingest"] = report.to_dict()
    _dump(doc, out / "selection.json")
    _finish("filter", cfg, int(cfg["seed"]), {cfg["input"]: file_digest(cfg["input"])}, out,
            ["selection.json"], t0, started)
    print(f"selected {len(res.selected)} of {X.p}: {', '.join(X.names[j] for j in res.selected)}")
    return 0


def cmd_multi(cfg: dict) -> int:
    _check_filter_cfg(cfg, multi=True)
    t0, started = time.time(), datetime.now(timezone.utc).isoformat()
    X, y, report = ingest_csv(cfg["input"], cfg["response"], cfg.get("schema"))
    mat = run_multi(X, y, float(cfg["q"]), int(cfg["B"]), cfg["generator"], int(cfg["seed"]),
                    alpha=float(cfg["alpha"]), threads=int(cfg["threads"]))
    cons = consensus_select(mat)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    doc = cons.to_dict(X.names)
    doc.update({"variables": X.names, "B": mat.B, "q": float(cfg["q"]),
                "failed_draws": [int(b) for b in mat.failed.nonzero()[0]],
                "ingest": report.to_dict()})
    _dump(doc, out / "consensus.json")
    side = write_heatmap(mat, out / "heatmap.csv", cfg["order"])
    outputs = ["consensus.json", "heatmap.csv", side.name]
    if cfg["plot"]:
        from .plots import heatmap_svg
        heatmap_svg(mat, out / "heatmap.svg", cfg["order"])
        outputs.append("heatmap.svg")
    _finish("multi", cfg, int(cfg["seed"]), {cfg["input"]: file_digest(cfg["input"])}, out,
            outputs, t0, started)
    print(f"consensus selected {len(cons.selected)} of {X.p} (r_hat={cons.r_hat}): "
          f"{', '.join(X.names[j] for j in cons.selected)}")
    return 0


def _sim_grid(cfg: dict):
    from .sim import expand_grid
    spec = json.loads(json.dumps(cfg["grid"]))
    base = spec.setdefault("base", {})
    for key in ("n_sim", "master_seed", "methods", "B"):
        if cfg.get(key) is not None:
            base[key] = cfg[key]
    return expand_grid(spec)


def cmd_simulate(cfg: dict) -> int:
    from .sim import run_campaign, summarize, write_curves, write_records, write_sidecar
    if not cfg.get("grid"):
        raise InputError("missing --config (a bundled config name or a JSON grid file)")
    t0, started = time.time(), datetime.now(timezone.utc).isoformat()
    grid = _sim_grid(cfg)

    def progress(done, total):
        log.info("replicate %d/%d done", done, total)

    records = run_campaign(grid, threads=int(cfg["threads"]), progress=progress)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.csv", bool(cfg["record_runtime"]))
    write_sidecar(records, grid, out / "records.json")
    summary = summarize(records, grid)
    write_curves(summary, out / "curves.csv")
    outputs = ["records.csv", "records.json", "curves.csv"]
    if cfg["plot"]:
        from .plots import curves_svg
        curves_svg(summary, out / "fdr.svg", "mean_fdp", grid[0].q)
        curves_svg(summary, out / "power.svg", "mean_tpp")
        outputs += ["fdr.svg", "power.svg"]
    seed = grid[0].master_seed
    _finish("simulate", cfg, seed, {}, out, outputs, t0, started)
    for row in summary:
        print(f"{row['method']:>13} a={row['a']:<4} {row['cov_kind']:>14} rho={row['rho']:<4} "
              f"FDP={row['mean_fdp']:.3f}±{row['se_fdp']:.3f} TPP={row['mean_tpp']:.3f}")
    return 0


def _sim_cfg(args: argparse.Namespace) -> dict:
    cfg = dict(SIM_DEFAULTS)
    if args.config:
        p = Path(args.config)
        cfg["grid"] = _load_json(p) if p.suffix == ".json" or p.exists() else bundled_config(args.config)
    for key in ("out_dir", "threads", "plot", "record_runtime"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    cfg["n_sim"] = args.n_sim
    cfg["master_seed"] = args.seed
    cfg["methods"] = args.methods.split(",") if args.methods else None
    cfg["B"] = args.B
    return cfg


COMMANDS = {"filter": cmd_filter, "multi": cmd_multi, "simulate": cmd_simulate}


def cmd_rerun(args: argparse.Namespace) -> int:
    man = RunManifest.read(args.manifest)
    if man.command not in COMMANDS:
        raise InputError(f"manifest names unknown command {man.command!r}")
    cfg = dict(man.config)
    for path, digest in man.input_digests.items():
        if not Path(path).is_file() or file_digest(path) != digest:
            raise InputError(f"input {path!r} is missing or changed since the original run")
    if args.out_dir is not None:
        cfg["out_dir"] = args.out_dir
    if args.threads is not None:
        cfg["threads"] = args.threads
    return COMMANDS[man.command](cfg)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixknock", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="cmd", required=True)
    S = argparse.SUPPRESS

    def filter_flags(p, multi):
        p.add_argument("--input", default=S, help="CSV file with a header row")
        p.add_argument("--response", default=S, help="name of the response column")
        p.add_argument("--q", type=float, default=S, help="target FDR (default 0.2)")
        p.add_argument("--generator", choices=GENERATORS, default=S,
                       help="knockoff generator (default sequential)")
        p.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
        p.add_argument("--alpha", type=float, default=S, help="elastic-net mixing (default 0.5)")
        p.add_argument("--out-dir", dest="out_dir", default=S, help="output directory")
        p.add_argument("--config", default=None, help="JSON file of settings; flags take precedence")
        p.add_argument("--threads", type=int, default=S, help="worker processes (default 1)")
        if multi:
            p.add_argument("--B", type=int, default=S, help="knockoff draws (default 1000)")
            p.add_argument("--plot", action="store_true", default=S, help="also write heatmap.svg")
            p.add_argument("--order", choices=("by-frequency", "input"), default=S,
                           help="variable order in the heatmap")

    filter_flags(sub.add_parser("filter", help="single knockoff filter run", parents=[common]), False)
    filter_flags(sub.add_parser("multi", help="multiple knockoffs with consensus selection", parents=[common]), True)

    p = sub.add_parser("simulate", help="simulation campaign", parents=[common])
    p.add_argument("--config", help="bundled config name or path to a JSON grid")
    p.add_argument("--list", action="store_true", help="list bundled configs and exit")
    p.add_argument("--n-sim", dest="n_sim", type=int, default=None, help="override replicate count")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument("--methods", default=None, help="comma-separated method list override")
    p.add_argument("--B", type=int, default=None, help="override knockoff draws for multi methods")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--plot", action="store_true", default=None, help="write fdr.svg and power.svg")
    p.add_argument("--record-runtime", dest="record_runtime", action="store_true", default=None,
                   help="fill the runtime_ms column (makes output run-dependent)")

    p = sub.add_parser("rerun", help="repeat a run from its manifest.json", parents=[common])
    p.add_argument("manifest")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--threads", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "filter":
            return cmd_filter(_resolve(FILTER_DEFAULTS, args))
        if args.cmd == "multi":
            return cmd_multi(_resolve(MULTI_DEFAULTS, args))
        if args.cmd == "simulate":
            if args.list:
                print("\n".join(bundled_names()))
                return 0
            return cmd_simulate(_sim_cfg(args))
        return cmd_rerun(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

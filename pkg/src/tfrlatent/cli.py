"""Command-line entry point ``tfrlatent``.

Subcommands
-----------
simulate   config -> catalog CSV and truth JSON
fit        catalog + model -> chain CSV, chain sidecar and summary JSON
debias     catalog + forward/inverse summaries -> corrected widths, history, summary
anchor     forward + inverse summaries -> anchor JSON
plotdata   chain CSV -> corner / trace / tfr-overlay CSV bundles

Exit codes: 0 success, 2 configuration or input error, 3 non-convergence,
4 degenerate result. Every command also writes ``provenance_<command>.json``
holding the resolved configuration, seed, package version and wall time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from tfrlatent import __version__
from tfrlatent.bias import DegenerateAnchor, FitSummary, unbiased_anchor
from tfrlatent.catalog import Catalog, CatalogFormatError
from tfrlatent.config import ConfigError, RunConfig, load_config
from tfrlatent.debias import moment_shift_fit
from tfrlatent.fitting import fit
from tfrlatent.likelihood import ModelKind
from tfrlatent.plotdata import ChainTable, write_corner, write_trace, write_tfr_overlay
from tfrlatent.simulate import simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_DEGENERATE = 4

log = logging.getLogger("tfrlatent")


class InputError(Exception):
    """Bad command-line input; maps to exit code 2."""


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def _resolve_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    if path is None:
        cfg = RunConfig()
    elif str(path).endswith(".json"):
        # A provenance record from an earlier run.
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg = RunConfig.from_dict({k: v for k, v in json.loads(p.read_text())["config"].items()
                                   if k != "source"}, source=str(p))
    else:
        cfg = load_config(path)
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
    if getattr(args, "threads", None) is not None:
        cfg.threads = int(args.threads)
    if getattr(args, "output_dir", None) is not None:
        cfg.output_dir = str(args.output_dir)
    RunConfig.__post_init__(cfg)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _provenance(out: Path, command: str, cfg: RunConfig, t0: float, argv, inputs, outputs):
    return _write_json(out / f"provenance_{command}.json", {
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": __version__,
        "wall_time_s": time.perf_counter() - t0,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
    })


def _read_catalog(path) -> Catalog:
    return Catalog.read_csv(path)


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON: {exc}") from None


def _fit_summary(data: dict) -> FitSummary:
    try:
        return FitSummary.from_dict(data.get("fit_summary", data))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"not a fit summary: {exc}") from None


def _point(data: dict) -> dict[str, float]:
    if "percentiles" in data:
        return {k: float(v[1]) for k, v in data["percentiles"].items()}
    fs = _fit_summary(data)
    return {"beta": fs.beta_hat, "gamma": fs.gamma_hat}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    mock = simulate(cfg.simulate.sim_config(cfg.seed), threads=cfg.threads)
    cat_path = out / "catalog.csv"
    mock.catalog.write_csv(cat_path)
    truth = _write_json(out / "truth.json", {
        "truth": mock.truth.as_dict(),
        "n_records": len(mock),
        "pre_selection_count": mock.pre_selection_count,
        "selection": {"kind": cfg.simulate.selection, "m_l": cfg.simulate.m_l},
        "seed": cfg.seed,
    })
    log.info("simulated %d records (%d before selection)", len(mock), mock.pre_selection_count)
    _provenance(out, "simulate", cfg, t0, args.argv, [cfg.source or "<defaults>"],
                [cat_path, truth])
    return EXIT_OK


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    kind = ModelKind.parse(args.model or cfg.fit.model)
    cfg.fit.model = kind.value
    if args.grid_nodes is not None:
        cfg.fit.grid_nodes = int(args.grid_nodes)
    fcfg = cfg.fit.fit_config(kind.value, cfg.seed, cfg.threads)
    cfg.fit.grid_nodes = fcfg.n_nodes
    catalog = _read_catalog(args.catalog)
    out = _out_dir(cfg)
    result = fit(catalog, fcfg, cfg.simulate.selection_spec())
    stem = f"{kind.value}"
    chain_csv, chain_json = out / f"chain_{stem}.csv", out / f"chain_{stem}.json"
    result.chain.write(chain_csv, chain_json)
    summary = _write_json(out / f"summary_{stem}.json", result.summary_dict())
    _provenance(out, f"fit_{stem}", cfg, t0, args.argv, [args.catalog],
                [chain_csv, chain_json, summary])
    if not result.converged:
        log.warning("chain did not converge within %d steps", fcfg.max_steps)
        if not args.allow_nonconverged:
            return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_debias(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    if args.sigma_m is not None:
        cfg.debias.sigma_m_user = float(args.sigma_m)
    if not cfg.debias.sigma_m_user >= 0:
        raise InputError("sigma_m must be >= 0")
    if args.grid_nodes is not None:
        cfg.fit.grid_nodes = int(args.grid_nodes)
    fwd = _point(_read_json(args.forward))
    missing = {"v_star", "alpha"} - set(fwd)
    if missing:
        raise InputError(f"forward summary lacks {sorted(missing)}")
    inv_data = _read_json(args.inverse)
    inv = _point(inv_data)
    catalog = _read_catalog(args.catalog)
    out = _out_dir(cfg)
    fcfg = cfg.fit.fit_config("inverse", cfg.seed, cfg.threads)
    summary, state = moment_shift_fit(
        catalog, cfg.debias.sigma_m_user, fwd, inv, fcfg, cfg.simulate.selection_spec(),
        tolerance=cfg.debias.tolerance, max_iterations=cfg.debias.max_iterations)
    widths = out / "corrected_widths.csv"
    catalog.with_widths(state.corrected_widths).write_csv(widths)
    hist = out / "debias_history.csv"
    state.write_history(hist)
    final = _write_json(out / "debias_summary.json",
                        {"fit_summary": summary.to_dict(), "state": state.to_dict()})
    _provenance(out, "debias", cfg, t0, args.argv, [args.catalog, args.forward, args.inverse],
                [widths, hist, final])
    if not state.converged and not args.allow_nonconverged:
        log.warning("moment shifting stopped without converging: %s", state.status)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_anchor(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    fwd = _fit_summary(_read_json(args.forward))
    inv = _fit_summary(_read_json(args.inverse))
    truth = tuple(args.truth) if args.truth else None
    out = _out_dir(cfg)
    try:
        anchor = unbiased_anchor(fwd, inv, truth)
    except DegenerateAnchor as exc:
        log.error("degenerate anchor: %s", exc)
        return EXIT_DEGENERATE
    path = _write_json(out / "anchor.json", anchor.to_dict())
    _provenance(out, "anchor", cfg, t0, args.argv, [args.forward, args.inverse], [path])
    return EXIT_OK


def cmd_plotdata(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    if not Path(args.chain).is_file():
        raise InputError(f"chain file not found: {args.chain}")
    table = ChainTable.read(args.chain)
    out = _out_dir(cfg)
    inputs = [args.chain]
    if args.kind == "corner":
        paths = write_corner(table, out, bins=args.bins)
    elif args.kind == "trace":
        paths = write_trace(table, out)
    else:
        if args.catalog is None:
            raise InputError("tfr-overlay needs --catalog")
        paths = write_tfr_overlay(table, _read_catalog(args.catalog), out)
        inputs.append(args.catalog)
    _provenance(out, f"plotdata_{args.kind}", cfg, t0, args.argv, inputs, paths)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", required=config_required,
                   help="TOML run configuration (or a provenance JSON)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("-o", "--output-dir", dest="output_dir", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfrlatent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a mock catalog")
    p.add_argument("config_path", metavar="CONFIG", help="TOML run configuration")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="sample the posterior of a model")
    p.add_argument("catalog")
    p.add_argument("--model", help="forward, inverse or dual")
    p.add_argument("--grid-nodes", type=int, help="inclination lattice size (power of two)")
    p.add_argument("--allow-nonconverged", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("debias", help="moment-shifting correction of an inverse fit")
    p.add_argument("catalog")
    p.add_argument("--forward", required=True, help="forward-fit summary JSON")
    p.add_argument("--inverse", required=True, help="inverse-fit summary JSON")
    p.add_argument("--sigma-m", type=float, help="assumed log-mass scatter")
    p.add_argument("--grid-nodes", type=int)
    p.add_argument("--allow-nonconverged", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_debias)

    p = sub.add_parser("anchor", help="crossing point of forward and inverse fits")
    p.add_argument("forward")
    p.add_argument("inverse")
    p.add_argument("--truth", type=float, nargs=2, metavar=("BETA", "GAMMA"))
    _common(p)
    p.set_defaults(func=cmd_anchor)

    p = sub.add_parser("plotdata", help="CSV data behind diagnostic plots")
    p.add_argument("chain", help="chain CSV written by 'fit'")
    p.add_argument("--kind", required=True, choices=["corner", "trace", "tfr-overlay"])
    p.add_argument("--catalog", help="catalog CSV (tfr-overlay)")
    p.add_argument("--bins", type=int, default=40)
    _common(p)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.argv = argv
    if args.command == "simulate":
        args.config = args.config or args.config_path
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, CatalogFormatError, FileNotFoundError) as exc:
        print(f"tfrlatent {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"tfrlatent {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

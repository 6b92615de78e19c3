"""Command-line pipeline: ``fom``, ``rom``, ``train``, ``plot`` and ``reproduce``."""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as C
from . import fem, rom
from . import trainer as T
from .analytic import WaveProblem
from .plotting import read_aggregate, render_svg

logger = logging.getLogger("wavesurrogate")

SCALED_REPETITIONS, SCALED_EPOCHS = 3, 2000
FULL_REPETITIONS, FULL_EPOCHS = 30, 20000
ROM_SIZES = (4, 8, 12)


class CommandError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def _check_writable(path: Path, force: bool):
    if path.exists() and not force:
        raise CommandError("exists", f"{path} exists; pass --force to overwrite")


def _problem() -> WaveProblem:
    return WaveProblem()


# --------------------------------------------------------------------------
# commands

def cmd_fom(cfg: C.ExperimentConfig, force: bool = False) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fom.wvsn"
    report = out / "fom_report.txt"
    _check_writable(path, force)
    problem = _problem()
    disc = fem.assemble(cfg.fem_nodes, cfg.fem_steps, problem)
    grid = fem.solve_fom(disc, problem)
    mse = fem.fom_mse(grid, problem)
    fem.write_snapshots(path, grid)
    report.write_text(f"fem_nodes = {cfg.fem_nodes}\nfem_steps = {cfg.fem_steps}\nmse_fom = {mse:.17g}\n")
    print(f"wrote {path} ({grid.values.shape[0]} x {grid.values.shape[1]}), MSE(u_FOM) = {mse:.6e}")
    return {"path": path, "mse": mse}


def _disc_for(shape, problem):
    n_steps, n_nodes = shape
    return fem.assemble(n_nodes, n_steps, problem)


def cmd_rom(cfg: C.ExperimentConfig, n, force: bool = False):
    """Build ``rom_n{n}.wvrm`` for one size, or for each size of a sequence from a single SVD."""
    sizes = [n] if np.isscalar(n) else list(n)
    out = Path(cfg.output_dir)
    snap = out / "fom.wvsn"
    if not snap.exists():
        raise CommandError("io", f"{snap} not found; run 'fom' first")
    for k in sizes:
        _check_writable(out / f"rom_n{k}.wvrm", force)
    problem = _problem()
    fom_grid = fem.read_snapshots(snap)
    disc = _disc_for(fom_grid.values.shape, problem)
    pod = rom.PODBasis(n_components=max(sizes)).fit(fom_grid.values[:, 1:-1])
    results = []
    for k in sizes:
        path = out / f"rom_n{k}.wvrm"
        model = rom.pod_basis(fom_grid, k, disc, pod)
        rom_grid = rom.solve_rom(model, disc, problem)
        cert = rom.certify(rom_grid, fom_grid, 1.0)
        mse = fem.fom_mse(rom_grid, problem)
        rom.write_rom(path, model, cert.epsilon)
        (out / f"rom_n{k}_report.txt").write_text(
            f"rom_size = {k}\nmse_rom = {mse:.17g}\nmax_epsilon = {cert.epsilon.max():.17g}\n"
            f"certificate_length = {cert.epsilon.size}\n")
        print(f"wrote {path}: n = {k}, MSE(u_ROM) = {mse:.6e}, max epsilon = {cert.epsilon.max():.6e}")
        results.append({"path": path, "mse": mse, "epsilon": cert.epsilon})
    return results[0] if np.isscalar(n) else results


def load_surrogate(path, problem: WaveProblem, safety: float = 1.0) -> rom.CertifiedSurrogate:
    if safety < 1.0:
        raise CommandError("config", f"safety_factor must be >= 1, got {safety}")
    model = rom.read_rom(path)
    disc = fem.assemble(model.n_interior + 2, model.epsilon.size, problem)
    grid = rom.solve_rom(model, disc, problem)
    return rom.CertifiedSurrogate(grid, safety * model.epsilon)


def run_config_from(cfg: C.ExperimentConfig) -> T.RunConfig:
    return T.RunConfig(experiment=cfg.experiment, weighting=cfg.weighting, rom_size=cfg.rom_size,
                       epochs=cfg.epochs, seed=cfg.seed, repetitions=cfg.repetitions,
                       validation_grid=cfg.validation_grid, learning_rate=cfg.learning_rate,
                       n_interior=cfg.n_interior, n_boundary=cfg.n_boundary, n_data_t=cfg.n_data_t,
                       n_data_xi=cfg.n_data_xi, log_stride=cfg.log_stride,
                       opt_reference=cfg.opt_reference)


def run_tag(cfg: C.ExperimentConfig) -> str:
    tag = f"{cfg.experiment}_{cfg.weighting}"
    if cfg.experiment in ("rom_data", "rom_data_es"):
        tag += f"_n{cfg.rom_size}"
    return tag


def cmd_train(cfg: C.ExperimentConfig, force: bool = False, workers: Optional[int] = None) -> dict:
    try:
        run_cfg = run_config_from(cfg)
    except ValueError as exc:
        raise CommandError("config", str(exc)) from None
    if run_cfg.uses_rom and cfg.safety_factor < 1.0:
        raise CommandError("config", f"safety_factor must be >= 1, got {cfg.safety_factor}")
    out = Path(cfg.output_dir)
    run_dir = out / "runs" / run_tag(cfg)
    if run_dir.exists() and any(run_dir.iterdir()) and not force:
        raise CommandError("exists", f"{run_dir} already holds results; pass --force to overwrite")
    problem = _problem()
    surrogate = None
    if run_cfg.uses_rom:
        rom_path = out / f"rom_n{cfg.rom_size}.wvrm"
        if not rom_path.exists():
            raise CommandError("io", f"{rom_path} not found; run 'rom' for n = {cfg.rom_size} first")
        surrogate = load_surrogate(rom_path, problem, cfg.safety_factor)
    run_dir.mkdir(parents=True, exist_ok=True)
    records = T.run_repetitions(run_cfg, problem, surrogate, workers)
    paths = []
    for k, record in enumerate(records):
        p = run_dir / f"run_{k:03d}.csv"
        record.write_csv(p)
        paths.append(p)
    agg = T.aggregate(records)
    agg_path = run_dir / "aggregate.csv"
    agg.write_csv(agg_path)
    final = agg.median[-1] if agg.median.size else float("nan")
    print(f"{run_tag(cfg)}: {len(records)} runs, final median validation MSE {final:.6e}, "
          f"{agg.n_diverged} diverged -> {agg_path}")
    return {"runs": paths, "aggregate": agg_path, "records": records, "summary": agg}


def cmd_plot(aggregates: Sequence, references: Sequence[tuple] = (), output=None,
             labels: Optional[Sequence[str]] = None, column: str = "mean", title: str = "",
             dashed: Optional[Sequence[bool]] = None) -> Path:
    if not aggregates:
        raise CommandError("input", "plot needs at least one aggregate CSV")
    curves = []
    for k, path in enumerate(aggregates):
        try:
            curve = read_aggregate(path, column)
        except FileNotFoundError:
            raise CommandError("io", f"{path} not found") from None
        except ValueError as exc:
            raise CommandError("input", str(exc)) from None
        if labels is not None:
            curve.label = labels[k]
        if dashed is not None:
            curve.dashed = dashed[k]
        curves.append(curve)
    svg = render_svg(curves, references, title=title)
    output = Path(output if output is not None else "plot.svg")
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(svg)
    print(f"wrote {output} ({len(curves)} curves, {len(references)} reference lines)")
    return output


def cmd_reproduce(figure: str, cfg: C.ExperimentConfig, force: bool = False,
                  workers: Optional[int] = None, config_path=None) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    if config_path is not None:
        artifacts.append(Path(config_path))
    aggregates, labels, dashed, refs = [], [], [], []

    def train(**kw):
        res = cmd_train(replace(cfg, **kw), force=force, workers=workers)
        aggregates.append(res["aggregate"])
        artifacts.extend(res["runs"])
        artifacts.append(res["aggregate"])
        return res

    if figure in ("baseline", "exact"):
        experiment = "baseline" if figure == "baseline" else "exact_data"
        for w in ("EQUAL", "LRA", "OPT"):
            train(experiment=experiment, weighting=w)
            labels.append(w)
            dashed.append(False)
    elif figure == "rom":
        fom_path = out / "fom.wvsn"
        if fom_path.exists() and not force:
            fom_mse = fem.fom_mse(fem.read_snapshots(fom_path), _problem())
        else:
            fom_mse = cmd_fom(cfg, force=True)["mse"]
        artifacts.append(fom_path)
        refs.append(("FOM", fom_mse))
        for n, res in zip(ROM_SIZES, cmd_rom(cfg, ROM_SIZES, force=True)):
            artifacts.append(res["path"])
            refs.append((f"ROM_{n}", res["mse"]))
        train(experiment="exact_data", weighting="OPT")
        labels.append("exact data")
        dashed.append(False)
        for n in ROM_SIZES:
            train(experiment="rom_data", weighting="OPT", rom_size=n)
            labels.append(f"dp_{n}")
            dashed.append(False)
            train(experiment="rom_data_es", weighting="OPT", rom_size=n)
            labels.append(f"es-dp_{n}")
            dashed.append(True)
    else:
        raise CommandError("config", f"unknown figure {figure!r}; expected baseline, exact or rom")
    svg = cmd_plot(aggregates, refs, out / f"fig_{figure}.svg", labels, title=f"reproduce {figure}",
                   dashed=dashed)
    artifacts.append(svg)
    manifest = out / f"manifest_{figure}.txt"
    lines = [f"figure = {figure}"] + [f"{k} = {C._format_default(v)}" for k, v in cfg.items()]
    for path in artifacts:
        lines.append(f"artifact {path} {git_blob_hash(path)}")
    manifest.write_text("\n".join(lines) + "\n")
    print(f"wrote {manifest}")
    return {"svg": svg, "manifest": manifest, "aggregates": aggregates, "references": refs}


# --------------------------------------------------------------------------
# argument handling

def _parse_reference(text: str):
    if "=" not in text:
        raise CommandError("input", f"reference {text!r} must look like LABEL=VALUE")
    label, value = text.split("=", 1)
    try:
        return label, float(value)
    except ValueError:
        raise CommandError("input", f"reference {text!r}: value is not a number") from None


def build_parser() -> argparse.ArgumentParser:
    epilog = C.describe_keys() + "\n\nenvironment: WAVESURROGATE_THREADS caps the number of worker processes"
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--paper-scale", action="store_true",
                        help="reproduce: 30 repetitions x 20000 epochs instead of 3 x 2000")
    common.add_argument("--seed", type=int, help="override the configured base seed")
    common.add_argument("--output-dir", help="override the configured output directory")
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="wavesurrogate", description=__doc__, epilog=epilog,
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fom", parents=[common], epilog=epilog, formatter_class=fmt,
                   help="solve the full-order model and write fom.wvsn")
    p = sub.add_parser("rom", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="build a certified ROM from fom.wvsn")
    p.add_argument("--n", type=int, action="append", help="reduced size (repeatable; default rom_size)")
    sub.add_parser("train", parents=[common], epilog=epilog, formatter_class=fmt,
                   help="train the configured experiment")
    p = sub.add_parser("plot", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="plot aggregate CSVs as SVG")
    p.add_argument("aggregates", nargs="+", help="aggregate.csv files")
    p.add_argument("--ref", action="append", default=[], metavar="LABEL=VALUE",
                   help="horizontal reference level (repeatable)")
    p.add_argument("--label", action="append", help="curve label (repeatable, in order)")
    p.add_argument("--column", default="mean", choices=("mean", "median", "geomean"))
    p.add_argument("-o", "--output", help="SVG path (default: <output_dir>/plot.svg)")
    p = sub.add_parser("reproduce", parents=[common], epilog=epilog, formatter_class=fmt,
                       help="run the full pipeline for one figure")
    p.add_argument("figure", choices=("baseline", "exact", "rom"))
    return parser


def _load(args) -> C.ExperimentConfig:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise CommandError("io", f"cannot read config {args.config}: {exc.strerror}") from None
    try:
        cfg = C.parse_config(text)
    except C.ConfigError as exc:
        raise CommandError("config", f"{args.config}: {exc}") from None
    cfg = cfg.with_overrides(seed=args.seed, output_dir=args.output_dir)
    if args.command == "reproduce":
        explicit = C.explicit_keys(text)
        reps, epochs = ((FULL_REPETITIONS, FULL_EPOCHS) if args.paper_scale
                        else (SCALED_REPETITIONS, SCALED_EPOCHS))
        if "repetitions" not in explicit:
            cfg = replace(cfg, repetitions=reps)
        if "epochs" not in explicit:
            cfg = replace(cfg, epochs=epochs)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "fom":
            cmd_fom(cfg, args.force)
        elif args.command == "rom":
            cmd_rom(cfg, args.n or [cfg.rom_size], args.force)
        elif args.command == "train":
            cmd_train(cfg, args.force)
        elif args.command == "plot":
            refs = [_parse_reference(r) for r in args.ref]
            output = args.output or Path(cfg.output_dir) / "plot.svg"
            if Path(output).exists() and not args.force:
                raise CommandError("exists", f"{output} exists; pass --force to overwrite")
            cmd_plot(args.aggregates, refs, output, args.label, args.column)
        elif args.command == "reproduce":
            cmd_reproduce(args.figure, cfg, args.force, config_path=args.config)
    except CommandError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2 if exc.category == "config" else 1
    except rom.RankError as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

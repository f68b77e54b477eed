# py_canopy_strata/main.py
#!/usr/bin/env python3
"""
CLI entry point for *py‑canopy‑strata*.

Examples
--------
Simulate a three‑tier stand and scan it::

    py-canopy-strata simulate --tiers 16 16 16 --seed 3 --out data/stand.csv

Stratify it and print the layer table::

    py-canopy-strata stratify data/stand.csv --labels-dir out/ --stats-out out/layers.json

Run a density sweep on 23 synthetic plots and write the report::

    py-canopy-strata sweep --synthetic 23 --seed 1 --out-dir out/sweep

Every subcommand also takes ``--config NAME`` (a JSON file, looked up as
given or under ``presets/``); flags on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import asdict, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from . import config
from .core import Extent, PlotGeometry, PointCloud, clip_circle, plot_centers, point_density
from .decimate import DecimationSpec, decimate, decimation_metadata
from .dem import normalize_with_ground
from .errors import CanopyError, EmptyInputError, InvalidArgumentError
from .evaluate import evaluate_plot
from .export import (
    export_ascii_grid,
    write_crowns,
    write_fractions,
    write_json,
    write_layer_labels,
    write_model,
    write_point_cloud,
    write_stand,
    write_truth,
)
from .occlusion import (
    LogSeriesModel,
    eupcd,
    fit_theta,
    fractions_from_results,
    layer_densities,
    required_density_table,
)
from .parse import (
    read_crowns,
    read_fractions,
    read_json,
    read_model,
    read_point_cloud,
    read_scan_config,
    read_stem_map,
    sidecar_path,
)
from .report import REPORT_FORMATS, render_table, report
from .segment import SEGMENTERS, get_segmenter, segment_cloud
from .simulate import (
    ScanConfig,
    Terrain,
    generate_stand,
    simulate_scan,
    stand_field_stems,
)
from .stratify import layer_summary, stratify
from .sweep import SweepConfig, SweepPlot, density_sweep, fit_site, synthetic_plots

_LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MALFORMED = 3

_SCAN_FLAGS = (
    "pulse_density",
    "max_returns",
    "scan_half_angle",
    "attenuation",
    "ground_reflect",
    "seed",
)


# ---------------------------------------------------------------------------#
# Argument parsing                                                           #
# ---------------------------------------------------------------------------#


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c",
        "--config",
        help="Name or path of a JSON config file (omit .json if desired).",
    )
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="Debug logging."
    )
    common.add_argument("-q", "--quiet", action="store_true", help="Warnings only.")
    return common


def _build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="py-canopy-strata",
        description="Canopy layers, occlusion and segmentation accuracy from forest LiDAR.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def _add(name: str, help_: str, func: Callable[[argparse.Namespace], int]) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        subs[name] = p
        return p

    # -- simulate ----------------------------------------------------------
    p = _add("simulate", "Generate a synthetic stand and scan it.", _cmd_simulate)
    p.add_argument("--out", type=Path, help="Point CSV to write (sidecar alongside).")
    p.add_argument("--extent", type=float, nargs=4, metavar=("MINX", "MINY", "MAXX", "MAXY"))
    p.add_argument("--tiers", type=int, nargs="+", help="Stem count per tier, tier 1 first.")
    p.add_argument("--seed", type=int)
    p.add_argument("--terrain", choices=["flat", "ramp"])
    p.add_argument("--slope", type=float, help="Ramp slope (m/m along x).")
    p.add_argument("--scan-config", type=Path, help="Scan config JSON.")
    p.add_argument("--pulse-density", type=float)
    p.add_argument("--max-returns", type=int)
    p.add_argument("--scan-half-angle", type=float)
    p.add_argument("--attenuation", type=float)
    p.add_argument("--ground-reflect", type=float)
    p.add_argument("--stand-out", type=Path, help="Stand JSON to write.")
    p.add_argument("--truth-out", type=Path, help="Per-point truth CSV to write.")
    p.add_argument("--stems-out", type=Path, help="Stem map CSV to write.")

    # -- dem ---------------------------------------------------------------
    p = _add("dem", "Build a DEM from ground returns and normalize heights.", _cmd_dem)
    p.add_argument("input", nargs="?", type=Path)
    p.add_argument("--resolution", type=float)
    p.add_argument("--grid-out", type=Path, help="DEM text grid to write.")
    p.add_argument("--out", type=Path, help="Height-normalized point CSV to write.")

    # -- stratify ----------------------------------------------------------
    p = _add("stratify", "Peel canopy layers off one or more plots.", _cmd_stratify)
    p.add_argument("inputs", nargs="*", type=Path)
    p.add_argument("--labels-dir", type=Path, help="Write <plot>_layers.csv here.")
    p.add_argument("--stats-out", type=Path, help="Layer statistics JSON.")
    p.add_argument("--fractions-out", type=Path, help="Layer fractions CSV.")

    # -- decimate ----------------------------------------------------------
    p = _add("decimate", "Thin a cloud to a target density.", _cmd_decimate)
    p.add_argument("input", nargs="?", type=Path)
    p.add_argument("--target-pcd", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)

    # -- fit ---------------------------------------------------------------
    p = _add("fit", "Fit the log-series occlusion model to layer fractions.", _cmd_fit)
    p.add_argument("--fractions", type=Path)
    p.add_argument("--out", type=Path, help="Model JSON to write.")

    # -- required-density --------------------------------------------------
    p = _add(
        "required-density", "Density needed to reach lower layers.", _cmd_required_density
    )
    p.add_argument("--theta", type=float)
    p.add_argument("--model", type=Path, help="Model JSON (instead of --theta).")
    p.add_argument("--pcd-min", type=float)
    p.add_argument("--layers", type=int, help="Deepest layer to report.")
    p.add_argument("--source-pcd", type=float, help="Density for the EUPCD figure.")
    p.add_argument("--out", type=Path)

    # -- segment -----------------------------------------------------------
    p = _add("segment", "Segment crowns layer by layer.", _cmd_segment)
    p.add_argument("input", nargs="?", type=Path)
    p.add_argument("--segmenter", choices=sorted(SEGMENTERS))
    p.add_argument("--min-separation", type=float)
    p.add_argument("--cell-width", type=float)
    p.add_argument("--out", type=Path, help="Crown CSV to write.")

    # -- evaluate ----------------------------------------------------------
    p = _add("evaluate", "Score crowns against a stem map.", _cmd_evaluate)
    p.add_argument("--crowns", type=Path)
    p.add_argument("--stems", type=Path)
    p.add_argument("--plot-id")
    p.add_argument("--center", type=float, nargs=2, metavar=("X", "Y"))
    p.add_argument("--radius", type=float)
    p.add_argument("--buffer", type=float)
    p.add_argument("--exclude-dead", action="store_true", default=None)
    p.add_argument("--out", type=Path, help="Result JSON to write.")

    # -- sweep -------------------------------------------------------------
    p = _add("sweep", "Accuracy versus point density.", _cmd_sweep)
    p.add_argument("--clouds", type=Path, nargs="*", help="Height-normalized plot CSVs.")
    p.add_argument("--stems", type=Path, help="Stem map covering every plot.")
    p.add_argument("--synthetic", type=int, help="Simulate this many plots instead.")
    p.add_argument("--targets", type=float, nargs="+")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-class-split", dest="class_split", action="store_false", default=None)
    p.add_argument("--exclude-dead", action="store_true", default=None)
    p.add_argument("--segmenter", choices=sorted(SEGMENTERS))
    p.add_argument("--attenuation", type=float, help="Synthetic scans only.")
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--no-progress", dest="progress", action="store_false", default=None)

    # -- report ------------------------------------------------------------
    p = _add("report", "Write the sweep report from a job table.", _cmd_report)
    p.add_argument("--jobs", type=Path, help="Job table written by sweep.")
    p.add_argument("--model", type=Path)
    p.add_argument("--source-pcd", type=float)
    p.add_argument("--format", nargs="+", choices=list(REPORT_FORMATS))
    p.add_argument("--out-dir", type=Path)

    # -- sample ------------------------------------------------------------
    p = _add("sample", "Cut circular plots out of a large cloud.", _cmd_sample)
    p.add_argument("input", nargs="?", type=Path)
    p.add_argument("--spacing", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--out-dir", type=Path)

    return parser, subs


# ---------------------------------------------------------------------------#
# Config files                                                               #
# ---------------------------------------------------------------------------#


def _find_preset(ref: str, preset_dir: str | Path | None = None) -> Path:
    """
    Locate the run configuration named by ``--config``.

    *ref* is tried as written, then with ``.json`` appended, then as a
    preset name under *preset_dir* (``sweep`` → ``presets/sweep.json``).

    Raises
    ------
    FileNotFoundError
        Naming every location tried.
    """
    if not ref.strip():
        raise InvalidArgumentError("--config needs a preset name or a path")
    preset_dir = config.PRESET_DIR if preset_dir is None else Path(preset_dir)
    given = Path(ref)
    stem = given if given.suffix.lower() == ".json" else given.with_name(f"{given.name}.json")
    tried = [given, stem, preset_dir / stem.name]
    for candidate in tried:
        if candidate.is_file():
            _LOG.debug("Run configuration %r → %s", ref, candidate)
            return candidate
    raise FileNotFoundError(
        f"No run configuration {ref!r}; looked for " + ", ".join(str(p) for p in dict.fromkeys(tried))
    )


def _load_config(path: Path) -> dict[str, Any]:
    """Load ``path`` as JSON, repairing a trailing comma with a warning.

    Raises
    ------
    InvalidArgumentError
        With the line and column of any other syntax error.
    """
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        fixed = re.sub(r",(\s*[}\]])", r"\1", text)
        try:
            doc = json.loads(fixed)
        except json.JSONDecodeError:
            raise InvalidArgumentError(
                f"Invalid JSON in config {path} at line {e.lineno}, column {e.colno}: {e.msg}"
            ) from e
        _LOG.warning(
            "Removed trailing comma in %s at line %s column %s", path, e.lineno, e.colno
        )
    if not isinstance(doc, dict):
        raise InvalidArgumentError(f"Config {path} must hold a JSON object")
    return doc


def _apply_config(sub: argparse.ArgumentParser, doc: dict[str, Any]) -> None:
    """Use *doc* as the subcommand's defaults so explicit flags still win."""
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(doc) - known)
    if unknown:
        _LOG.warning("Ignoring unknown config keys %s", unknown)
    values: dict[str, Any] = {}
    for action in sub._actions:
        if action.dest not in doc:
            continue
        value = doc[action.dest]
        if action.type is Path and value is not None:
            value = [Path(v) for v in value] if isinstance(value, list) else Path(value)
        values[action.dest] = value
    sub.set_defaults(**values)


# ---------------------------------------------------------------------------#
# Logging                                                                    #
# ---------------------------------------------------------------------------#


def _configure_logging(verbosity: int, quiet: bool = False) -> None:
    level = logging.INFO
    if verbosity >= 1:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING

    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ---------------------------------------------------------------------------#
# Helpers                                                                    #
# ---------------------------------------------------------------------------#


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, [])]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise InvalidArgumentError(f"{args.command}: missing {flags}")


def _opt(value: Any, default: Any) -> Any:
    return default if value is None else value


def _load_cloud(path: Path) -> PointCloud:
    """Read a cloud and height‑normalize it from its own ground returns if needed."""
    cloud = read_point_cloud(path)
    if not cloud.has_heights:
        if not cloud.points["is_ground"].any():
            raise EmptyInputError(f"{path} has no heights and no ground returns to build a DEM")
        cloud, _ = normalize_with_ground(cloud)
    return cloud


def _echo(frame: pd.DataFrame) -> None:
    print(render_table(frame))


# ---------------------------------------------------------------------------#
# Subcommands                                                                #
# ---------------------------------------------------------------------------#


def _cmd_simulate(args: argparse.Namespace) -> int:
    _require(args, "out")
    extent = Extent(*_opt(args.extent, [0.0, 0.0, 40.0, 40.0]))
    terrain = Terrain(_opt(args.terrain, "flat"), _opt(args.slope, 0.0))
    seed = _opt(args.seed, 0)
    base = read_scan_config(args.scan_config) if args.scan_config else ScanConfig(seed=seed)
    overrides = {
        name: getattr(args, name)
        for name in _SCAN_FLAGS
        if getattr(args, name) is not None
    }
    scan_cfg = replace(base, **overrides)

    stand = generate_stand(extent, _opt(args.tiers, [5, 5, 5]), seed, terrain=terrain)
    scan = simulate_scan(stand, scan_cfg)
    cx = (extent.minx + extent.maxx) / 2.0
    cy = (extent.miny + extent.maxy) / 2.0
    write_point_cloud(
        scan.cloud,
        args.out,
        {"plot_center": [cx, cy], "n_pulses": scan.n_pulses, "scan": asdict(scan_cfg)},
    )
    if args.stand_out:
        write_stand(stand, args.stand_out)
    if args.truth_out:
        write_truth(scan.truth, args.truth_out)
    if args.stems_out:
        stems = stand_field_stems(stand)
        pd.DataFrame(
            {
                "plot_id": args.out.stem,
                "stem_id": [s.stem_id for s in stems],
                "x": [s.x for s in stems],
                "y": [s.y for s in stems],
                "height_m": [s.height for s in stems],
                "dbh_cm": [s.dbh for s in stems],
                "crown_class": [s.crown_class for s in stems],
                "species": [s.species for s in stems],
            }
        ).to_csv(args.stems_out, index=False, float_format="%.3f")
    return EXIT_OK


def _cmd_dem(args: argparse.Namespace) -> int:
    _require(args, "input")
    normalized, dem = normalize_with_ground(read_point_cloud(args.input), args.resolution)
    if args.grid_out:
        export_ascii_grid(dem, args.grid_out)
    if args.out:
        write_point_cloud(normalized, args.out, include_index=True, include_heights=True)
    return EXIT_OK


def _cmd_stratify(args: argparse.Namespace) -> int:
    _require(args, "inputs")
    results = []
    pcds = []
    for path in args.inputs:
        cloud = _load_cloud(path)
        result = stratify(cloud)
        results.append(result)
        pcds.append(point_density(cloud))
        if args.labels_dir:
            write_layer_labels(result, Path(args.labels_dir) / f"{path.stem}_layers.csv")

    summary = layer_summary(results)
    _echo(summary)
    print(f"\nplots: {len(results)}   mean layers per plot: {summary.attrs['mean_layers']:.2f}")
    if args.stats_out:
        write_json(
            {
                "n_plots": summary.attrs["n_plots"],
                "mean_layers": summary.attrs["mean_layers"],
                "layers": summary.to_dict(orient="records"),
            },
            args.stats_out,
        )
    if args.fractions_out:
        write_fractions(
            fractions_from_results(results, pcds, [p.stem for p in args.inputs]),
            args.fractions_out,
        )
    return EXIT_OK


def _cmd_decimate(args: argparse.Namespace) -> int:
    _require(args, "input", "target_pcd", "out")
    cloud = read_point_cloud(args.input)
    spec = DecimationSpec(args.target_pcd, _opt(args.seed, 0))
    thinned = decimate(cloud, spec)
    write_point_cloud(
        thinned,
        args.out,
        decimation_metadata(spec, thinned),
        include_index=True,
        include_heights=True,
    )
    return EXIT_OK


def _cmd_fit(args: argparse.Namespace) -> int:
    _require(args, "fractions")
    model = fit_theta(read_fractions(args.fractions))
    _echo(
        pd.DataFrame(
            {
                "": ["theta", "fit_mse", "n_samples"],
                "fitted": [model.theta, model.fit_mse, model.n_samples],
                "paper_reported": [config.PUBLISHED_THETA, config.PUBLISHED_FIT_MSE, np.nan],
            }
        )
    )
    if args.out:
        write_model(model, args.out)
    return EXIT_OK


def _cmd_required_density(args: argparse.Namespace) -> int:
    if args.model:
        model = read_model(args.model)
    else:
        model = LogSeriesModel(_opt(args.theta, config.PUBLISHED_THETA))
    n_layers = _opt(args.layers, 3)
    p = model.fractions(max(n_layers, 2))
    table = required_density_table(p, args.pcd_min, range(1, n_layers + 1))
    _echo(table)
    doc: dict[str, Any] = {"theta": model.theta, "required_pcd": table.to_dict(orient="records")}
    if args.source_pcd is not None:
        value = eupcd(args.source_pcd, float(p[0]), float(p[1]))
        print(
            f"\nEUPCD at {args.source_pcd:.2f} pt/m²: {value:.2f} pt/m² "
            f"(published {config.PUBLISHED_EUPCD})"
        )
        doc["eupcd"] = {
            "source_pcd": args.source_pcd,
            "layer_densities": layer_densities(args.source_pcd, p, 2).tolist(),
            "eupcd": value,
            "paper_reported": config.PUBLISHED_EUPCD,
        }
    if args.out:
        write_json(doc, args.out)
    return EXIT_OK


def _cmd_segment(args: argparse.Namespace) -> int:
    _require(args, "input", "out")
    cloud = _load_cloud(args.input)
    segmenter = get_segmenter(args.segmenter)
    if args.min_separation is not None or args.cell_width is not None:
        segmenter = partial(
            segmenter, min_separation=args.min_separation, cell_width=args.cell_width
        )
    crowns = segment_cloud(cloud, segmenter)
    write_crowns(crowns, args.out)
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    _require(args, "crowns", "stems", "center")
    center = (float(args.center[0]), float(args.center[1]))
    stem_map = read_stem_map(args.stems, {str(args.plot_id): center} if args.plot_id else None)
    if args.plot_id is None:
        if len(stem_map) != 1:
            raise InvalidArgumentError(
                f"Stem map holds {len(stem_map)} plots; choose one with --plot-id"
            )
        stems = next(iter(stem_map.values()))
    else:
        stems = stem_map.get(str(args.plot_id), [])
    plot = PlotGeometry(
        center, _opt(args.radius, config.PLOT_RADIUS), _opt(args.buffer, config.BUFFER_WIDTH)
    )
    doc = evaluate_plot(read_crowns(args.crowns), stems, plot, include_dead=not args.exclude_dead)
    _echo(pd.DataFrame([{k: v for k, v in doc.items() if k != "by_class"}]))
    if args.out:
        write_json(doc, args.out)
    return EXIT_OK


def _sweep_plots_from_files(args: argparse.Namespace) -> list[SweepPlot]:
    _require(args, "stems")
    stem_map = read_stem_map(args.stems)
    plots = []
    for path in args.clouds:
        meta = read_json(sidecar_path(path), "Point cloud metadata")
        cloud = _load_cloud(path)
        ext = cloud.extent
        center = meta.get("plot_center", [(ext.minx + ext.maxx) / 2, (ext.miny + ext.maxy) / 2])
        geometry = PlotGeometry(
            (float(center[0]), float(center[1])),
            float(meta.get("plot_radius", config.PLOT_RADIUS)),
            float(meta.get("buffer_width", config.BUFFER_WIDTH)),
        )
        stems = [s for s in stem_map.get(path.stem, []) if geometry.in_plot([(s.x, s.y)])[0]]
        if not stems:
            _LOG.warning("No stems for plot %s inside its radius", path.stem)
        plots.append(SweepPlot(path.stem, cloud, stems, geometry))
    return plots


def _cmd_sweep(args: argparse.Namespace) -> int:
    _require(args, "out_dir")
    seed = _opt(args.seed, 0)
    if args.synthetic:
        scan = ScanConfig(attenuation=_opt(args.attenuation, config.ATTENUATION))
        plots = synthetic_plots(args.synthetic, seed, scan=scan)
    elif args.clouds:
        plots = _sweep_plots_from_files(args)
    else:
        raise InvalidArgumentError("sweep: give --clouds with --stems, or --synthetic N")

    cfg = SweepConfig(
        pcd_targets=tuple(_opt(args.targets, config.SWEEP_TARGETS)),
        repetitions=_opt(args.repetitions, config.SWEEP_REPETITIONS),
        seed=seed,
        class_split=_opt(args.class_split, True),
        include_dead=not args.exclude_dead,
        segmenter=_opt(args.segmenter, config.DEFAULT_SEGMENTER),
    )
    table = density_sweep(plots, cfg, progress=_opt(args.progress, True))
    model, source_pcd = fit_site(plots)
    write_model(model, Path(args.out_dir) / "model.json")
    written = report(table, args.out_dir, model=model, source_pcd=source_pcd)
    _echo(pd.read_csv(written[0]))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    _require(args, "jobs", "out_dir")
    try:
        table = pd.read_csv(args.jobs, dtype={"plot_id": str})
    except FileNotFoundError as e:
        raise FileNotFoundError(f"Job table not found: {args.jobs}") from e
    model = read_model(args.model) if args.model else None
    report(
        table,
        args.out_dir,
        _opt(args.format, REPORT_FORMATS),
        model=model,
        source_pcd=args.source_pcd,
    )
    return EXIT_OK


def _cmd_sample(args: argparse.Namespace) -> int:
    _require(args, "input", "out_dir")
    cloud = read_point_cloud(args.input)
    radius = _opt(args.radius, 15.0)
    centers = plot_centers(cloud.extent, _opt(args.spacing, 40.0), radius)
    for k, center in enumerate(centers):
        plot = clip_circle(cloud, center, radius)
        write_point_cloud(
            plot,
            Path(args.out_dir) / f"plot_{k:04d}.csv",
            {"plot_center": list(center), "plot_radius": radius},
            include_index=True,
            include_heights=True,
        )
    _LOG.info("Cut %d plots of radius %.1f m", len(centers), radius)
    return EXIT_OK


# ---------------------------------------------------------------------------#
# Main                                                                       #
# ---------------------------------------------------------------------------#


def main(argv: list[str] | None = None) -> int:
    # Phase 1: only --config, -v and -q, wherever they appear
    pre = _common()
    pre_args, _ = pre.parse_known_args(argv)
    _configure_logging(pre_args.verbose, pre_args.quiet)

    parser, subs = _build_parser()
    try:
        if pre_args.config:
            command, _ = parser.parse_known_args(argv)
            doc = _load_config(_find_preset(pre_args.config))
            _apply_config(subs[command.command], doc)
        args = parser.parse_args(argv)
        return args.func(args)
    except CanopyError as e:
        _LOG.error("%s", e)
        return e.exit_code
    except OSError as e:
        _LOG.error("%s", e)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())

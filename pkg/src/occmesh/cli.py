"""Command line driver: scene in, mesh and JSON report out.

Exit codes: 0 success, 1 mesh produced but validation thresholds failed,
2 configuration or file errors, 3 internal contract violations.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .baseline import StageConfig, marching_cubes, run_stage
from .dualize import InternalContractError
from .fields import load_scene
from .grid import GridSpec
from .mesh import count_self_intersections, validate_manifold
from .meshio import MeshParseError, export_obj, export_ply, import_obj
from .metrics import Report, metric_fit, metric_hdd, metric_md2, metric_nic
from .pipeline import ConfigurationError, ContourOptions, EvalCounter
from .search import LineBudget, SearchBudget

SCHEMA_VERSION = "1.0.0"


def report_schema_version():
    """Constant per release; embedded in every report."""
    return SCHEMA_VERSION


_ONE_D_ALIASES = {
    "midpoint": "midpoint",
    "linear": "linear-interp",
    "linear-interp": "linear-interp",
    "binary": "binary-search",
    "binary-search": "binary-search",
}
_NORMAL_ALIASES = {
    "fd": "fd-gradient",
    "fd-gradient": "fd-gradient",
    "2d": "two-d-points",
    "two-d-points": "two-d-points",
}


@dataclass
class RunConfig:
    """Fully serialized into the report for reproducibility."""

    scene: str
    resolution: int = 64
    method: str = "odc"
    out: str | None = None
    report: str | None = None
    gt: str | None = None
    iters_1d: int = 15
    step1_linear: int = 4
    step1_binary: int = 11
    step1_range: float = 0.8
    step2_linear: int = 3
    step2_binary: int = 12
    step2_range: float = math.sqrt(2.0) / 2.0
    qef_truncation: float = 0.1
    no_ic: bool = False
    mc_mode: str = "binary"
    metric_samples: int = 100_000
    seed: int = 0
    threads: int = 1
    require_manifold: bool = True
    max_si: int = 0

    def budget(self):
        return SearchBudget(
            iters_1d=self.iters_1d,
            step1=LineBudget(self.step1_linear, self.step1_binary, self.step1_range),
            step2=LineBudget(self.step2_linear, self.step2_binary, self.step2_range),
        )


def _parse_method(config):
    method = config.method
    if method in ("odc", "ic"):
        stage = StageConfig("binary-search", "two-d-points", "mdc" if config.no_ic else "ic")
        return "stage", stage, None
    if method == "mc" or method.startswith("mc:"):
        mode = method.split(":", 1)[1] if ":" in method else config.mc_mode
        return "mc", None, mode
    if method.startswith("stage:"):
        parts = method[len("stage:"):].split(",")
        if len(parts) != 3:
            raise ConfigurationError(
                "stage method needs three parts: stage:<1d>,<normals>,<split>"
            )
        one_d = _ONE_D_ALIASES.get(parts[0].strip())
        normals = _NORMAL_ALIASES.get(parts[1].strip())
        split = parts[2].strip()
        if one_d is None or normals is None or split not in ("mdc", "ic"):
            raise ConfigurationError(f"bad stage spec {method!r}")
        if config.no_ic:
            split = "mdc"
        return "stage", StageConfig(one_d, normals, split), None
    raise ConfigurationError(f"unknown method {method!r}")


def run(config):
    """Execute one extraction run; the report is written even when
    validation fails."""
    try:
        scene = load_scene(config.scene)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        kind, stage, mc_mode = _parse_method(config)
        grid = GridSpec(tuple(scene.domain_lo), tuple(scene.domain_hi), config.resolution)
        field = scene.resolve_field(grid.cell_size)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    t0 = time.perf_counter()
    counter = EvalCounter(field)
    try:
        if kind == "mc":
            result = marching_cubes(field, grid, mode=mc_mode, counter=counter)
        else:
            result = run_stage(
                field,
                grid,
                stage,
                budget=config.budget(),
                counter=counter,
                qef_truncation=config.qef_truncation,
            )
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InternalContractError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3

    mesh = result.mesh
    report = Report(
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        eval_counts=result.stats.get("eval_counts", {}),
        warnings=list(result.stats.get("warnings", [])),
        open_boundary=bool(result.stats.get("open_boundary", False)),
        split_case_counts=result.stats.get("split_case_counts", {}),
        qef_rank_counts=result.stats.get("qef_rank_counts", {}),
        qef_max_residual=result.stats.get("qef_max_residual"),
        normal_fallbacks=int(result.stats.get("normal_fallbacks", 0)),
    )

    man = validate_manifold(mesh)
    report.manifold = bool(man)
    report.si_count = count_self_intersections(mesh)
    report.euler_characteristic = mesh.euler_characteristic()
    if mesh.n_triangles and field.continuous:
        report.fit_err = metric_fit(mesh, field, config.metric_samples, config.seed)

    gt_mesh = None
    if config.gt:
        try:
            gt_mesh = import_obj(config.gt)
        except (OSError, MeshParseError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    if gt_mesh is not None and mesh.n_triangles:
        report.md2 = metric_md2(gt_mesh, mesh, config.metric_samples, config.seed)
        nic, directions = metric_nic(
            gt_mesh, mesh, config.metric_samples, config.seed, return_directions=True
        )
        report.nic = nic
        report.nic_directions = directions
        report.hdd = metric_hdd(gt_mesh, mesh, config.metric_samples, config.seed)

    report.wall_time_s = time.perf_counter() - t0

    if config.out:
        out_path = Path(config.out)
        if out_path.suffix.lower() == ".ply":
            export_ply(mesh, out_path)
        else:
            export_obj(mesh, out_path)
    if config.report:
        doc = {
            "schema_version": report_schema_version(),
            "config": dataclasses.asdict(config),
            "method_resolved": result.stats.get("method", config.method),
            **report.to_dict(),
        }
        with open(config.report, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    produced = mesh.n_vertices >= 0
    ok = produced
    if config.require_manifold and not report.manifold:
        ok = False
    if report.si_count > config.max_si:
        ok = False
    if not ok:
        print(
            f"validation failed: manifold={report.manifold} si_count={report.si_count}",
            file=sys.stderr,
        )
    return 0 if ok else 1


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mesher",
        description="Extract triangle meshes from occupancy-field scenes",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {SCHEMA_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one extraction and write mesh + report")
    run_p.add_argument("--scene", required=True, help="scene JSON file")
    run_p.add_argument("--resolution", type=int, default=64, help="cells per axis")
    run_p.add_argument(
        "--method",
        default="odc",
        help="odc | mc | mc:binary | mc:continuous | stage:<1d>,<normals>,<split>",
    )
    run_p.add_argument("--out", help="output mesh path (.obj or .ply)")
    run_p.add_argument("--report", help="output JSON report path")
    run_p.add_argument("--gt", help="ground-truth OBJ for md2/nic/hdd metrics")
    run_p.add_argument("--iters-1d", type=int, default=15)
    run_p.add_argument("--step1-linear", type=int, default=4)
    run_p.add_argument("--step1-binary", type=int, default=11)
    run_p.add_argument("--step1-range", type=float, default=0.8)
    run_p.add_argument("--step2-linear", type=int, default=3)
    run_p.add_argument("--step2-binary", type=int, default=12)
    run_p.add_argument("--step2-range", type=float, default=math.sqrt(2.0) / 2.0)
    run_p.add_argument("--qef-truncation", type=float, default=0.1)
    run_p.add_argument("--no-ic", action="store_true", help="plain diagonal split")
    run_p.add_argument("--mc-mode", choices=("binary", "continuous"), default="binary")
    run_p.add_argument("--metric-samples", type=int, default=100_000)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker bound; results are independent of this value",
    )
    run_p.add_argument("--allow-nonmanifold", action="store_true")
    run_p.add_argument("--max-si", type=int, default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = RunConfig(
        scene=args.scene,
        resolution=args.resolution,
        method=args.method,
        out=args.out,
        report=args.report,
        gt=args.gt,
        iters_1d=args.iters_1d,
        step1_linear=args.step1_linear,
        step1_binary=args.step1_binary,
        step1_range=args.step1_range,
        step2_linear=args.step2_linear,
        step2_binary=args.step2_binary,
        step2_range=args.step2_range,
        qef_truncation=args.qef_truncation,
        no_ic=args.no_ic,
        mc_mode=args.mc_mode,
        metric_samples=args.metric_samples,
        seed=args.seed,
        threads=args.threads,
        require_manifold=not args.allow_nonmanifold,
        max_si=args.max_si,
    )
    return run(config)


if __name__ == "__main__":
    sys.exit(main())

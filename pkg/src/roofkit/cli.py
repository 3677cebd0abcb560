"""Command-line entry point: ``roofkit <subcommand> [flags]``.

Exit codes: 0 success, 1 domain or file error (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from . import io as rio
from .model import RoofkitError, validate_graph
from .raster import (
    DEFAULT_WALL_HEIGHT,
    composite_roof,
    extract_facet_polygons,
    merge_coplanar,
    rasterize_graph,
    render_normal_map,
)
from .relations import DEFAULT_TOL_DEG, DEFAULT_TOL_PX, detect_graph, enforce_graph, relation_table
from .rmmd import DEFAULT_PENALTY, nearest_models, rmmd
from .sampler import SamplerConfig, make_rng, sample_graph
from .vectorize import response_report, vectorize_primitive

log = logging.getLogger("roofkit")


class UsageError(Exception):
    pass


def resolve_threads(value: int | None) -> int:
    """``--threads`` if given, else ROOFKIT_THREADS, else 1."""
    if value is None:
        env = os.environ.get("ROOFKIT_THREADS", "").strip()
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"ROOFKIT_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"thread count must be at least 1, got {value}")
    return value


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--meters-per-pixel", type=float, default=0.5)
    p.add_argument("--wall-height", type=float, default=DEFAULT_WALL_HEIGHT)
    p.add_argument("--tol-px", type=float, default=DEFAULT_TOL_PX)
    p.add_argument("--tol-deg", type=float, default=DEFAULT_TOL_DEG)
    p.add_argument("--penalty", type=float, default=DEFAULT_PENALTY)
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--verbose", action="store_true", help="show extraction warnings")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="roofkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"roofkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("sample", parents=[common], help="draw relation-consistent roof graphs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--pipeline", action="store_true", help="also write model JSON, OBJ and normal map")

    p = sub.add_parser("rasterize", parents=[common], help="rasterize a graph into bundle directories")
    p.add_argument("graph")

    p = sub.add_parser("vectorize", parents=[common], help="vectorize one primitive raster")
    p.add_argument("bundle", help="bundle directory, .npz, or PNG/PGM orientation or mask image")
    p.add_argument("--report", default=None, help="write per-side response diagnostics CSV here")

    p = sub.add_parser("detect", parents=[common], help="relation table of a graph as CSV")
    p.add_argument("graph")

    p = sub.add_parser("enforce", parents=[common], help="colinearity enforcement with raster warping")
    p.add_argument("graph")
    p.add_argument("--rasters", default=None, help="directory of per-primitive bundles (prim_<k>)")
    p.add_argument("--mode", choices=("bilinear", "exact"), default="bilinear")
    p.add_argument("--iterations", type=int, default=1)

    p = sub.add_parser("rmmd", parents=[common], help="distance between two model directories")
    p.add_argument("--gt", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--retrieve", action="store_true", help="also emit the nearest generated model per reference")

    p = sub.add_parser("export-obj", parents=[common], help="OBJ mesh from a model or graph JSON")
    p.add_argument("input")

    p = sub.add_parser("render", parents=[common], help="surface-normal PNG of a graph")
    p.add_argument("graph")
    return parser


def _manifest(args, subcommand, config, inputs, outputs, root, path=None):
    m = rio.build_manifest(subcommand, config, args.seed, inputs, outputs, root)
    rio.write_manifest(m, path or Path(root) / rio.MANIFEST_NAME)


def _need_out(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command} needs --out")
    return Path(args.out)


def _graph_arg(args):
    g = rio.read_graph(args.graph)
    return validate_graph(g)


def _sample_config(args) -> SamplerConfig:
    return SamplerConfig(
        resolution=args.resolution,
        meters_per_pixel=args.meters_per_pixel,
        tol_px=args.tol_px,
        tol_deg=args.tol_deg,
        seed=args.seed,
    )


def _pipeline(graph, wall_height, dim):
    comp = merge_coplanar(composite_roof(rasterize_graph(graph, wall_height)), graph)
    return extract_facet_polygons(comp, dim), render_normal_map(comp)


def cmd_sample(args) -> int:
    if args.n < 0:
        raise UsageError("--n must be nonnegative")
    out = _need_out(args)
    out.mkdir(parents=True, exist_ok=True)
    config = _sample_config(args)
    rng = make_rng(config.seed)
    graphs = [sample_graph(rng, config) for _ in range(args.n)]
    outputs = []
    for k, g in enumerate(graphs):
        outputs.append(rio.write_graph(g, out / f"graph_{k:04d}.json"))
    if args.pipeline:
        threads = resolve_threads(args.threads)
        work = lambda g: _pipeline(g, args.wall_height, args.dim)  # noqa: E731
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, graphs))
        else:
            results = [work(g) for g in graphs]
        for k, (model, normals) in enumerate(results):
            outputs.append(rio.write_model(model, out / f"model_{k:04d}.json"))
            outputs.append(rio.write_obj(model, out / f"model_{k:04d}.obj"))
            outputs.append(rio.write_png(normals, out / f"normal_{k:04d}.png"))
    cfg = config.to_dict() | {"n": args.n, "pipeline": args.pipeline, "wall_height": args.wall_height, "dim": args.dim}
    _manifest(args, "sample", cfg, [], outputs, out)
    print(f"wrote {args.n} graphs to {out}")
    return 0


def cmd_rasterize(args) -> int:
    out = _need_out(args)
    graph = _graph_arg(args)
    bundles = rasterize_graph(graph, args.wall_height)
    outputs = []
    for k, b in enumerate(bundles):
        outputs += rio.write_bundle(b, out / f"prim_{k}")
    comp = merge_coplanar(composite_roof(bundles), graph)
    outputs += rio.write_bundle(comp, out / "composite")
    outputs.append(rio.write_png(render_normal_map(comp), out / "normal.png"))
    _manifest(args, "rasterize", {"wall_height": args.wall_height}, [args.graph], outputs, out)
    print(f"wrote {len(bundles)} primitive rasters and the composite to {out}")
    return 0


def cmd_vectorize(args) -> int:
    bundle = rio.read_bundle(args.bundle, args.meters_per_pixel)
    prim = vectorize_primitive(bundle)
    text = json.dumps(rio.primitive_to_dict(prim), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.report:
        _write_csv(response_report(bundle.orientation), args.report)
    return 0


RELATION_FIELDS = (
    "i", "j", "colinear_left", "colinear_right", "colinear_top", "colinear_bottom", "parallel_lr", "parallel_tb",
)


def _write_csv(rows: list[dict], path=None, fields: Sequence[str] | None = None) -> None:
    buf = io.StringIO()
    fields = list(fields) if fields is not None else list(rows[0]) if rows else []
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue())


def cmd_detect(args) -> int:
    graph = rio.read_graph(args.graph)
    rows = relation_table(detect_graph(graph, args.tol_px, args.tol_deg))
    _write_csv(rows, args.out, RELATION_FIELDS)
    return 0


def cmd_enforce(args) -> int:
    out = _need_out(args)
    graph = _graph_arg(args)
    bundles = None
    inputs = [args.graph]
    if args.rasters:
        paths = [Path(args.rasters) / f"prim_{k}" for k in range(len(graph.primitives))]
        bundles = [rio.read_bundle(p) for p in paths]
        inputs += [p / "bundle.npz" for p in paths]
    if args.iterations < 1:
        raise UsageError("--iterations must be at least 1")
    new_graph, warped = enforce_graph(graph, bundles, args.mode, args.wall_height, args.iterations)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [rio.write_graph(new_graph, out / "graph.json")]
    for k, b in enumerate(warped):
        outputs += rio.write_bundle(b, out / f"prim_{k}")
    cfg = {"mode": args.mode, "iterations": args.iterations, "wall_height": args.wall_height}
    _manifest(args, "enforce", cfg, inputs, outputs, out)
    print(f"wrote enforced graph and {len(warped)} rasters to {out}")
    return 0


def cmd_rmmd(args) -> int:
    threads = resolve_threads(args.threads)
    gt = rio.read_model_dir(args.gt)
    gen = rio.read_model_dir(args.gen)
    gt_models = [m for _, m in gt]
    gen_models = [m for _, m in gen]
    d = rmmd(gt_models, gen_models, args.dim, args.penalty, threads=threads)
    print(repr(d))
    if args.retrieve:
        rows = [
            {"gt": gt[i][0], "nearest_gen": gen[j][0], "cost": c}
            for i, j, c in nearest_models(gt_models, gen_models, args.dim, args.penalty, threads=threads)
        ]
        _write_csv(rows, args.out)
    return 0


def cmd_export_obj(args) -> int:
    out = _need_out(args)
    data = json.loads(Path(args.input).read_text()) if Path(args.input).is_file() else None
    if data is None:
        raise rio.FormatError(f"no such file: {args.input}")
    if isinstance(data, dict):
        graph = validate_graph(rio.graph_from_dict(data))
        model, _ = _pipeline(graph, args.wall_height, 3)
    else:
        model = rio.model_from_list(data)
    rio.write_obj(model, out)
    return 0


def cmd_render(args) -> int:
    out = _need_out(args)
    graph = _graph_arg(args)
    comp = merge_coplanar(composite_roof(rasterize_graph(graph, args.wall_height)), graph)
    rio.write_png(render_normal_map(comp), out)
    return 0


COMMANDS = {
    "sample": cmd_sample,
    "rasterize": cmd_rasterize,
    "vectorize": cmd_vectorize,
    "detect": cmd_detect,
    "enforce": cmd_enforce,
    "rmmd": cmd_rmmd,
    "export-obj": cmd_export_obj,
    "render": cmd_render,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"roofkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RoofkitError, OSError) as exc:
        print(f"roofkit {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

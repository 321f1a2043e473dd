"""Command-line front end: fixtures, catalog/index building, renders,
single-shot pipeline runs, the retrieval evaluation harness, and the server.

Every subcommand honors --json (machine-readable stdout) and exits 0 iff it
succeeded. Seeded subcommands are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import errors as err
from .asset_io import flatten_scene, parse_glb, validate_mesh, write_glb, SceneAsset
from .catalog import ingest_directory, load_catalog, load_component_asset, save_catalog
from .fixtures import write_component_suite, write_fixture_house
from .geometry import (
    camera_from_json,
    camera_to_json,
    fit_obb,
    obb_to_json,
    render_depth,
    save_depth,
    turntable_camera,
)
from .replacement import apply_replacement, plan_replacement
from .retrieval import (
    SketchImage,
    build_index,
    component_view_cameras,
    load_sketch,
    query,
    render_line_art,
    sketch_to_image,
)
from .segmentation import extract_foreground, load_mask
from .service import ServiceConfig, run_service


def _emit(args, payload: dict, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human if human is not None else json.dumps(payload, indent=2,
                                                         sort_keys=True))


def _load_model(path) -> "np.ndarray":
    scene = parse_glb(Path(path).read_bytes())
    mesh = flatten_scene(scene)
    if mesh.vertex_count == 0:
        raise err.EmptyMesh(f"{path} contains no geometry")
    return mesh


def _camera_for(args, mesh, size: int):
    if getattr(args, "camera", None):
        return camera_from_json(json.loads(Path(args.camera).read_text()))
    return turntable_camera(mesh, getattr(args, "yaw", 0.0),
                            getattr(args, "elev", 0.0), 2.5,
                            width=size, height=size)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fixtures_components(args) -> int:
    paths = write_component_suite(args.out, count=args.count, seed=args.seed)
    _emit(args, {"written": len(paths), "out": str(args.out)},
          f"wrote {len(paths)} components to {args.out}")
    return 0


def cmd_fixtures_house(args) -> int:
    meta = write_fixture_house(args.out, size=args.size)
    _emit(args, {"out": str(args.out),
                 "window_face_ids": meta["window_face_ids"],
                 "door_face_ids": meta["door_face_ids"]},
          f"wrote fixture house to {args.out}")
    return 0


def cmd_catalog_build(args) -> int:
    manifest = ingest_directory(args.components)
    index = build_index(manifest, views_per_component=args.views,
                        codebook_k=args.codebook_k, seed=args.seed)
    save_catalog(manifest, index, args.out)
    payload = {
        "components": len(manifest.records),
        "ingest_errors": manifest.ingest_errors,
        "views": sum(index.view_counts.values()),
        "out": str(args.out),
    }
    _emit(args, payload,
          f"catalog: {payload['components']} components, "
          f"{payload['views']} views -> {args.out}")
    return 0


def cmd_index_build(args) -> int:
    manifest, _old = load_catalog(args.catalog)
    index = build_index(manifest, views_per_component=args.views,
                        codebook_k=args.codebook_k, seed=args.seed)
    out = args.out or args.catalog
    save_catalog(manifest, index, out)
    _emit(args, {"components": len(manifest.records), "out": str(out)},
          f"rebuilt index for {len(manifest.records)} components -> {out}")
    return 0


def cmd_render_depth(args) -> int:
    mesh = _load_model(args.model)
    camera = _camera_for(args, mesh, args.size)
    depth = render_depth(mesh, camera)
    Path(args.out).write_bytes(save_depth(depth))
    payload = {"out": str(args.out), "camera": camera_to_json(camera),
               "finite_pixels": int(np.isfinite(depth.values).sum())}
    _emit(args, payload, f"depth -> {args.out}")
    return 0


def cmd_render_lineart(args) -> int:
    mesh = _load_model(args.model)
    camera = _camera_for(args, mesh, args.size)
    art = render_line_art(mesh, camera, depth_threshold=args.depth_threshold,
                          normal_threshold_deg=args.normal_threshold)
    sketch_to_image(art).save(args.out)
    _emit(args, {"out": str(args.out), "ink_pixels": int(art.bits.sum())},
          f"line art -> {args.out}")
    return 0


def cmd_render_turntable(args) -> int:
    from .geometry import render_turntable

    mesh = _load_model(args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, (camera, depth) in enumerate(render_turntable(
            mesh, args.views, elevation_deg=args.elev,
            distance_factor=args.distance, width=args.size, height=args.size)):
        path = out_dir / f"view_{k:03d}.depth"
        path.write_bytes(save_depth(depth))
        (out_dir / f"view_{k:03d}.camera.json").write_text(
            json.dumps(camera_to_json(camera), sort_keys=True))
        written.append(path.name)
    _emit(args, {"out": str(out_dir), "views": written},
          f"{len(written)} views -> {out_dir}")
    return 0


def cmd_fit_obb(args) -> int:
    mesh = _load_model(args.model)
    mask = load_mask(args.mask)
    camera = _camera_for(args, mesh, mask.width)
    depth = render_depth(mesh, camera)
    cloud = extract_foreground(mask, depth, camera,
                               band=(args.band_lo, args.band_hi))
    obb = fit_obb(cloud)
    _emit(args, {"obb": obb_to_json(obb), "points": len(cloud)})
    return 0


def cmd_retrieve(args) -> int:
    manifest, index = load_catalog(args.catalog)
    sketch = load_sketch(args.sketch)
    allowed = None
    if args.category:
        allowed = {r.id for r in manifest.records if r.category == args.category}
    ranked = query(sketch, index, top_k=args.top_k, allowed_components=allowed)
    results = []
    for component_id, score in ranked:
        record = manifest.by_id(component_id)
        results.append({"component_id": component_id, "score": score,
                        "name": record.name, "category": record.category})
    _emit(args, {"results": results},
          "\n".join(f"{r['score']:.4f}  {r['component_id']:4d}  {r['name']}"
                    for r in results))
    return 0


def _dropout_sketch(art: SketchImage, fraction: float, rng) -> SketchImage:
    if fraction <= 0:
        return art
    ys, xs = np.nonzero(art.bits)
    keep = rng.choice(len(xs), size=int(round(len(xs) * (1 - fraction))),
                      replace=False)
    bits = np.zeros_like(art.bits)
    bits[ys[keep], xs[keep]] = True
    return SketchImage(width=art.width, height=art.height, bits=bits)


def cmd_eval_self_retrieval(args) -> int:
    manifest, index = load_catalog(args.catalog)
    if not manifest.records:
        raise err.CatalogEmpty("catalog has no components")
    views = index.params.get("views_per_component", 5)
    rng = np.random.default_rng(args.seed)

    per_category: dict[str, dict] = {}
    top1 = top5 = top5_drop = 0
    for record in manifest.records:
        mesh, _blobs = load_component_asset(manifest, record)
        cameras = component_view_cameras(mesh, views)
        art = render_line_art(mesh, cameras[len(cameras) // 2])
        ranked = [cid for cid, _ in query(art, index, top_k=5)]
        hit1 = ranked[0] == record.id
        hit5 = record.id in ranked
        dropped = _dropout_sketch(art, args.dropout, rng)
        ranked_drop = [cid for cid, _ in query(dropped, index, top_k=5)]
        hit5_drop = record.id in ranked_drop

        top1 += hit1
        top5 += hit5
        top5_drop += hit5_drop
        bucket = per_category.setdefault(record.category,
                                         {"n": 0, "top1": 0, "top5": 0,
                                          "top5_under_dropout": 0})
        bucket["n"] += 1
        bucket["top1"] += hit1
        bucket["top5"] += hit5
        bucket["top5_under_dropout"] += hit5_drop

    n = len(manifest.records)
    for bucket in per_category.values():
        for key in ("top1", "top5", "top5_under_dropout"):
            bucket[key] = bucket[key] / bucket["n"]
    report = {
        "components": n,
        "top1": top1 / n,
        "top5": top5 / n,
        "top5_under_dropout": top5_drop / n,
        "per_category": per_category,
        "seed": args.seed,
        "dropout": args.dropout,
    }
    _emit(args, report,
          f"top1={report['top1']:.3f} top5={report['top5']:.3f} "
          f"top5@dropout={report['top5_under_dropout']:.3f} over {n} components")
    return 0


def cmd_run(args) -> int:
    manifest, index = load_catalog(args.catalog)
    mesh = _load_model(args.model)
    scene = parse_glb(Path(args.model).read_bytes())

    mask_paths = sorted(Path(args.masks).glob("*.png"))
    if not mask_paths:
        raise err.ProviderFailure(f"no mask images in {args.masks}")
    camera = _camera_for(args, mesh, args.size)

    sketch = load_sketch(args.sketch)
    ranked = query(sketch, index, top_k=1)
    component_id = ranked[0][0]
    record = manifest.by_id(component_id)
    component, _blobs = load_component_asset(manifest, record)

    reports = []
    current = mesh
    for mask_path in mask_paths:
        mask = load_mask(mask_path)
        if (mask.width, mask.height) != (camera.width, camera.height):
            raise err.PreconditionFailed(
                f"mask {mask_path.name} is {mask.width}x{mask.height}, "
                f"render is {camera.width}x{camera.height}")
        depth = render_depth(current, camera)
        cloud = extract_foreground(mask, depth, camera)
        target = fit_obb(cloud)
        plan = plan_replacement(current, target, component_id,
                                record.canonical_obb, mode=args.mode)
        current, report = apply_replacement(current, plan, component)
        entry = report.to_dict()
        entry["mask"] = mask_path.name
        entry["component_id"] = component_id
        reports.append(entry)

    validation = validate_mesh(current)
    out_scene = SceneAsset(meshes=[("model", current)],
                           opaque_blobs=dict(scene.opaque_blobs))
    Path(args.out).write_bytes(write_glb(out_scene))
    payload = {
        "out": str(args.out),
        "component_id": component_id,
        "component_name": record.name,
        "replacements": reports,
        "validation_errors": validation.errors,
    }
    _emit(args, payload,
          f"replaced {len(reports)} region(s) with '{record.name}' -> {args.out}")
    return 0 if validation.ok else 1


def cmd_serve(args) -> int:
    config_file = args.config or os.environ.get("FACADEKIT_CONFIG")
    config = ServiceConfig.load(config_file)
    if args.port is not None:
        config.port = args.port
    if args.catalog is not None:
        config.catalog_path = str(args.catalog)
    run_service(config)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facadekit",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true",
                        help="machine-readable JSON on stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    fixtures = sub.add_parser("fixtures", help="generate procedural fixtures")
    fsub = fixtures.add_subparsers(dest="fixture_kind", required=True)
    fc = fsub.add_parser("components", help="window/door component suite")
    fc.add_argument("--out", required=True)
    fc.add_argument("--count", type=int, default=60)
    fc.add_argument("--seed", type=int, default=0)
    fc.set_defaults(func=cmd_fixtures_components)
    fh = fsub.add_parser("house", help="fixture house with masks")
    fh.add_argument("--out", required=True)
    fh.add_argument("--size", type=int, default=512)
    fh.set_defaults(func=cmd_fixtures_house)

    catalog = sub.add_parser("catalog", help="catalog operations")
    csub = catalog.add_subparsers(dest="catalog_op", required=True)
    cb = csub.add_parser("build", help="ingest a directory and build the index")
    cb.add_argument("--components", required=True)
    cb.add_argument("--out", required=True)
    cb.add_argument("--views", type=int, default=5)
    cb.add_argument("--codebook-k", type=int, default=256)
    cb.add_argument("--seed", type=int, default=0)
    cb.set_defaults(func=cmd_catalog_build)

    index = sub.add_parser("index", help="index operations")
    isub = index.add_subparsers(dest="index_op", required=True)
    ib = isub.add_parser("build", help="rebuild the index of an archive")
    ib.add_argument("--catalog", required=True)
    ib.add_argument("--out")
    ib.add_argument("--views", type=int, default=5)
    ib.add_argument("--codebook-k", type=int, default=256)
    ib.add_argument("--seed", type=int, default=0)
    ib.set_defaults(func=cmd_index_build)

    render = sub.add_parser("render", help="render depth / line art / turntables")
    rsub = render.add_subparsers(dest="render_kind", required=True)
    rd = rsub.add_parser("depth")
    rd.add_argument("--model", required=True)
    rd.add_argument("--out", required=True)
    rd.add_argument("--camera")
    rd.add_argument("--yaw", type=float, default=0.0)
    rd.add_argument("--elev", type=float, default=0.0)
    rd.add_argument("--size", type=int, default=512)
    rd.set_defaults(func=cmd_render_depth)
    rl = rsub.add_parser("lineart")
    rl.add_argument("--model", required=True)
    rl.add_argument("--out", required=True)
    rl.add_argument("--camera")
    rl.add_argument("--yaw", type=float, default=0.0)
    rl.add_argument("--elev", type=float, default=10.0)
    rl.add_argument("--size", type=int, default=256)
    rl.add_argument("--depth-threshold", type=float, default=None)
    rl.add_argument("--normal-threshold", type=float, default=30.0)
    rl.set_defaults(func=cmd_render_lineart)
    rt = rsub.add_parser("turntable")
    rt.add_argument("--model", required=True)
    rt.add_argument("--out", required=True)
    rt.add_argument("--views", type=int, default=8)
    rt.add_argument("--elev", type=float, default=0.0)
    rt.add_argument("--distance", type=float, default=2.5)
    rt.add_argument("--size", type=int, default=256)
    rt.set_defaults(func=cmd_render_turntable)

    fo = sub.add_parser("fit-obb", help="mask + depth render -> OBB")
    fo.add_argument("--model", required=True)
    fo.add_argument("--mask", required=True)
    fo.add_argument("--camera")
    fo.add_argument("--yaw", type=float, default=0.0)
    fo.add_argument("--elev", type=float, default=0.0)
    fo.add_argument("--band-lo", type=float, default=2.0)
    fo.add_argument("--band-hi", type=float, default=98.0)
    fo.set_defaults(func=cmd_fit_obb)

    rq = sub.add_parser("retrieve", help="rank catalog components for a sketch")
    rq.add_argument("--catalog", required=True)
    rq.add_argument("--sketch", required=True)
    rq.add_argument("--top-k", type=int, default=5)
    rq.add_argument("--category")
    rq.set_defaults(func=cmd_retrieve)

    ev = sub.add_parser("eval", help="evaluation harness")
    esub = ev.add_subparsers(dest="eval_kind", required=True)
    es = esub.add_parser("self-retrieval",
                         help="top-1/top-5 self-retrieval and dropout robustness")
    es.add_argument("--catalog", required=True)
    es.add_argument("--seed", type=int, default=0)
    es.add_argument("--dropout", type=float, default=0.2)
    es.set_defaults(func=cmd_eval_self_retrieval)

    run = sub.add_parser("run", help="single-shot pipeline: masks + sketch -> GLB")
    run.add_argument("--model", required=True)
    run.add_argument("--masks", required=True, help="directory of mask PNGs")
    run.add_argument("--sketch", required=True)
    run.add_argument("--catalog", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--mode", choices=["per_axis", "uniform"], default="per_axis")
    run.add_argument("--camera")
    run.add_argument("--yaw", type=float, default=0.0)
    run.add_argument("--elev", type=float, default=0.0)
    run.add_argument("--size", type=int, default=512)
    run.add_argument("--seed", type=int, default=0)
    run.set_defaults(func=cmd_run)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config")
    serve.add_argument("--port", type=int)
    serve.add_argument("--catalog")
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except err.EngineError as exc:
        payload = {"error": {"code": exc.code, "message": str(exc)}}
        if args.json:
            print(json.dumps(payload, sort_keys=True))
        else:
            print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

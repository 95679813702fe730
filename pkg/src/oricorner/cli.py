"""Command-line front end: ``gen``, ``infer``, ``eval`` and ``svg``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import io
from .errors import ConfigError, OriCornerError
from .initialization import InitConfig, decode_corners
from .losses import LossWeights
from .metrics import InstancePrediction, ap_ar
from .pipeline import infer_scene
from .refine import RefineConfig
from .scenegen import SHAPE_FAMILIES, NoiseSpec, SceneSpec, generate_scene
from .targets import GridSize

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 2, 3, 4
CONFIG_ENV = "ORICORNER_CONFIG"

_GRID_RE = re.compile(r"^scene_(\d+)\.(\d+)\.grid$")


def _families(text: str) -> Tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


# key -> (parser, default); every accepted config key is listed here
KEYS: Dict[str, Tuple[Callable[[str], object], object]] = {
    "seed": (int, 0),
    "num_scenes": (int, 10),
    "grid_height": (int, 64),
    "grid_width": (int, 64),
    "instances_min": (int, 1),
    "instances_max": (int, 4),
    "shape_families": (_families, SHAPE_FAMILIES),
    "noise_sigma_pos": (float, 0.0),
    "p_drop": (float, 0.0),
    "sigma_heat": (float, 0.0),
    "sigma_ori": (float, 0.0),
    "mask_flip": (float, 0.0),
    "delta_cor2cont": (float, 5.0),
    "delta_sem2graph": (float, 5.0),
    "tau_peak": (float, 0.5),
    "angle_tol_sem": (float, 15.0),
    "refine_iters": (int, 100),
    "refine_stages": (int, 3),
    "refine_step": (float, 0.2),
    "mu_heat": (float, 1.0),
    "mu_ori": (float, 1.0),
    "mu_ortho": (float, 0.05),
    "clamp_step": (float, 0.5),
    "heat_radius": (float, 2.0),
    "w_pos": (float, 1.0),
    "lambda_heat": (float, 1.0),
    "lambda_offset": (float, 1.0),
    "lambda_orient": (float, 1.0),
    "lambda_poly": (float, 1.0),
    "lambda_cons": (float, 0.1),
    "lambda_ortho": (float, 0.01 * math.pi / 180.0),
    "jobs": (int, 1),
}


@dataclass
class RunConfig:
    """All run settings, merged from defaults, a config file and CLI flags."""

    values: Dict[str, object] = field(default_factory=lambda: {k: d for k, (_, d) in KEYS.items()})

    @classmethod
    def from_strings(cls, raw: Dict[str, str], overrides: Optional[Dict[str, object]] = None) -> "RunConfig":
        cfg = cls()
        unknown = sorted(set(raw) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for key, text in raw.items():
            parse = KEYS[key][0]
            try:
                cfg.values[key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {text!r}") from exc
        for key, value in (overrides or {}).items():
            if value is not None:
                cfg.values[key] = value
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        try:
            self.scene_spec()
            self.init_config()
            self.refine_config()
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self["num_scenes"] < 0:
            raise ConfigError("num_scenes must be >= 0")
        if self["jobs"] < 1:
            raise ConfigError("jobs must be >= 1")

    def scene_spec(self) -> SceneSpec:
        v = self.values
        return SceneSpec(
            seed=v["seed"],
            grid=GridSize(v["grid_height"], v["grid_width"]),
            instances=(v["instances_min"], v["instances_max"]),
            shape_families=tuple(v["shape_families"]),
            noise=NoiseSpec(v["noise_sigma_pos"], v["p_drop"], v["sigma_heat"], v["sigma_ori"], v["mask_flip"]),
        )

    def init_config(self) -> InitConfig:
        v = self.values
        return InitConfig(v["delta_cor2cont"], v["delta_sem2graph"], v["tau_peak"], v["angle_tol_sem"])

    def refine_config(self) -> RefineConfig:
        v = self.values
        return RefineConfig(
            iterations=v["refine_iters"], stages=v["refine_stages"], step=v["refine_step"],
            mu_heat=v["mu_heat"], mu_ori=v["mu_ori"], mu_ortho=v["mu_ortho"],
            clamp_step=v["clamp_step"], heat_radius=v["heat_radius"],
        )

    def loss_weights(self) -> LossWeights:
        v = self.values
        return LossWeights(**{k: v[k] for k in ("w_pos", "lambda_heat", "lambda_offset", "lambda_orient",
                                                 "lambda_poly", "lambda_cons", "lambda_ortho")})

    def manifest_values(self) -> Dict[str, object]:
        # jobs only affects scheduling, so it stays out of the manifest
        out = {}
        for k, v in self.values.items():
            if k != "jobs":
                out[k] = list(v) if isinstance(v, tuple) else v
        return out


def load_config(path: Optional[str], overrides: Dict[str, object]) -> RunConfig:
    path = path or os.environ.get(CONFIG_ENV) or None
    raw = io.read_config(path) if path else {}
    return RunConfig.from_strings(raw, overrides)


# -- workers (top level so they pickle) ------------------------------------------------

def _gen_one(spec: SceneSpec, k: int) -> List[Tuple[str, str]]:
    scene = generate_scene(spec, k)
    files = [(io.scene_filename(k, "gt"), io.dumps_instances(k, _as_gt(scene.polygons)))]
    for i, r in enumerate(scene.rasters):
        files.append((io.grid_filename(k, i), io.dumps_grid(r)))
    return files


def _as_gt(polygons):
    return [InstancePrediction(i, p, 1.0) for i, p in enumerate(polygons)]


def _infer_one(scene_dir: str, k: int, init_cfg: InitConfig, refine_cfg: RefineConfig) -> str:
    rasters = [io.read_grid(p) for p in io.scene_grids(scene_dir, k)]
    results = infer_scene(rasters, init_cfg, refine_cfg)
    return io.dumps_instances(k, [r.prediction for r in results])


def _run(fn, args_list: Sequence[tuple], jobs: int) -> list:
    if jobs <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args_list)))


def _write_manifest(out_dir: Path, cfg: RunConfig, command: str, artifacts: List[str]) -> None:
    doc = {
        "command": command,
        "seed": cfg["seed"],
        "config": cfg.manifest_values(),
        "artifacts": sorted(artifacts),
    }
    io.atomic_write(out_dir / "manifest.json", json.dumps(doc, indent=1) + "\n")


# -- commands -----------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, out_dir) -> List[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = cfg.scene_spec()
    batches = _run(_gen_one, [(spec, k) for k in range(cfg["num_scenes"])], cfg["jobs"])
    names = []
    for files in batches:
        for name, text in files:
            io.atomic_write(out_dir / name, text)
            names.append(name)
    _write_manifest(out_dir, cfg, "gen", names)
    return names


def grid_scenes(scene_dir) -> List[int]:
    ids = set()
    for entry in Path(scene_dir).iterdir():
        m = _GRID_RE.match(entry.name)
        if m:
            ids.add(int(m.group(1)))
    return sorted(ids)


def cmd_infer(cfg: RunConfig, scene_dir, out_dir) -> List[str]:
    scene_dir, out_dir = Path(scene_dir), Path(out_dir)
    if not scene_dir.is_dir():
        raise FileNotFoundError(f"scene directory not found: {scene_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = grid_scenes(scene_dir)
    init_cfg, refine_cfg = cfg.init_config(), cfg.refine_config()
    texts = _run(_infer_one, [(str(scene_dir), k, init_cfg, refine_cfg) for k in scenes], cfg["jobs"])
    names = []
    for k, text in zip(scenes, texts):
        name = io.scene_filename(k, "pred")
        io.atomic_write(out_dir / name, text)
        names.append(name)
    _write_manifest(out_dir, cfg, "infer", names)
    return names


def _load_scene_files(paths: Dict[int, Path]):
    out = {}
    for k, p in paths.items():
        scene, inst = io.read_instances(p)
        if scene != k:
            raise ValueError(f"{p}: scene id {scene} does not match file name")
        out[k] = inst
    return out


def cmd_eval(gt_dir, pred_dir, report_path):
    """Evaluate predictions against ground truth and write JSON and table reports.

    A GT scene without a prediction file counts as having no predictions;
    a prediction scene without GT is an error.
    """
    gt_dir, pred_dir, report_path = Path(gt_dir), Path(pred_dir), Path(report_path)
    for d in (gt_dir, pred_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    gts = _load_scene_files(io.list_scenes(gt_dir, "gt"))
    preds = _load_scene_files(io.list_scenes(pred_dir, "pred"))
    extra = sorted(set(preds) - set(gts))
    if extra:
        raise ValueError(f"prediction scenes without ground truth: {', '.join(map(str, extra))}")
    order = sorted(gts)
    report = ap_ar(
        [preds.get(k, []) for k in order],
        [[g.polygon for g in gts[k]] for k in order],
    )
    doc = report.to_dict()
    doc["scenes"] = order
    io.atomic_write(report_path, json.dumps(doc, indent=1) + "\n")
    io.atomic_write(report_path.with_suffix(".txt"), report.table())
    return report


# -- svg ------------------------------------------------------------------------------

SVG_SCALE = 8.0
ARROW_LEN = 3.0


def _points_attr(vertices: np.ndarray) -> str:
    return " ".join(f"{x * SVG_SCALE:.3f},{y * SVG_SCALE:.3f}" for x, y in vertices)


def render_svg(gt_polygons, pred_polygons, rasters, tau_peak: float = 0.5) -> str:
    """SVG overlay: GT outlines, predicted outlines, decoded corners and their two orientation arrows."""
    if rasters:
        h, w = rasters[0].heatmap.shape
    else:
        h = w = 64
    ns = "http://www.w3.org/2000/svg"
    ET.register_namespace("", ns)
    root = ET.Element(f"{{{ns}}}svg", {
        "width": f"{w * SVG_SCALE:g}", "height": f"{h * SVG_SCALE:g}",
        "viewBox": f"0 0 {w * SVG_SCALE:g} {h * SVG_SCALE:g}",
    })
    defs = ET.SubElement(root, f"{{{ns}}}defs")
    marker = ET.SubElement(defs, f"{{{ns}}}marker", {
        "id": "head", "markerWidth": "6", "markerHeight": "6", "refX": "5", "refY": "3", "orient": "auto",
    })
    ET.SubElement(marker, f"{{{ns}}}path", {"d": "M0,0 L6,3 L0,6 z", "fill": "#d08000"})
    ET.SubElement(root, f"{{{ns}}}rect", {"width": "100%", "height": "100%", "fill": "white"})

    g_gt = ET.SubElement(root, f"{{{ns}}}g", {"id": "gt", "fill": "none", "stroke": "#1a9850", "stroke-width": "2"})
    for p in gt_polygons:
        ET.SubElement(g_gt, f"{{{ns}}}polygon", {"class": "gt", "points": _points_attr(p.vertices)})
    g_pred = ET.SubElement(root, f"{{{ns}}}g", {
        "id": "pred", "fill": "none", "stroke": "#d73027", "stroke-width": "1.5", "stroke-dasharray": "4 2",
    })
    for p in pred_polygons:
        ET.SubElement(g_pred, f"{{{ns}}}polygon", {"class": "pred", "points": _points_attr(p.vertices)})

    g_cor = ET.SubElement(root, f"{{{ns}}}g", {"id": "corners"})
    for r in rasters:
        corners = decode_corners(r.heatmap, r.offsets, tau_peak)
        for x, y in corners.points:
            i = min(max(int(math.floor(y)), 0), h - 1)
            j = min(max(int(math.floor(x)), 0), w - 1)
            ET.SubElement(g_cor, f"{{{ns}}}circle", {
                "class": "corner", "cx": f"{x * SVG_SCALE:.3f}", "cy": f"{y * SVG_SCALE:.3f}",
                "r": "3", "fill": "#4575b4",
            })
            o = r.orientation[i, j]
            for vx, vy in (o[0:2], o[2:4]):
                ET.SubElement(g_cor, f"{{{ns}}}line", {
                    "class": "arrow",
                    "x1": f"{x * SVG_SCALE:.3f}", "y1": f"{y * SVG_SCALE:.3f}",
                    "x2": f"{(x + ARROW_LEN * vx) * SVG_SCALE:.3f}", "y2": f"{(y + ARROW_LEN * vy) * SVG_SCALE:.3f}",
                    "stroke": "#d08000", "stroke-width": "1.5", "marker-end": "url(#head)",
                })
    return ET.tostring(root, encoding="unicode") + "\n"


def cmd_svg(cfg: RunConfig, scene_path, out_svg, pred_path=None) -> None:
    scene_path = Path(scene_path)
    k, gts = io.read_instances(scene_path)
    preds = io.read_instances(pred_path)[1] if pred_path else []
    rasters = [io.read_grid(p) for p in io.scene_grids(scene_path.parent, k)]
    text = render_svg([g.polygon for g in gts], [p.polygon for p in preds], rasters, cfg["tau_peak"])
    io.atomic_write(out_svg, text)


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oricorner", description="Oriented-corner building polygon toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"key = value config file (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int)
    common.add_argument("--num-scenes", type=int)
    common.add_argument("--noise-sigma-pos", type=float)
    common.add_argument("--p-drop", type=float)
    common.add_argument("--delta-cor2cont", type=float)
    common.add_argument("--delta-sem2graph", type=float)
    common.add_argument("--refine-iters", type=int)
    common.add_argument("--jobs", type=int)

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen", parents=[common], help="generate synthetic scenes")
    p.add_argument("out_dir")
    p = sub.add_parser("infer", parents=[common], help="run initialization and refinement")
    p.add_argument("scene_dir")
    p.add_argument("out_dir")
    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.add_argument("report", help="report JSON path; the text table goes next to it as .txt")
    p = sub.add_parser("svg", parents=[common], help="render a scene overlay")
    p.add_argument("scene", help="scene_<k>.gt.json; instance grids are read from its directory")
    p.add_argument("out_svg")
    p.add_argument("--pred", help="scene_<k>.pred.json to overlay")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        "seed": args.seed,
        "num_scenes": args.num_scenes,
        "noise_sigma_pos": args.noise_sigma_pos,
        "p_drop": args.p_drop,
        "delta_cor2cont": args.delta_cor2cont,
        "delta_sem2graph": args.delta_sem2graph,
        "refine_iters": args.refine_iters,
        "jobs": args.jobs,
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "gen":
            names = cmd_gen(cfg, args.out_dir)
            print(f"wrote {len(names)} files to {args.out_dir}")
        elif args.command == "infer":
            names = cmd_infer(cfg, args.scene_dir, args.out_dir)
            print(f"wrote {len(names)} prediction files to {args.out_dir}")
        elif args.command == "eval":
            report = cmd_eval(args.gt_dir, args.pred_dir, args.report)
            sys.stdout.write(report.table())
        else:
            cmd_svg(cfg, args.scene, args.out_svg, args.pred)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OriCornerError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""File formats: polygon JSON, ``.grid`` rasters and flat key = value configs.

All writes go through a temporary file in the target directory followed by
an atomic rename.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError
from .geom import Polygon
from .metrics import InstancePrediction
from .targets import CHANNELS, RasterStack

PathLike = Union[str, os.PathLike]

_SCENE_RE = re.compile(r"^scene_(\d+)\.(gt|pred)\.json$")


def atomic_write(path: PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- polygon JSON ---------------------------------------------------------------

def scene_filename(scene: int, kind: str) -> str:
    return f"scene_{scene}.{kind}.json"


def grid_filename(scene: int, instance: int) -> str:
    return f"scene_{scene}.{instance}.grid"


def dumps_instances(scene: int, instances: Sequence[InstancePrediction]) -> str:
    items = []
    for inst in instances:
        item = {
            "id": int(inst.id),
            "polygon": [[float(x), float(y)] for x, y in inst.polygon.vertices],
            "score": float(inst.score),
        }
        if inst.fallback:
            item["fallback"] = True
        items.append(item)
    return json.dumps({"scene": scene, "instances": items}, indent=1) + "\n"


def write_instances(path: PathLike, scene: int, instances: Sequence[InstancePrediction]) -> None:
    atomic_write(path, dumps_instances(scene, instances))


def write_ground_truth(path: PathLike, scene: int, polygons: Sequence[Polygon]) -> None:
    write_instances(path, scene, [InstancePrediction(i, p, 1.0) for i, p in enumerate(polygons)])


def read_instances(path: PathLike) -> Tuple[int, List[InstancePrediction]]:
    """Scene id and instances of a polygon JSON file.

    Raises ValueError on malformed content.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        scene = int(doc["scene"])
        out = []
        for item in doc["instances"]:
            out.append(InstancePrediction(
                id=int(item["id"]),
                polygon=Polygon(item["polygon"]),
                score=float(item.get("score", 1.0)),
                fallback=bool(item.get("fallback", False)),
            ))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed polygon file ({exc})") from exc
    return scene, out


def list_scenes(directory: PathLike, kind: str) -> Dict[int, Path]:
    """Scene id -> path for every ``scene_<k>.<kind>.json`` in ``directory``."""
    found = {}
    for entry in Path(directory).iterdir():
        m = _SCENE_RE.match(entry.name)
        if m and m.group(2) == kind:
            found[int(m.group(1))] = entry
    return dict(sorted(found.items()))


# -- .grid rasters -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_grid(rasters: RasterStack) -> str:
    arr = rasters.to_array()
    h, w, c = arr.shape
    lines = [f"GRID {h} {w} {c} {','.join(CHANNELS)}"]
    for row in arr.reshape(h * w, c):
        lines.append(" ".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def write_grid(path: PathLike, rasters: RasterStack) -> None:
    atomic_write(path, dumps_grid(rasters))


def loads_grid(text: str) -> RasterStack:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty grid file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "GRID":
        raise ValueError(f"bad grid header: {lines[0]!r}")
    h, w, c = (int(x) for x in head[1:4])
    names = tuple(head[4].split(","))
    if names != CHANNELS or c != len(CHANNELS):
        raise ValueError(f"unexpected channels {names}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != h * w:
        raise ValueError(f"expected {h * w} rows, found {len(body)}")
    arr = np.array([[float(x) for x in ln.split()] for ln in body])
    if arr.shape != (h * w, c):
        raise ValueError("ragged grid rows")
    return RasterStack.from_array(arr.reshape(h, w, c))


def read_grid(path: PathLike) -> RasterStack:
    with open(path, encoding="utf-8") as fh:
        return loads_grid(fh.read())


def scene_grids(directory: PathLike, scene: int) -> List[Path]:
    """Instance grid files of one scene, ordered by instance index."""
    pat = re.compile(rf"^scene_{scene}\.(\d+)\.grid$")
    hits = []
    for entry in Path(directory).iterdir():
        m = pat.match(entry.name)
        if m:
            hits.append((int(m.group(1)), entry))
    return [p for _, p in sorted(hits)]


# -- config ------------------------------------------------------------------------

def parse_config(text: str, source: str = "<config>") -> Dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` starts a comment."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config(path: PathLike) -> Dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def dumps_config(values: Dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


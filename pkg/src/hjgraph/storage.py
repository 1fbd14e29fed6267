"""Content-hashed array cache, CSV writing and flat key=value configs."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .averaging import AveragedTable
from .levelset import EdgeProfile, LevelLoop

CACHE_ENV = "HJGRAPH_CACHE"


def cache_dir() -> Path:
    root = os.environ.get(CACHE_ENV) or os.path.join(os.path.expanduser("~"), ".cache", "hjgraph")
    p = Path(root)
    p.mkdir(parents=True, exist_ok=True)
    return p


def content_key(**params) -> str:
    text = json.dumps(params, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:32]


# --- profiles ------------------------------------------------------------------


def _pack_profile(p: EdgeProfile) -> dict:
    sizes = np.array([len(lp.vertices) for lp in p.loops], np.int64)
    return {
        "edge": np.array(p.edge), "h": p.h, "L": p.L, "T": p.T,
        "truncated": np.array(p.truncated),
        "sizes": sizes,
        "levels": np.array([lp.level for lp in p.loops]),
        "residuals": np.array([lp.residual for lp in p.loops]),
        "vertices": np.concatenate([lp.vertices for lp in p.loops]) if p.loops else np.empty((0, 2)),
        "arclength": np.concatenate([lp.arclength for lp in p.loops]) if p.loops else np.empty(0),
        "weights": np.concatenate([lp.weights for lp in p.loops]) if p.loops else np.empty(0),
    }


def _unpack_profile(z) -> EdgeProfile:
    edge = int(z["edge"])
    cuts = np.concatenate([[0], np.cumsum(z["sizes"])])
    loops = [LevelLoop(edge, float(lv), z["vertices"][a:b].copy(), z["arclength"][a:b].copy(),
                       z["weights"][a:b].copy(), float(r))
             for lv, r, a, b in zip(z["levels"], z["residuals"], cuts[:-1], cuts[1:])]
    return EdgeProfile(edge, z["h"].copy(), z["L"].copy(), z["T"].copy(), loops, bool(z["truncated"]))


def save_profiles(path: Path, profiles: list[EdgeProfile]):
    arrays = {}
    for k, p in enumerate(profiles):
        for name, arr in _pack_profile(p).items():
            arrays[f"{k}_{name}"] = arr
    arrays["count"] = np.array(len(profiles))
    np.savez(path, **arrays)


def load_profiles(path: Path) -> list[EdgeProfile]:
    with np.load(path) as z:
        out = []
        for k in range(int(z["count"])):
            sub = {name[len(f"{k}_"):]: z[name] for name in z.files if name.startswith(f"{k}_")}
            out.append(_unpack_profile(sub))
    return out


def save_tables(path: Path, tables: list[AveragedTable]):
    arrays = {"count": np.array(len(tables))}
    for k, t in enumerate(tables):
        arrays.update({f"{k}_edge": np.array(t.edge), f"{k}_h": t.h, f"{k}_q": t.q,
                       f"{k}_values": t.values, f"{k}_L": t.L, f"{k}_T": t.T,
                       f"{k}_scalars": np.array([t.nu, t.M, t.G00]),
                       f"{k}_label": np.array(t.cost_label)})
    np.savez(path, **arrays)


def load_tables(path: Path) -> list[AveragedTable]:
    with np.load(path) as z:
        out = []
        for k in range(int(z["count"])):
            nu, M, G00 = z[f"{k}_scalars"]
            out.append(AveragedTable(int(z[f"{k}_edge"]), z[f"{k}_h"].copy(), z[f"{k}_q"].copy(),
                                     z[f"{k}_values"].copy(), z[f"{k}_L"].copy(), z[f"{k}_T"].copy(),
                                     float(nu), float(M), float(G00), str(z[f"{k}_label"])))
    return out


def cached(kind: str, key: str, build, save, load, use_cache: bool = True):
    """Return load(path) on a hit; otherwise build(), save and return it."""
    if not use_cache:
        return build()
    path = cache_dir() / f"{kind}-{key}.npz"
    if path.exists():
        try:
            return load(path)
        except (OSError, KeyError, ValueError):
            path.unlink(missing_ok=True)
    obj = build()
    tmp = path.with_name(path.stem + f".{os.getpid()}.tmp.npz")
    save(tmp, obj)
    os.replace(tmp, path)
    return obj


# --- CSV and config --------------------------------------------------------------


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


def emit_csv(stream, header, rows):
    w = csv.writer(stream)
    w.writerow(header)
    for r in rows:
        w.writerow(r)


def read_flat_config(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


class DirectoryLock:
    """Exclusive lock file inside an output directory."""

    def __init__(self, directory):
        self.path = Path(directory) / ".hj.lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"output directory is locked by another run ({self.path})") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False

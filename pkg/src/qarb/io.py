"""CSV/JSON emission, staged output directories and run manifests."""
from __future__ import annotations

import contextlib
import hashlib
import json
import os
import shutil
import tempfile

import numpy as np


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().strip().splitlines()
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def staged_output(out_dir):
    """Yield a scratch directory; its files move into out_dir only on success."""
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".qarb-", dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(os.listdir(tmp)):
        os.replace(os.path.join(tmp, name), os.path.join(out_dir, name))
    shutil.rmtree(tmp, ignore_errors=True)


MANIFEST = "run_manifest.json"


def write_manifest(stage_dir, out_dir, *, command, config_text, seed, version, wall_clock, files):
    """Manifest with output hashes, chained to the previous manifest in out_dir."""
    prev = os.path.join(out_dir, MANIFEST)
    prev_hash = sha256_file(prev) if os.path.exists(prev) else None
    outputs = [{"file": f, "sha256": sha256_file(os.path.join(stage_dir, f))} for f in sorted(files)]
    write_json(os.path.join(stage_dir, MANIFEST), {
        "command": command,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "version": version,
        "seed": seed,
        "wall_clock_seconds": wall_clock,
        "outputs": outputs,
        "previous_manifest_hash": prev_hash,
    })

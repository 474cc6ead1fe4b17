"""Stage artifacts: provenance headers, atomic writes, tables and model files.

Every file starts with one ``# popdyn <version> key=value ...`` line; the
payload follows. Models are JSON payloads carrying a format version and a
hash of their feature columns.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import ShapeModel
from .forest import ForestModel, Tree, params_from_dict, params_to_dict
from .svr import Standardizer, SvrModel

MODEL_FORMAT = 1


class ArtifactError(RuntimeError):
    pass


def provenance_line(**fields) -> str:
    parts = [f"# popdyn {__version__}"]
    parts += [f"{k}={v}" for k, v in fields.items()]
    return " ".join(parts)


def parse_provenance(line: str) -> dict:
    if not line.startswith("# popdyn"):
        return {}
    out = {}
    for tok in line[1:].split()[2:]:
        k, _, v = tok.partition("=")
        out[k] = v
    return out


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def write_table(path, header, rows, provenance: str) -> None:
    buf = io.StringIO()
    buf.write(provenance + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def read_table(path, what: str = "table"):
    """(provenance dict, header, rows) of a table written by ``write_table``."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing {what} file: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        first = fh.readline()
        prov = parse_provenance(first)
        if not prov and not first.startswith("#"):
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ArtifactError(f"{path}: empty {what}")
        rows = [r for r in reader if r]
    return prov, header, rows


def payload_bytes(path) -> bytes:
    """File content without its provenance line."""
    data = Path(path).read_bytes()
    if data.startswith(b"#"):
        data = data.split(b"\n", 1)[1] if b"\n" in data else b""
    return data


def schema_hash(columns) -> str:
    return hashlib.sha256("\n".join(columns).encode("utf-8")).hexdigest()[:16]


def _json_clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return _json_clean(float(obj))
    return obj


def write_json(path, payload: dict, provenance: str) -> None:
    text = json.dumps(_json_clean(payload), indent=1, sort_keys=True)
    atomic_write_text(path, provenance + "\n" + text + "\n")


def read_json(path, what: str = "json"):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing {what} file: {path}")
    text = path.read_text(encoding="utf-8")
    prov = {}
    if text.startswith("#"):
        first, _, text = text.partition("\n")
        prov = parse_provenance(first)
    try:
        return prov, json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: malformed {what}: {exc}") from None


# -- shape prototypes -----------------------------------------------------------

def write_prototypes(path, model: ShapeModel, provenance_fields: dict) -> None:
    n_cols = model.prototypes.shape[1]
    header = ["prototype_id"] + [f"s{t:02d}" for t in range(1, 31)]
    if n_cols > 30:
        header.append("area")
    rows = [[str(j)] + [fmt_float(v) for v in row] for j, row in enumerate(model.prototypes)]
    fields = dict(provenance_fields, method=model.method, with_area=int(model.with_area),
                  **{k: v for k, v in model.params.items() if k in ("k", "bandwidth", "restarts")})
    write_table(path, header, rows, provenance_line(**fields))


def read_prototypes(path) -> tuple[dict, np.ndarray]:
    prov, header, rows = read_table(path, "prototypes")
    if not header or header[0] != "prototype_id":
        raise ArtifactError(f"{path}: not a prototypes file")
    protos = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return prov, protos


def write_labels(path, model: ShapeModel, provenance: str) -> None:
    rows = [[str(i), str(int(lab))] for i, lab in zip(model.ids, model.labels)]
    write_table(path, ["image_id", "prototype_id"], rows, provenance)


def read_labels(path) -> dict:
    _, header, rows = read_table(path, "labels")
    if header[:2] != ["image_id", "prototype_id"]:
        raise ArtifactError(f"{path}: not a labels file")
    return {r[0]: int(r[1]) for r in rows}


# -- models ------------------------------------------------------------------

def forest_to_dict(model: ForestModel) -> dict:
    return {
        "kind": "forest",
        "format": MODEL_FORMAT,
        "schema_hash": schema_hash(model.columns),
        "columns": list(model.columns),
        "n_features": model.n_features,
        "params": params_to_dict(model.params),
        "seed": model.seed,
        "class_labels": [int(c) for c in model.class_labels],
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in model.trees
        ],
        "meta": model.meta,
    }


def _check_model(d: dict, kind: str, path) -> None:
    if d.get("kind") != kind:
        raise ArtifactError(f"{path}: expected a {kind} model")
    if d.get("format") != MODEL_FORMAT:
        raise ArtifactError(f"{path}: unsupported model format {d.get('format')}")
    if schema_hash(d["columns"]) != d["schema_hash"]:
        raise ArtifactError(f"{path}: feature schema hash mismatch")


def forest_from_dict(d: dict, path="<model>") -> ForestModel:
    _check_model(d, "forest", path)
    trees = [
        Tree(
            feature=np.asarray(t["feature"], dtype=np.intp),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.intp),
            right=np.asarray(t["right"], dtype=np.intp),
            value=np.asarray(t["value"], dtype=np.int64),
        )
        for t in d["trees"]
    ]
    return ForestModel(trees, params_from_dict(d["params"]), d["seed"],
                       np.asarray(d["class_labels"]), tuple(d["columns"]), d["n_features"],
                       d.get("meta", {}))


def svr_to_dict(model: SvrModel) -> dict:
    sv = model.support_coefficients != 0
    st = model.standardizer
    return {
        "kind": "svr",
        "format": MODEL_FORMAT,
        "schema_hash": schema_hash(st.input_columns),
        "columns": list(st.input_columns),
        "kernel": model.kernel,
        "gamma": model.gamma,
        "C": model.C,
        "epsilon": model.epsilon,
        "bias": model.bias,
        "target_transform": model.target_transform,
        "coefficients": model.support_coefficients[sv].tolist(),
        "support_vectors": model.train_matrix[sv].tolist(),
        "standardizer": {
            "keep": [bool(k) for k in st.keep],
            "mean": st.mean.tolist(),
            "std": st.std.tolist(),
            "dropped": list(st.dropped),
        },
        "iterations": model.iterations,
        "converged": model.converged,
        "seed": model.seed,
        "meta": model.meta,
    }


def svr_from_dict(d: dict, path="<model>") -> SvrModel:
    _check_model(d, "svr", path)
    s = d["standardizer"]
    st = Standardizer(tuple(d["columns"]), np.asarray(s["keep"], dtype=bool),
                      np.asarray(s["mean"], dtype=np.float64),
                      np.asarray(s["std"], dtype=np.float64), tuple(s["dropped"]))
    n_kept = int(st.keep.sum())
    sv = np.asarray(d["support_vectors"], dtype=np.float64).reshape(-1, n_kept)
    return SvrModel(d["kernel"], d["gamma"], d["C"], d["epsilon"],
                    np.asarray(d["coefficients"], dtype=np.float64), sv, d["bias"], st,
                    d["target_transform"], d["iterations"], d["converged"], d["seed"],
                    d.get("meta", {}))

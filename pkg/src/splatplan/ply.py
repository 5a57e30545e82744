"""PLY serialization for splat models and ground-truth point samples.

Splat vertices carry x,y,z,scale_0..2,rot_0..3,opacity,red,green,blue (doubles;
``opacity`` is the raw logit). Ground-truth vertices carry x,y,z,label where
label is a uchar index into a table written as header comments
(``comment label <index> <name>``). Both ASCII and binary little-endian
formats are supported.
"""

from __future__ import annotations

import numpy as np

from .geometry import GroundTruth, SplatModel

SPLAT_PROPS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "red", "green", "blue",
)


def _header(kind: str, count: int, binary: bool, comments=(), props=()):
    lines = ["ply"]
    lines.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    lines.append(f"comment splatplan {kind}")
    lines.extend(comments)
    lines.append(f"element vertex {count}")
    lines.extend(props)
    lines.append("end_header")
    return "\n".join(lines) + "\n"


def save_splat_model(path, model: SplatModel, binary: bool = True) -> None:
    rows = np.column_stack(
        [model.means, model.scales, model.rotations, model.opacity_logits, model.colors]
    )
    props = [f"property double {p}" for p in SPLAT_PROPS]
    header = _header("splat", len(model), binary, comments=[f"comment object_id {model.object_id}"], props=props)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(rows.astype("<f8").tobytes())
        else:
            np.savetxt(f, rows, fmt="%.17g")


def save_ground_truth(path, truth: GroundTruth, binary: bool = True) -> None:
    labels = truth.label_set()
    index = {lab: i for i, lab in enumerate(labels)}
    codes = np.array([index[l] for l in truth.region_labels], dtype=np.uint8)
    comments = [f"comment label {i} {lab}" for i, lab in enumerate(labels)]
    props = ["property double x", "property double y", "property double z", "property uchar label"]
    header = _header("ground_truth", len(codes), binary, comments=comments, props=props)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            rec = np.zeros(len(codes), dtype=[("xyz", "<f8", 3), ("label", "u1")])
            rec["xyz"] = truth.surface_points
            rec["label"] = codes
            f.write(rec.tobytes())
        else:
            for p, c in zip(truth.surface_points, codes):
                f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {int(c)}\n".encode("ascii"))


def _parse_header(data: bytes):
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError("not a PLY file: missing end_header")
    header = data[: end + len(b"end_header\n")].decode("ascii")
    body = data[end + len(b"end_header\n"):]
    lines = [ln.strip() for ln in header.splitlines()]
    if not lines or lines[0] != "ply":
        raise ValueError("not a PLY file")
    fmt = None
    count = None
    props = []
    comments = []
    for ln in lines[1:]:
        if ln.startswith("format"):
            fmt = ln.split()[1]
        elif ln.startswith("comment"):
            comments.append(ln[len("comment"):].strip())
        elif ln.startswith("element vertex"):
            count = int(ln.split()[2])
        elif ln.startswith("property"):
            parts = ln.split()
            props.append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format {fmt!r}")
    if count is None:
        raise ValueError("missing vertex element")
    return fmt, count, props, comments, body


_NP_TYPES = {"double": "<f8", "float": "<f4", "uchar": "u1", "int": "<i4", "uint": "<u4"}


def _read_rows(fmt, count, props, body):
    dtype = np.dtype([(name, _NP_TYPES[t]) for t, name in props])
    if fmt == "binary_little_endian":
        return np.frombuffer(body[: dtype.itemsize * count], dtype=dtype, count=count)
    text = body.decode("ascii").split()
    ncol = len(props)
    vals = np.array(text[: count * ncol], dtype=float).reshape(count, ncol)
    rec = np.zeros(count, dtype=dtype)
    for i, (_, name) in enumerate(props):
        rec[name] = vals[:, i]
    return rec


def load_splat_model(path) -> SplatModel:
    with open(path, "rb") as f:
        data = f.read()
    fmt, count, props, comments, body = _parse_header(data)
    names = [name for _, name in props]
    missing = [p for p in SPLAT_PROPS if p not in names]
    if missing:
        raise ValueError(f"splat PLY missing properties: {missing}")
    rec = _read_rows(fmt, count, props, body)
    object_id = "object"
    for c in comments:
        if c.startswith("object_id "):
            object_id = c[len("object_id "):]
    cols = {name: np.asarray(rec[name], dtype=float) for name in SPLAT_PROPS}
    return SplatModel(
        np.column_stack([cols["x"], cols["y"], cols["z"]]),
        np.column_stack([cols["scale_0"], cols["scale_1"], cols["scale_2"]]),
        np.column_stack([cols["rot_0"], cols["rot_1"], cols["rot_2"], cols["rot_3"]]),
        cols["opacity"],
        np.column_stack([cols["red"], cols["green"], cols["blue"]]),
        object_id=object_id,
    )


def load_ground_truth(path) -> GroundTruth:
    with open(path, "rb") as f:
        data = f.read()
    fmt, count, props, comments, body = _parse_header(data)
    rec = _read_rows(fmt, count, props, body)
    table = {}
    for c in comments:
        parts = c.split(maxsplit=2)
        if len(parts) == 3 and parts[0] == "label":
            table[int(parts[1])] = parts[2]
    codes = np.asarray(rec["label"], dtype=int)
    labels = [table[int(c)] for c in codes]
    pts = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(float)
    return GroundTruth(pts, labels)

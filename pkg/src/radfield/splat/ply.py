"""Binary little-endian PLY: splat layout understood by common viewers, plus plain colored point clouds."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, MalformedManifestError
from .gaussians import Gaussians

_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "short": "<i2",
    "ushort": "<u2",
}


def splat_property_names(degree: int) -> list[str]:
    n_rest = 3 * ((degree + 1) ** 2 - 1)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def _header(n: int, props: list[tuple[str, str]]) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property {t} {name}" for name, t in props]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def splat_export(g: Gaussians) -> bytes:
    """One float32 vertex per Gaussian; opacity stays a logit, scales stay logs, normals are zero."""
    n = len(g)
    if n == 0:
        raise DomainError("cannot export an empty scene")
    names = splat_property_names(g.degree)
    # f_rest is channel-major: all higher-band coefficients of red, then green, then blue
    rest = np.transpose(g.sh[:, 1:, :], (0, 2, 1)).reshape(n, -1)
    cols = np.concatenate(
        [g.means, np.zeros((n, 3)), g.sh[:, 0, :], rest, g.opacity_logits[:, None], g.log_scales, g.quats], axis=1
    )
    body = np.ascontiguousarray(cols, dtype="<f4").tobytes()
    return _header(n, [(name, "float") for name in names]) + body


def parse_ply(data: bytes) -> dict[str, np.ndarray]:
    """Vertex properties of a binary little-endian PLY, keyed by name."""
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedManifestError("not a PLY file", field="header")
    header = data[:end].decode("ascii").splitlines()
    count = None
    fields = []
    in_vertex = False
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise MalformedManifestError(f"unsupported PLY format {parts[1]}", field="format")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
            elif count is not None:
                break
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list" or parts[1] not in _TYPES:
                raise MalformedManifestError(f"unsupported vertex property {line!r}", field="property")
            fields.append((parts[2], _TYPES[parts[1]]))
    if count is None:
        raise MalformedManifestError("PLY has no vertex element", field="element")
    dtype = np.dtype(fields)
    body = data[end + len(b"end_header\n") :]
    if len(body) < count * dtype.itemsize:
        raise MalformedManifestError("PLY body is truncated", field="body")
    arr = np.frombuffer(body, dtype=dtype, count=count)
    return {name: arr[name].copy() for name, _ in fields}


def parse_splat_ply(data: bytes) -> Gaussians:
    props = parse_ply(data)
    n_rest = sum(1 for k in props if k.startswith("f_rest_"))
    k = n_rest // 3 + 1
    degree = int(round(np.sqrt(k))) - 1
    if 3 * ((degree + 1) ** 2 - 1) != n_rest:
        raise MalformedManifestError(f"{n_rest} f_rest properties do not form a full SH degree", field="f_rest")
    f64 = lambda names: np.stack([props[nm].astype(np.float64) for nm in names], axis=1)
    n = len(props["x"])
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = f64(["f_dc_0", "f_dc_1", "f_dc_2"])
    if n_rest:
        rest = f64([f"f_rest_{i}" for i in range(n_rest)]).reshape(n, 3, k - 1)
        sh[:, 1:, :] = np.transpose(rest, (0, 2, 1))
    return Gaussians(
        means=f64(["x", "y", "z"]),
        log_scales=f64(["scale_0", "scale_1", "scale_2"]),
        quats=f64(["rot_0", "rot_1", "rot_2", "rot_3"]),
        opacity_logits=props["opacity"].astype(np.float64),
        sh=sh,
    )


def pointcloud_export(xyz, rgb) -> bytes:
    """Float positions with 8-bit colors; ``rgb`` in [0, 1]."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    arr = np.empty(n, dtype=dtype)
    for i, c in enumerate("xyz"):
        arr[c] = xyz[:, i]
    q = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    for i, c in enumerate(("red", "green", "blue")):
        arr[c] = q[:, i]
    props = [("x", "float"), ("y", "float"), ("z", "float"), ("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    return _header(n, props) + arr.tobytes()

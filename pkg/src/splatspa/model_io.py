"""Persistence: binary checkpoints for exact resume, splat-PLY interchange
with a standalone top-k simplify, and 8-bit image I/O.

Checkpoint layout: an 8-byte magic, a little-endian uint32 format version,
a little-endian uint64 header length, a canonical JSON header describing
every array (name, dtype, shape) plus all scalar state, then the raw
little-endian array payloads in header order. Loading a file written by a
different format version fails loudly rather than reinterpreting.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image

from .errors import (
    CorruptCheckpointError,
    InvalidBudgetError,
    PlyError,
    PlySchemaError,
    ShapeMismatchError,
    UnsupportedImageError,
    VersionMismatchError,
)
from .gs_core import CLOUD_COLUMNS, PARAM_COLUMNS, GaussianCloud, sigmoid
from .loss_metrics import LossConfig
from .renderer import RenderSettings
from .sparsifier import ProjectionCriterion, SparsifierState, top_k_indices
from .trainer import AdamState, OneShotConfig, SparsifyConfig, TrainSchedule

CHECKPOINT_MAGIC = b"SPSACKPT"
CHECKPOINT_VERSION = 1


@dataclass
class CheckpointModel:
    """Everything a training session needs to resume bit-identically,
    except the target image itself."""

    version: int
    iteration: int
    mode: str
    cloud: GaussianCloud
    optimizer: AdamState
    sparsifier: SparsifierState | None
    schedule: TrainSchedule
    sparsify_config: SparsifyConfig | None
    oneshot_config: OneShotConfig | None
    loss_config: LossConfig
    render_settings: RenderSettings
    rng_state: dict


def _le(arr):
    """Contiguous little-endian copy-view of an array for writing."""
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    return arr.astype(dt, copy=False)


def _collect_arrays(model):
    arrays = []
    for col in CLOUD_COLUMNS:
        arrays.append((f"cloud.{col}", getattr(model.cloud, col)))
    for key in PARAM_COLUMNS:
        arrays.append((f"adam.m.{key}", model.optimizer.m[key]))
        arrays.append((f"adam.v.{key}", model.optimizer.v[key]))
    if model.sparsifier is not None:
        arrays.append(("sparsifier.z", model.sparsifier.z))
        arrays.append(("sparsifier.lam", model.sparsifier.lam))
    cfg = model.sparsify_config
    if cfg is not None and cfg.criterion is not None and cfg.criterion.scores is not None:
        arrays.append(("sparsify_config.scores",
                       np.asarray(cfg.criterion.scores, dtype=np.float64)))
    return arrays


def save_checkpoint(model, path):
    """Write the model; the byte stream is a pure function of its state."""
    arrays = [(name, _le(arr)) for name, arr in _collect_arrays(model)]
    spars = model.sparsifier
    cfg = model.sparsify_config
    header = {
        "iteration": model.iteration,
        "mode": model.mode,
        "schedule": asdict(model.schedule),
        "optimizer": {
            "beta1": model.optimizer.beta1,
            "beta2": model.optimizer.beta2,
            "eps": model.optimizer.eps,
            "step_count": model.optimizer.step_count,
        },
        "sparsifier": None if spars is None else {
            "delta": spars.delta, "kappa": spars.kappa, "epsilon": spars.epsilon,
            "max_outer": spars.max_outer,
            "sparsify_interval": spars.sparsify_interval,
            "outer_count": spars.outer_count, "converged": spars.converged,
        },
        "sparsify_config": None if cfg is None else {
            "kappa": cfg.kappa, "delta": cfg.delta, "epsilon": cfg.epsilon,
            "max_outer": cfg.max_outer, "interval": cfg.interval,
            "criterion_kind": None if cfg.criterion is None else cfg.criterion.kind,
        },
        "oneshot_config": None if model.oneshot_config is None
        else asdict(model.oneshot_config),
        "loss_config": asdict(model.loss_config),
        "render_settings": asdict(model.render_settings),
        "rng_state": model.rng_state,
        "arrays": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in arrays
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.uint32(model.version).tobytes())
        f.write(np.uint64(len(blob)).tobytes())
        f.write(blob)
        for _, arr in arrays:
            f.write(arr.tobytes())


def _read_exact(f, count, what):
    buf = f.read(count)
    if len(buf) != count:
        raise CorruptCheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = _read_exact(f, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CorruptCheckpointError("not a splatspa checkpoint (bad magic)")
        version = int(np.frombuffer(_read_exact(f, 4, "version"), "<u4")[0])
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(
                f"checkpoint has format version {version}, this build supports "
                f"version {CHECKPOINT_VERSION}")
        hlen = int(np.frombuffer(_read_exact(f, 8, "header length"), "<u8")[0])
        try:
            header = json.loads(_read_exact(f, hlen, "header"))
        except json.JSONDecodeError as e:
            raise CorruptCheckpointError(f"corrupt checkpoint header: {e}") from e
        arrays = {}
        for spec in header["arrays"]:
            dt = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            buf = _read_exact(f, count * dt.itemsize, spec["name"])
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dt).reshape(
                spec["shape"]).copy()
        if f.read(1):
            raise CorruptCheckpointError("trailing bytes after checkpoint payload")

    cloud = GaussianCloud(*(arrays[f"cloud.{c}"] for c in CLOUD_COLUMNS))
    opt_h = header["optimizer"]
    optimizer = AdamState(cloud, beta1=opt_h["beta1"], beta2=opt_h["beta2"],
                          eps=opt_h["eps"])
    optimizer.step_count = opt_h["step_count"]
    for key in PARAM_COLUMNS:
        optimizer.m[key] = arrays[f"adam.m.{key}"]
        optimizer.v[key] = arrays[f"adam.v.{key}"]

    sparsifier = None
    if header["sparsifier"] is not None:
        sh = header["sparsifier"]
        sparsifier = SparsifierState(
            z=arrays["sparsifier.z"], lam=arrays["sparsifier.lam"],
            delta=sh["delta"], kappa=sh["kappa"], epsilon=sh["epsilon"],
            max_outer=sh["max_outer"], sparsify_interval=sh["sparsify_interval"],
            outer_count=sh["outer_count"], converged=sh["converged"])

    sparsify_config = None
    if header["sparsify_config"] is not None:
        ch = header["sparsify_config"]
        criterion = None
        if ch["criterion_kind"] is not None:
            criterion = ProjectionCriterion(
                kind=ch["criterion_kind"],
                scores=arrays.get("sparsify_config.scores"))
        sparsify_config = SparsifyConfig(
            kappa=ch["kappa"], delta=ch["delta"], epsilon=ch["epsilon"],
            max_outer=ch["max_outer"], interval=ch["interval"],
            criterion=criterion)

    oneshot_config = None
    if header["oneshot_config"] is not None:
        oneshot_config = OneShotConfig(**header["oneshot_config"])

    settings_h = dict(header["render_settings"])
    settings_h["background"] = tuple(settings_h["background"])
    return CheckpointModel(
        version=version,
        iteration=header["iteration"],
        mode=header["mode"],
        cloud=cloud,
        optimizer=optimizer,
        sparsifier=sparsifier,
        schedule=TrainSchedule(**header["schedule"]),
        sparsify_config=sparsify_config,
        oneshot_config=oneshot_config,
        loss_config=LossConfig(**header["loss_config"]),
        render_settings=RenderSettings(**settings_h),
        rng_state=header["rng_state"],
    )


# -- splat PLY interchange -------------------------------------------------

SPLAT_PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)

_PLY_TO_NUMPY = {
    "char": "|i1", "int8": "|i1", "uchar": "|u1", "uint8": "|u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}
_NUMPY_TO_PLY = {"|i1": "char", "|u1": "uchar", "<i2": "short", "<u2": "ushort",
                 "<i4": "int", "<u4": "uint", "<f4": "float", "<f8": "double"}


def splat_ply_dtype(extra=()):
    """Structured dtype of the required splat properties (float32), plus
    optional (name, dtype) extras."""
    fields = [(name, "<f4") for name in SPLAT_PLY_PROPERTIES]
    fields.extend(extra)
    return np.dtype(fields)


@dataclass
class SplatPlyRecord:
    """Vertex table of a binary splat PLY. The structured array preserves
    property order and dtypes, so payloads round-trip byte-exactly.
    Unknown extra properties ride along untouched."""

    vertices: np.ndarray

    @property
    def n(self):
        return self.vertices.shape[0]

    @property
    def property_names(self):
        return list(self.vertices.dtype.names)

    def opacities(self):
        """Activated per-vertex opacities (the stored value is a logit)."""
        return sigmoid(self.vertices["opacity"].astype(np.float64))


def read_splat_ply(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise PlyError("not a PLY file")
        fmt = f.readline().strip()
        if fmt != b"format binary_little_endian 1.0":
            raise PlyError(f"unsupported PLY format line: {fmt.decode(errors='replace')}")
        count = None
        props = []
        element = None
        while True:
            line = f.readline()
            if not line:
                raise PlyError("unexpected end of PLY header")
            parts = line.split()
            if not parts or parts[0] == b"comment":
                continue
            if parts[0] == b"end_header":
                break
            if parts[0] == b"element":
                element = parts[1].decode()
                if element == "vertex":
                    count = int(parts[2])
                elif int(parts[2]) != 0:
                    raise PlyError(f"unsupported PLY element: {element}")
            elif parts[0] == b"property":
                if element != "vertex":
                    continue
                if parts[1] == b"list":
                    raise PlyError("list properties are not supported")
                tname = parts[1].decode()
                if tname not in _PLY_TO_NUMPY:
                    raise PlyError(f"unsupported property type: {tname}")
                props.append((parts[2].decode(), _PLY_TO_NUMPY[tname]))
        if count is None:
            raise PlyError("PLY header has no vertex element")
        missing = [p for p in SPLAT_PLY_PROPERTIES if p not in {n for n, _ in props}]
        if missing:
            raise PlySchemaError(missing)
        dt = np.dtype(props)
        payload = f.read(count * dt.itemsize)
        if len(payload) != count * dt.itemsize:
            raise PlyError(f"truncated PLY payload: expected {count} vertices")
        return SplatPlyRecord(np.frombuffer(payload, dtype=dt).copy())


def write_splat_ply(record, path):
    dt = record.vertices.dtype
    lines = [b"ply", b"format binary_little_endian 1.0",
             b"element vertex " + str(record.n).encode()]
    for name in dt.names:
        key = dt.fields[name][0].str
        if key not in _NUMPY_TO_PLY:
            raise PlyError(f"cannot serialize property {name} of dtype {key}")
        lines.append(f"property {_NUMPY_TO_PLY[key]} {name}".encode())
    lines.append(b"end_header")
    with open(path, "wb") as f:
        f.write(b"\n".join(lines) + b"\n")
        f.write(np.ascontiguousarray(record.vertices).tobytes())


def simplify_splat_ply(record, kappa, scores=None):
    """Keep the kappa vertices ranked highest by activated opacity (or by
    the supplied score vector), preserving their original order and all
    their per-vertex data bit-exactly."""
    if kappa > record.n:
        raise InvalidBudgetError(f"kappa ({kappa}) exceeds vertex count ({record.n})")
    if scores is None:
        keys = record.opacities()
    else:
        keys = np.asarray(scores, dtype=np.float64)
        if keys.shape != (record.n,):
            raise ShapeMismatchError(
                f"score vector length {keys.shape} != vertex count {record.n}")
    keep = np.sort(top_k_indices(keys, int(kappa)))
    return SplatPlyRecord(record.vertices[keep].copy())


# -- images ------------------------------------------------------------------

def read_image(path):
    """Load an 8-bit PNG or PPM as an H x W x 3 float image in [0, 1]."""
    with Image.open(path) as img:
        if img.mode in ("I", "I;16", "F"):
            raise UnsupportedImageError(f"unsupported image mode {img.mode} in {path}")
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def write_image(image, path):
    """Quantize (round half up) to 8-bit and write a PNG or binary PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"expected H x W x 3 image, got {image.shape}")
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    path = str(path)
    if path.lower().endswith(".png"):
        Image.fromarray(q, mode="RGB").save(path, format="PNG")
    elif path.lower().endswith(".ppm"):
        Image.fromarray(q, mode="RGB").save(path, format="PPM")
    else:
        raise UnsupportedImageError(f"unsupported image extension: {path}")

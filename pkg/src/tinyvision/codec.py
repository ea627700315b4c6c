"""Weight and config serialization in the device's on-disk formats.

Two artifacts travel to the device:

  myWeights.bin  sentinel-bounded ASCII JSON header followed by raw
                 little-endian float32 arrays in the firmware's loop order
  myWeights.h    the same arrays as C float initializers, for baking the
                 model into the firmware at compile time

The firmware iterates weights in a different nesting order than the training
engine stores them, so three layout transpositions sit at the heart of this
module. Taking the browser training library's layout as the canonical
training-side order:

  conv1  [ky, kx, ic, f]  ->  [f, ky, kx, ic]
  conv2  [ky, kx, ic, f]  ->  [f, ic, ky, kx]
  dense  [flat, cls]      ->  [cls, f, y, x]   flat == (y*W + x)*F + f

Each transposition is a pure index permutation with an exact inverse. The
engine in model.py keeps conv kernels filter-major ([f, ky, kx, ic]); the
bundle builders below bridge between the two training-side conventions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec, ModelWeights

SENTINEL_BEGIN = "===WEIGHTS_HEADER_BEGIN==="
SENTINEL_END = "===WEIGHTS_HEADER_END==="


class WeightCodecError(ValueError):
    """Base for weight file decode failures."""


class MalformedHeader(WeightCodecError):
    """Sentinels or the JSON between them are missing or unparseable."""


class TruncatedWeights(WeightCodecError):
    """Header parsed fine but the float32 payload is the wrong length."""


class ConfigInvalid(ValueError):
    """config.json is missing a required field or holds an unusable value."""

    def __init__(self, fieldname: str, detail: str = ""):
        self.field = fieldname
        super().__init__(f"config field '{fieldname}'" + (f": {detail}" if detail else " is invalid"))


# ======================================================================
# layout transpositions
# ======================================================================

def transpose_conv1_to_device(w: np.ndarray) -> np.ndarray:
    """[ky, kx, ic, f] -> [f, ky, kx, ic]."""
    if w.ndim != 4 or w.shape[0] != 3 or w.shape[1] != 3:
        raise ValueError(f"conv1 training weights must be 3 x 3 x C x F, got {w.shape}")
    return np.ascontiguousarray(np.transpose(w, (3, 0, 1, 2)))


def transpose_conv1_from_device(w: np.ndarray) -> np.ndarray:
    """[f, ky, kx, ic] -> [ky, kx, ic, f]."""
    return np.ascontiguousarray(np.transpose(w, (1, 2, 3, 0)))


def transpose_conv2_to_device(w: np.ndarray) -> np.ndarray:
    """[ky, kx, ic, f] -> [f, ic, ky, kx]."""
    if w.ndim != 4 or w.shape[0] != 3 or w.shape[1] != 3:
        raise ValueError(f"conv2 training weights must be 3 x 3 x IC x F, got {w.shape}")
    return np.ascontiguousarray(np.transpose(w, (3, 2, 0, 1)))


def transpose_conv2_from_device(w: np.ndarray) -> np.ndarray:
    """[f, ic, ky, kx] -> [ky, kx, ic, f]."""
    return np.ascontiguousarray(np.transpose(w, (2, 3, 1, 0)))


def transpose_dense_to_device(w: np.ndarray, side: int, filters: int) -> np.ndarray:
    """[flat, cls] with flat == (y*W + x)*F + f  ->  [cls, f, y, x].

    side is the conv2 output side (W == H), filters its channel count F.
    """
    flat, classes = w.shape
    if flat != side * side * filters:
        raise ValueError(f"dense rows {flat} != {side}*{side}*{filters}")
    t = w.reshape(side, side, filters, classes)       # [y, x, f, cls]
    return np.ascontiguousarray(np.transpose(t, (3, 2, 0, 1)))


def transpose_dense_from_device(w: np.ndarray) -> np.ndarray:
    """[cls, f, y, x] -> [flat, cls]."""
    classes, filters, side, _ = w.shape
    t = np.transpose(w, (2, 3, 1, 0))                 # [y, x, f, cls]
    return np.ascontiguousarray(t.reshape(side * side * filters, classes))


def engine_to_training_layout(w: np.ndarray) -> np.ndarray:
    """Engine conv kernels [f, ky, kx, ic] -> training-side [ky, kx, ic, f]."""
    return np.ascontiguousarray(np.transpose(w, (1, 2, 3, 0)))


def training_to_engine_layout(w: np.ndarray) -> np.ndarray:
    """Training-side [ky, kx, ic, f] -> engine [f, ky, kx, ic]."""
    return np.ascontiguousarray(np.transpose(w, (3, 0, 1, 2)))


# ======================================================================
# header metadata
# ======================================================================

@dataclass
class HeaderMeta:
    """Architecture metadata serialized into the weight file header."""

    version: int
    input_size: int
    num_classes: int
    class_labels: list
    grayscale: bool
    conv1_filters: int = 4
    conv2_filters: int = 8
    conv2_out: int = 0

    def __post_init__(self):
        if self.num_classes != len(self.class_labels):
            raise MalformedHeader(
                f"numClasses {self.num_classes} != {len(self.class_labels)} labels")
        if self.conv2_out == 0:
            self.conv2_out = (self.input_size - 2) // 2 - 2

    @property
    def channels(self) -> int:
        return 1 if self.grayscale else 3

    def to_spec(self) -> ModelSpec:
        return ModelSpec(input_size=self.input_size, channels=self.channels,
                         conv1_filters=self.conv1_filters, conv2_filters=self.conv2_filters,
                         num_classes=self.num_classes)

    def to_json_dict(self) -> dict:
        return {"version": self.version, "inputSize": self.input_size,
                "numClasses": self.num_classes, "classLabels": list(self.class_labels),
                "grayscale": self.grayscale, "f1": self.conv1_filters,
                "f2": self.conv2_filters, "conv2Out": self.conv2_out}

    @classmethod
    def from_json_dict(cls, d: dict) -> "HeaderMeta":
        try:
            return cls(version=int(d["version"]), input_size=int(d["inputSize"]),
                       num_classes=int(d["numClasses"]), class_labels=list(d["classLabels"]),
                       grayscale=bool(d["grayscale"]), conv1_filters=int(d["f1"]),
                       conv2_filters=int(d["f2"]), conv2_out=int(d["conv2Out"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedHeader(f"bad header field: {exc}") from exc


@dataclass
class WeightBundle:
    """Device-order weight arrays plus the header that describes them.

    conv1 is [f, ky, kx, ic], conv2 is [f, ic, ky, kx], dense is
    [cls, f, y, x]; biases are flat. All float32. Serialization order is
    conv1, conv1_bias, conv2, conv2_bias, dense, dense_bias.
    """

    meta: HeaderMeta
    conv1: np.ndarray
    conv1_bias: np.ndarray
    conv2: np.ndarray
    conv2_bias: np.ndarray
    dense: np.ndarray
    dense_bias: np.ndarray

    ARRAYS = ("conv1", "conv1_bias", "conv2", "conv2_bias", "dense", "dense_bias")

    def arrays(self):
        return [(name, getattr(self, name)) for name in self.ARRAYS]


def _bundle_shapes(meta: HeaderMeta):
    c = meta.channels
    f1, f2, side, k = meta.conv1_filters, meta.conv2_filters, meta.conv2_out, meta.num_classes
    return {"conv1": (f1, 3, 3, c), "conv1_bias": (f1,),
            "conv2": (f2, f1, 3, 3), "conv2_bias": (f2,),
            "dense": (k, f2, side, side), "dense_bias": (k,)}


def weights_to_bundle(weights: ModelWeights, meta: HeaderMeta) -> WeightBundle:
    """Convert engine-layout ModelWeights into a device-order bundle."""
    spec = meta.to_spec()
    if weights.dense_w.shape != (spec.flatten_size, spec.num_classes):
        raise ValueError(f"weights do not match header meta: dense {weights.dense_w.shape} "
                         f"vs flatten {spec.flatten_size} x {spec.num_classes}")
    f32 = lambda a: np.ascontiguousarray(a, dtype=np.float32)
    return WeightBundle(
        meta=meta,
        conv1=transpose_conv1_to_device(engine_to_training_layout(f32(weights.conv1_w))),
        conv1_bias=f32(weights.conv1_b),
        conv2=transpose_conv2_to_device(engine_to_training_layout(f32(weights.conv2_w))),
        conv2_bias=f32(weights.conv2_b),
        dense=transpose_dense_to_device(f32(weights.dense_w), spec.conv2_out, spec.conv2_filters),
        dense_bias=f32(weights.dense_b),
    )


def bundle_to_weights(bundle: WeightBundle) -> ModelWeights:
    """Inverse of weights_to_bundle: device-order bundle back to engine layout."""
    return ModelWeights(
        conv1_w=training_to_engine_layout(transpose_conv1_from_device(bundle.conv1)),
        conv1_b=bundle.conv1_bias.copy(),
        conv2_w=training_to_engine_layout(transpose_conv2_from_device(bundle.conv2)),
        conv2_b=bundle.conv2_bias.copy(),
        dense_w=transpose_dense_from_device(bundle.dense),
        dense_b=bundle.dense_bias.copy(),
    )


# ======================================================================
# myWeights.bin
# ======================================================================

def encode_bin(bundle: WeightBundle, *, sentinel_begin: str = SENTINEL_BEGIN,
               sentinel_end: str = SENTINEL_END) -> bytes:
    """Sentinel line, compact JSON header line, sentinel line, six raw arrays."""
    header = json.dumps(bundle.meta.to_json_dict(), separators=(",", ":"))
    out = bytearray()
    out += sentinel_begin.encode("ascii") + b"\n"
    out += header.encode("ascii") + b"\n"
    out += sentinel_end.encode("ascii") + b"\n"
    expected = _bundle_shapes(bundle.meta)
    for name, arr in bundle.arrays():
        if arr.shape != expected[name]:
            raise ValueError(f"{name} has shape {arr.shape}, header implies {expected[name]}")
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def decode_bin(data: bytes, *, sentinel_begin: str = SENTINEL_BEGIN,
               sentinel_end: str = SENTINEL_END) -> WeightBundle:
    """Parse a weight file. Raises MalformedHeader / TruncatedWeights."""

    def take_line(buf: bytes, start: int):
        nl = buf.find(b"\n", start)
        if nl < 0:
            raise MalformedHeader("unterminated header line")
        return buf[start:nl], nl + 1

    line, pos = take_line(data, 0)
    if line.rstrip(b"\r") != sentinel_begin.encode("ascii"):
        raise MalformedHeader(f"missing begin sentinel {sentinel_begin!r}")
    header_line, pos = take_line(data, pos)
    line, pos = take_line(data, pos)
    if line.rstrip(b"\r") != sentinel_end.encode("ascii"):
        raise MalformedHeader(f"missing end sentinel {sentinel_end!r}")
    try:
        header = json.loads(header_line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeader("header JSON must be an object")
    meta = HeaderMeta.from_json_dict(header)

    shapes = _bundle_shapes(meta)
    total = sum(int(np.prod(s)) for s in shapes.values())
    payload = data[pos:]
    if len(payload) < 4 * total:
        raise TruncatedWeights(f"expected {4 * total} payload bytes, found {len(payload)}")
    if len(payload) > 4 * total:
        raise TruncatedWeights(f"{len(payload) - 4 * total} unexpected trailing bytes")

    flat = np.frombuffer(payload, dtype="<f4")
    arrays = {}
    offset = 0
    for name in WeightBundle.ARRAYS:
        n = int(np.prod(shapes[name]))
        arrays[name] = flat[offset:offset + n].reshape(shapes[name]).copy()
        offset += n
    return WeightBundle(meta=meta, **arrays)


def expected_bin_size(meta: HeaderMeta, *, sentinel_begin: str = SENTINEL_BEGIN,
                      sentinel_end: str = SENTINEL_END) -> int:
    header = json.dumps(meta.to_json_dict(), separators=(",", ":"))
    header_bytes = len(sentinel_begin) + len(header) + len(sentinel_end) + 3
    total = sum(int(np.prod(s)) for s in _bundle_shapes(meta).values())
    return header_bytes + 4 * total


# ======================================================================
# myWeights.h
# ======================================================================

_C_ARRAY_NAMES = {"conv1": "conv1_weights", "conv1_bias": "conv1_bias",
                  "conv2": "conv2_weights", "conv2_bias": "conv2_bias",
                  "dense": "dense_weights", "dense_bias": "dense_bias"}


def emit_c_header(bundle: WeightBundle) -> str:
    """C source with every array as float initializers in device order.

    Values are printed with 9 significant digits, enough to round-trip
    float32 exactly through text.
    """
    meta = bundle.meta
    lines = [
        "// Auto-generated trained weights. Do not edit by hand.",
        "//",
        "// To bake this model into the firmware instead of loading",
        "// myWeights.bin from SD at boot:",
        "//   1. copy this file next to the firmware sources as myWeights.h",
        "//   2. enable the compile-time switch:  #define USE_BAKED_WEIGHTS",
        "//   3. rebuild and flash",
        "//",
        f"// inputSize={meta.input_size} numClasses={meta.num_classes} "
        f"labels={','.join(meta.class_labels)}",
        f"// grayscale={'1' if meta.grayscale else '0'} f1={meta.conv1_filters} "
        f"f2={meta.conv2_filters} conv2Out={meta.conv2_out} version={meta.version}",
        "",
        "#pragma once",
        "",
    ]
    for name, arr in bundle.arrays():
        flat = np.ascontiguousarray(arr, dtype=np.float32).ravel()
        lines.append(f"const float {_C_ARRAY_NAMES[name]}[{flat.size}] = {{")
        for i in range(0, flat.size, 8):
            chunk = ", ".join(f"{float(v):.9g}" for v in flat[i:i + 8])
            tail = "," if i + 8 < flat.size else ""
            lines.append(f"  {chunk}{tail}")
        lines.append("};")
        lines.append("")
    return "\n".join(lines)


def parse_c_header_arrays(text: str) -> dict:
    """Extract the float arrays back out of emit_c_header output (for checks)."""
    out = {}
    for m in re.finditer(r"const float (\w+)\[(\d+)\] = \{(.*?)\};", text, re.S):
        name, size, body = m.group(1), int(m.group(2)), m.group(3)
        vals = np.array([float(v) for v in re.findall(r"[-+0-9.eE]+", body)], dtype=np.float64)
        if vals.size != size:
            raise ValueError(f"array {name} declares {size} values, found {vals.size}")
        out[name] = vals
    return out


# ======================================================================
# config.json
# ======================================================================

CONFIG_FIELDS = [
    ("version", int), ("inputSize", int), ("numClasses", int),
    ("classLabels", list), ("learningRate", (int, float)), ("batchSize", int),
    ("targetEpochs", int), ("useAugmentation", bool), ("useGrayscale", bool),
    ("imagesToPsram", bool), ("validationImages", int), ("weightsFile", str),
]


@dataclass
class TrainConfig:
    """The config.json contract shared by trainer, device, and UI.

    Unknown fields survive a parse/emit round trip so configs written by a
    newer firmware keep their extra knobs.
    """

    version: int
    input_size: int
    num_classes: int
    class_labels: list
    learning_rate: float
    batch_size: int
    target_epochs: int
    use_augmentation: bool
    use_grayscale: bool
    images_to_psram: bool
    validation_images: int
    weights_file: str
    extra: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return 1 if self.use_grayscale else 3

    def to_spec(self) -> ModelSpec:
        return ModelSpec(input_size=self.input_size, channels=self.channels,
                         num_classes=self.num_classes)

    def to_header_meta(self) -> HeaderMeta:
        return HeaderMeta(version=self.version, input_size=self.input_size,
                          num_classes=self.num_classes, class_labels=list(self.class_labels),
                          grayscale=self.use_grayscale)


def parse_config(text: str) -> TrainConfig:
    """Parse config.json text; every schema field is required."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("(document)", f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("(document)", "top level must be an object")

    for name, types in CONFIG_FIELDS:
        if name not in raw:
            raise ConfigInvalid(name, "missing")
        value = raw[name]
        if isinstance(value, bool) and types is int:
            raise ConfigInvalid(name, f"expected int, got bool")
        if not isinstance(value, types):
            raise ConfigInvalid(name, f"expected {types}, got {type(value).__name__}")

    if raw["learningRate"] <= 0:
        raise ConfigInvalid("learningRate", "must be > 0")
    if raw["batchSize"] < 1:
        raise ConfigInvalid("batchSize", "must be >= 1")
    if raw["validationImages"] < 0:
        raise ConfigInvalid("validationImages", "must be >= 0")
    if raw["numClasses"] != len(raw["classLabels"]):
        raise ConfigInvalid("numClasses", f"{raw['numClasses']} != {len(raw['classLabels'])} labels")
    if not all(isinstance(x, str) for x in raw["classLabels"]):
        raise ConfigInvalid("classLabels", "labels must be strings")

    known = {name for name, _ in CONFIG_FIELDS}
    extra = {k: v for k, v in raw.items() if k not in known}
    return TrainConfig(
        version=raw["version"], input_size=raw["inputSize"], num_classes=raw["numClasses"],
        class_labels=list(raw["classLabels"]), learning_rate=float(raw["learningRate"]),
        batch_size=raw["batchSize"], target_epochs=raw["targetEpochs"],
        use_augmentation=raw["useAugmentation"], use_grayscale=raw["useGrayscale"],
        images_to_psram=raw["imagesToPsram"], validation_images=raw["validationImages"],
        weights_file=raw["weightsFile"], extra=extra,
    )


def emit_config(config: TrainConfig) -> str:
    """Render config.json with schema fields first, then any preserved extras."""
    doc = {
        "version": config.version,
        "inputSize": config.input_size,
        "numClasses": config.num_classes,
        "classLabels": list(config.class_labels),
        "learningRate": config.learning_rate,
        "batchSize": config.batch_size,
        "targetEpochs": config.target_epochs,
        "useAugmentation": config.use_augmentation,
        "useGrayscale": config.use_grayscale,
        "imagesToPsram": config.images_to_psram,
        "validationImages": config.validation_images,
        "weightsFile": config.weights_file,
    }
    doc.update(config.extra)
    return json.dumps(doc, indent=2) + "\n"


def default_config(class_labels=("0Blank", "1Cup", "2Pen"), *, input_size: int = 64,
                   version: int = 1) -> TrainConfig:
    labels = list(class_labels)
    return TrainConfig(version=version, input_size=input_size, num_classes=len(labels),
                       class_labels=labels, learning_rate=0.0003, batch_size=6,
                       target_epochs=20, use_augmentation=True, use_grayscale=False,
                       images_to_psram=True, validation_images=3,
                       weights_file="myWeights.bin")

"""Trained predictors and their flat binary serialization.

Binary layout (little-endian): magic ``b"LOOA"``, ``u16`` format version,
``u8`` kind tag, then a kind-specific body of ``u32`` dims and ``f64`` values.
A trailing ``u8`` flag says whether a smoothing configuration follows.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, DimensionError
from .kernels import sq_dists
from .rng import STREAM_NOISE, Rng, hash_ints

MAGIC = b"LOOA"
FORMAT_VERSION = 1

KIND_MLP, KIND_KNN, KIND_TABLE, KIND_CONSTANT = 1, 2, 3, 4


def confidence(probs: np.ndarray) -> np.ndarray:
    """Binary: ``|p1 - 0.5|``. Multiclass: top-1 minus top-2 probability."""
    probs = np.asarray(probs)
    if probs.shape[1] == 2:
        return np.abs(probs[:, 1] - 0.5)
    top = np.sort(probs, axis=1)
    return top[:, -1] - top[:, -2]


@dataclass(frozen=True)
class SmoothingConfig:
    """Gaussian smoothing of a base model's argmax.

    ``common-random-numbers`` reuses one noise matrix for every point and every
    model; ``independent`` derives the noise from the point index and the
    model fingerprint.
    """

    sigma_squared: float = 0.1
    num_samples: int = 1000
    noise_seed: int = 0
    pairing: str = "common-random-numbers"

    def __post_init__(self):
        if not self.sigma_squared > 0:
            raise ConfigurationError("sigma_squared must be positive", key="sigma_squared")
        if self.num_samples < 1:
            raise ConfigurationError("num_samples must be at least 1", key="num_samples")
        if self.pairing not in ("common-random-numbers", "independent"):
            raise ConfigurationError(f"unknown pairing {self.pairing!r}", key="pairing")

    def to_dict(self) -> dict:
        return {
            "sigma_squared": self.sigma_squared,
            "num_samples": self.num_samples,
            "noise_seed": self.noise_seed,
            "pairing": self.pairing,
        }


class Model:
    """Base class: subclasses implement :meth:`predict_proba` and the body codec."""

    kind_tag = 0
    num_classes: int
    smoothing: SmoothingConfig | None = None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        if self.smoothing is not None:
            return smooth_predict(self, self.smoothing, x)
        return self.base_proba(x)

    def base_proba(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def base_predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.base_proba(x), axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def with_smoothing(self, cfg: SmoothingConfig | None) -> Model:
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.smoothing = cfg
        return clone

    # serialization -------------------------------------------------------

    def _write_body(self, out: io.BytesIO) -> None:
        raise NotImplementedError

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<HB", FORMAT_VERSION, self.kind_tag))
        self._write_body(out)
        if self.smoothing is None:
            out.write(struct.pack("<B", 0))
        else:
            s = self.smoothing
            pairing = 0 if s.pairing == "common-random-numbers" else 1
            out.write(struct.pack("<BdQqB", 1, s.sigma_squared, s.num_samples, s.noise_seed, pairing))
        return out.getvalue()

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def equal(self, other: Model) -> bool:
        return self.to_bytes() == other.to_bytes()


def _f64(out, arr) -> None:
    out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise ValueError("truncated model file")
    return struct.unpack(fmt, raw)


def _read_f64(buf: io.BytesIO, shape) -> np.ndarray:
    count = int(np.prod(shape))
    raw = buf.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated model file")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


class MlpModel(Model):
    kind_tag = KIND_MLP

    def __init__(self, params: nn.MlpParams):
        self.params = params
        self.num_classes = params.num_classes

    def base_proba(self, x):
        return nn.class_probabilities(self.params, x)

    def _write_body(self, out):
        dims = self.params.layer_dims
        out.write(struct.pack("<I", len(dims)))
        out.write(struct.pack(f"<{len(dims)}I", *dims))
        for a in self.params.arrays():
            _f64(out, a)

    @classmethod
    def _read_body(cls, buf):
        (count,) = _read(buf, "<I")
        dims = _read(buf, f"<{count}I")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(_read_f64(buf, (fan_out, fan_in)))
            biases.append(_read_f64(buf, (fan_out,)))
        return cls(nn.MlpParams(tuple(dims), weights, biases))


class KnnModel(Model):
    """Stores the training set verbatim; Euclidean distance, lowest index wins ties."""

    kind_tag = KIND_KNN

    def __init__(self, features, labels, num_classes: int, k: int = 1):
        if k < 1:
            raise ConfigurationError("k must be at least 1", key="k")
        self.features = np.array(features, dtype=np.float64)
        self.labels = np.array(labels, dtype=np.int64)
        self.num_classes = int(num_classes)
        self.k = int(k)

    def neighbors(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.features.shape[1]:
            raise DimensionError(f"input has shape {x.shape}")
        d2 = sq_dists(x, self.features)
        k = min(self.k, len(self.labels))
        if k == 1:
            return np.argmin(d2, axis=1)[:, None]
        return np.argsort(d2, axis=1, kind="stable")[:, :k]

    def base_proba(self, x):
        nb = self.labels[self.neighbors(x)]
        probs = np.zeros((nb.shape[0], self.num_classes))
        for j in range(nb.shape[1]):
            probs[np.arange(nb.shape[0]), nb[:, j]] += 1.0
        return probs / nb.shape[1]

    def _write_body(self, out):
        n, d = self.features.shape
        out.write(struct.pack("<IIII", self.k, n, d, self.num_classes))
        _f64(out, self.features)
        _f64(out, self.labels)

    @classmethod
    def _read_body(cls, buf):
        k, n, d, c = _read(buf, "<IIII")
        x = _read_f64(buf, (n, d))
        y = _read_f64(buf, (n,)).astype(np.int64)
        return cls(x, y, c, k)


class ConstantModel(Model):
    kind_tag = KIND_CONSTANT

    def __init__(self, label: int, num_classes: int = 2):
        self.label = int(label)
        self.num_classes = int(num_classes)

    def base_proba(self, x):
        probs = np.zeros((np.asarray(x).shape[0], self.num_classes))
        probs[:, self.label] = 1.0
        return probs

    def _write_body(self, out):
        out.write(struct.pack("<II", self.label, self.num_classes))

    @classmethod
    def _read_body(cls, buf):
        return cls(*_read(buf, "<II"))


# Three points on a line: x1, x2 of class 0 and x3 of class 1.
TABLE_POINTS = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
TABLE_LABELS = np.array([0, 0, 1])
TABLE_THRESHOLD = 1.5

# subset bitmask (bit j set when x_{j+1} is present) -> labeling on the plane.
# "split" labels class 1 right of the threshold; an int is a constant label.
# Each proper subset keeps the removed point's own 0-1 loss at zero, yet every
# point flips under the removal of some other point.
TABLE_LOOKUP = {
    0b111: "split",
    0b110: 0,  # x1 removed: x1 still gets its label 0; x3 flips
    0b101: 0,  # x2 removed: x2 still gets 0
    0b011: 1,  # x3 removed: x3 still gets 1; x1 and x2 flip
    0b100: 0,
    0b010: 0,
    0b001: 0,
    0b000: 0,
}


class TableModel(Model):
    kind_tag = KIND_TABLE
    num_classes = 2

    def __init__(self, subset: int):
        if subset not in TABLE_LOOKUP:
            raise ConfigurationError(f"unknown subset {subset:#b}", key="subset")
        self.subset = int(subset)

    def base_proba(self, x):
        x = np.asarray(x, dtype=np.float64)
        rule = TABLE_LOOKUP[self.subset]
        if rule == "split":
            lab = (x[:, 0] > TABLE_THRESHOLD).astype(np.int64)
        else:
            lab = np.full(x.shape[0], rule, dtype=np.int64)
        probs = np.zeros((x.shape[0], 2))
        probs[np.arange(x.shape[0]), lab] = 1.0
        return probs

    def _write_body(self, out):
        out.write(struct.pack("<I", self.subset))

    @classmethod
    def _read_body(cls, buf):
        return cls(_read(buf, "<I")[0])


_KINDS = {KIND_MLP: MlpModel, KIND_KNN: KnnModel, KIND_TABLE: TableModel, KIND_CONSTANT: ConstantModel}


def model_from_bytes(data: bytes) -> Model:
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise ValueError("not a LOOA model file")
    version, tag = _read(buf, "<HB")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    if tag not in _KINDS:
        raise ValueError(f"unknown model kind tag {tag}")
    model = _KINDS[tag]._read_body(buf)
    (flag,) = _read(buf, "<B")
    if flag:
        sigma2, num, seed, pairing = _read(buf, "<dQqB")
        model.smoothing = SmoothingConfig(
            sigma2, num, seed, "common-random-numbers" if pairing == 0 else "independent"
        )
    if buf.read(1):
        raise ValueError("trailing bytes in model file")
    return model


def smooth_predict(model: Model, cfg: SmoothingConfig, x: np.ndarray) -> np.ndarray:
    """Fraction of Gaussian-perturbed copies of each row assigned to each class."""
    x = np.asarray(x, dtype=np.float64)
    m, d = x.shape
    scale = math.sqrt(cfg.sigma_squared)
    out = np.zeros((m, model.num_classes))
    if cfg.pairing == "common-random-numbers":
        noise = Rng(cfg.noise_seed, STREAM_NOISE).normal((cfg.num_samples, d), scale=scale)
    salt = None
    # bounded working set: about 2e5 perturbed rows per base-model call
    rows_per_chunk = max(1, 200_000 // cfg.num_samples)
    for start in range(0, m, rows_per_chunk):
        stop = min(m, start + rows_per_chunk)
        blocks = []
        for i in range(start, stop):
            if cfg.pairing == "independent":
                if salt is None:
                    salt = int(model.with_smoothing(None).fingerprint()[:15], 16)
                rng = Rng(hash_ints(cfg.noise_seed, salt, i), STREAM_NOISE)
                noise = rng.normal((cfg.num_samples, d), scale=scale)
            blocks.append(x[i] + noise)
        labels = model.base_predict(np.vstack(blocks)).reshape(stop - start, cfg.num_samples)
        for c in range(model.num_classes):
            out[start:stop, c] = np.count_nonzero(labels == c, axis=1)
    return out / cfg.num_samples

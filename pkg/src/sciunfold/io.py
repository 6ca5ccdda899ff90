"""File formats and configuration.

Binary formats are little-endian and fully self-describing:

- VCUBE: magic "VCB1", u32 rank, rank x u32 dims, then float32 payload in
  row-major order. Tensors are f32 on disk and f64 in memory.
- Checkpoint: magic "SCK1", u32 version, the schedule descriptor (m, n,
  b_max, widths, convs_per_scale, kernel), u64 seed and step count, then
  named parameter blobs, each a length-prefixed name followed by an embedded
  VCUBE record.

Every write lands atomically: the payload goes to a temp file in the target
directory, is fsynced, and replaces the destination, so a killed process
never leaves a truncated file readable as valid.
"""

import csv
import os
import struct
import tempfile

import numpy as np

from .errors import (CheckpointMismatchError, ConfigError, FileFormatError)

VCUBE_MAGIC = b"VCB1"
CHECKPOINT_MAGIC = b"SCK1"
CHECKPOINT_VERSION = 1


def _atomic_write_bytes(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".partial-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _vcube_bytes(tensor):
    tensor = np.asarray(tensor)
    payload = np.ascontiguousarray(tensor, dtype="<f4")
    head = VCUBE_MAGIC + struct.pack("<I", tensor.ndim)
    head += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
    return head + payload.tobytes()


def write_vcube(path, tensor):
    """Write a tensor as a VCUBE file (f32, atomic)."""
    _atomic_write_bytes(path, _vcube_bytes(tensor))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, count, what):
        if self.pos + count > len(self.data):
            raise FileFormatError(f"{self.path}: truncated while reading {what}")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def done(self):
        if self.pos != len(self.data):
            raise FileFormatError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _read_vcube_record(r):
    magic = r.take(4, "magic")
    if magic != VCUBE_MAGIC:
        raise FileFormatError(f"{r.path}: bad magic {magic!r}, expected {VCUBE_MAGIC!r}")
    rank = r.u32("rank")
    if rank > 16:
        raise FileFormatError(f"{r.path}: implausible rank {rank}")
    dims = tuple(r.u32(f"dim {i}") for i in range(rank))
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = r.take(4 * count, "payload")
    arr = np.frombuffer(payload, dtype="<f4", count=count)
    return arr.astype(np.float64).reshape(dims)


def read_vcube(path):
    """Read a VCUBE file into a float64 array."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    r = _Reader(data, path)
    tensor = _read_vcube_record(r)
    r.done()
    return tensor


def write_pgm(path, frame):
    """Write one frame as binary PGM, mapping [0,1] to 0..255 round-half-up;
    values outside [0,1] are clamped."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise FileFormatError(f"{path}: PGM needs a 2-d frame, got {frame.shape}")
    levels = np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{frame.shape[1]} {frame.shape[0]}\n255\n".encode("ascii")
    _atomic_write_bytes(path, header + levels.tobytes())


def save_checkpoint(path, schedule, priors, seed=0, step_count=0):
    """Serialize a trained model: schedule descriptor plus every parameter."""
    first = priors[0]
    blobs = []
    for p in schedule.parameters():
        blobs.append((p.name, p.value))
    for prior in priors:
        for name, p in prior.params.items():
            blobs.append((name, p.value))
    head = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    head += struct.pack("<IIII", schedule.m, schedule.n, first.b_max,
                        len(first.widths))
    head += struct.pack(f"<{len(first.widths)}I", *first.widths)
    head += struct.pack("<II", first.convs_per_scale, first.kernel)
    head += struct.pack("<QQ", int(seed), int(step_count))
    head += struct.pack("<I", len(blobs))
    body = bytearray()
    for name, value in blobs:
        raw = name.encode("utf-8")
        body += struct.pack("<I", len(raw)) + raw + _vcube_bytes(value)
    _atomic_write_bytes(path, head + bytes(body))


def load_checkpoint(path):
    """Read a checkpoint into a plain dict (no model construction)."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FileFormatError(
            f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    m = r.u32("m")
    n = r.u32("n")
    b_max = r.u32("b_max")
    n_widths = r.u32("width count")
    widths = tuple(r.u32(f"width {i}") for i in range(n_widths))
    convs_per_scale = r.u32("convs_per_scale")
    kernel = r.u32("kernel")
    seed = r.u64("seed")
    step_count = r.u64("step count")
    blob_count = r.u32("blob count")
    blobs = {}
    for i in range(blob_count):
        name_len = r.u32(f"name length of blob {i}")
        name = r.take(name_len, f"name of blob {i}").decode("utf-8")
        blobs[name] = _read_vcube_record(r)
    r.done()
    return {"m": m, "n": n, "b_max": b_max, "widths": widths,
            "convs_per_scale": convs_per_scale, "kernel": kernel,
            "seed": seed, "step_count": step_count, "blobs": blobs}


def model_from_checkpoint(data):
    """Rebuild (schedule, priors) from load_checkpoint output; every stored
    blob must land in a parameter of the same name and shape."""
    from .priors import CnnPrior
    from .unfolding import StageSchedule

    schedule = StageSchedule(data["m"], data["n"])
    priors = [CnnPrior(b_max=data["b_max"], widths=data["widths"],
                       convs_per_scale=data["convs_per_scale"],
                       kernel=data["kernel"], first=(i == 0),
                       name=f"stage{i + 1}")
              for i in range(data["m"] + data["n"])]
    params = {p.name: p for p in schedule.parameters()}
    for prior in priors:
        params.update(prior.params)
    blobs = data["blobs"]
    missing = sorted(set(params) - set(blobs))
    extra = sorted(set(blobs) - set(params))
    if missing or extra:
        raise CheckpointMismatchError(
            f"checkpoint does not match schedule (m={data['m']}, n={data['n']}, "
            f"widths={data['widths']}): missing {missing[:4]}, unexpected {extra[:4]}")
    for name, p in params.items():
        blob = blobs[name]
        if blob.shape != p.value.shape:
            raise CheckpointMismatchError(
                f"parameter {name}: stored shape {blob.shape} != expected "
                f"{p.value.shape}")
        p.value[...] = blob
    return schedule, priors


def parse_config(text, path="<config>"):
    """Parse flat key = value lines; '#' starts a comment. Returns a ConfigMap."""
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {lines[key]})")
        values[key] = value
        lines[key] = lineno
    return ConfigMap(values, lines, path)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(text, path=str(path))


class ConfigMap:
    """Typed access over parsed key=value pairs; errors carry line numbers."""

    def __init__(self, values, lines, path):
        self._values = values
        self._lines = lines
        self._path = path

    def __contains__(self, key):
        return key in self._values

    def keys(self):
        return self._values.keys()

    def _fail(self, key, message):
        line = self._lines.get(key)
        where = f"{self._path}:{line}" if line else self._path
        raise ConfigError(f"{where}: {message}")

    def _convert(self, key, default, kind, conv):
        if key not in self._values:
            if default is _REQUIRED:
                raise ConfigError(f"{self._path}: missing required key {key!r}")
            return default
        try:
            return conv(self._values[key])
        except (TypeError, ValueError):
            self._fail(key, f"{key!r} must be {kind}, got {self._values[key]!r}")

    def get_str(self, key, default=None):
        return self._convert(key, default, "a string", str)

    def get_int(self, key, default=None):
        return self._convert(key, default, "an integer", int)

    def get_float(self, key, default=None):
        return self._convert(key, default, "a number", float)

    def get_int_tuple(self, key, default=None):
        return self._convert(
            key, default, "comma-separated integers",
            lambda s: tuple(int(part.strip()) for part in s.split(",") if part.strip()))

    def require_int(self, key):
        return self._convert(key, _REQUIRED, "an integer", int)


_REQUIRED = object()


def worker_count():
    """Worker cap for embarrassingly parallel work: cpu count, optionally
    lowered by the ELP_THREADS environment variable."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get("ELP_THREADS")
    if raw is None:
        return cpus
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"ELP_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ConfigError(f"ELP_THREADS must be >= 1, got {cap}")
    return min(cpus, cap)


METRIC_COLUMNS = ("scene", "frame_index", "psnr_db", "ssim", "solver", "seconds")
LOSS_COLUMNS = ("period", "epoch", "lr", "train_loss", "val_loss_start",
                "val_loss_end")


def _csv_payload(columns, rows):
    import io as _io
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue().encode("utf-8")


def write_metric_csv(path, scene, report, solver):
    """One row per frame in the documented column order."""
    rows = [(scene, i, f"{p:.6f}", f"{s:.6f}", solver, f"{report.seconds:.6f}")
            for i, (p, s) in enumerate(zip(report.psnr_db, report.ssim))]
    _atomic_write_bytes(path, _csv_payload(METRIC_COLUMNS, rows))


def write_loss_csv(path, history):
    rows = [(r.period, r.epoch, f"{r.lr:.8g}", f"{r.train_loss:.8g}",
             f"{r.val_loss_start:.8g}", f"{r.val_loss_end:.8g}")
            for r in history]
    _atomic_write_bytes(path, _csv_payload(LOSS_COLUMNS, rows))

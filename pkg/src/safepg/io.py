"""Run-config files, binary checkpoints and CSV writers."""

from __future__ import annotations

import configparser
import csv
import io
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from safepg.navenv import NavWorld
from safepg.policy import LatticeSpec, PolicyParams
from safepg.trainer import RunConfig

MAGIC = b"SAFEPGCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

_TRAIN_KEYS = {
    "lambda": ("lam", float),
    "step_size": ("step_size", float),
    "episodes": ("episodes", int),
    "batch_size": ("batch_size", int),
    "eval_episodes": ("eval_episodes", int),
    "seed": ("seed", int),
    "cadence": ("cadence", int),
    "baseline": ("baseline", str),
    "baseline_rate": ("baseline_rate", float),
    "delta": ("delta", float),
    "workers": ("workers", int),
}
_WORLD_KEYS = ("bounds_lo", "bounds_hi", "obstacles", "goal", "start", "dt", "horizon")
_POLICY_KEYS = ("lattice_lo", "lattice_hi", "lattice_n", "bandwidth", "covariance")


def _vec(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _pair(text: str) -> tuple[float, float]:
    v = _vec(text)
    if len(v) != 2:
        raise ValueError(f"expected two numbers, got {len(v)}")
    return v


def _obstacles(text: str):
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        v = _vec(chunk)
        if len(v) != 3:
            raise ValueError(f"obstacle needs 'x y radius', got {chunk.strip()!r}")
        out.append(((v[0], v[1]), v[2]))
    return tuple(out)


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _locate(text: str, section: str, key: str) -> str:
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section and line.split("=", 1)[0].strip() == key:
            return f"line {lineno}: "
    return ""


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse a ``[world]`` / ``[policy]`` / ``[train]`` key-value file.

    Missing keys take the defaults of the navigation experiment, so an empty
    file reproduces it.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    known = {"world": _WORLD_KEYS, "policy": _POLICY_KEYS, "train": tuple(_TRAIN_KEYS)}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in cp[section]:
            if key not in known[section]:
                raise ConfigError(f"{source}: {_locate(text, section, key)}[{section}] unknown key '{key}'")

    def get(section, key, conv):
        try:
            return conv(cp[section][key])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: {_locate(text, section, key)}[{section}] {key}: {exc}") from None

    def has(section, key):
        return cp.has_section(section) and key in cp[section]

    world_kw = {}
    parsers = {"bounds_lo": _pair, "bounds_hi": _pair, "obstacles": _obstacles,
               "goal": _pair, "start": _pair, "dt": float, "horizon": _int}
    for key, conv in parsers.items():
        if has("world", key):
            world_kw[key] = get("world", key, conv)
    if "obstacles" not in world_kw:
        from safepg.navenv import default_world

        world_kw["obstacles"] = default_world().obstacles
    try:
        world = NavWorld(**world_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: [world] {exc}") from None

    policy_kw = {}
    for key, attr, conv in (("lattice_lo", "lo", float), ("lattice_hi", "hi", float),
                            ("lattice_n", "n", _int), ("bandwidth", "bandwidth", float),
                            ("covariance", "covariance", _pair)):
        if has("policy", key):
            policy_kw[attr] = get("policy", key, conv)
    try:
        lattice = LatticeSpec(**policy_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: [policy] {exc}") from None

    train_kw = {}
    for key, (attr, conv) in _TRAIN_KEYS.items():
        if has("train", key):
            train_kw[attr] = get("train", key, _int if conv is int else conv)
    try:
        return RunConfig(world=world, policy=lattice, **train_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: [train] {exc}") from None


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def _num(x: float) -> str:
    return repr(float(x))


def format_config(config: RunConfig) -> str:
    """Fully resolved config; :func:`parse_config` reads it back unchanged."""
    w, p = config.world, config.policy
    lines = [
        "[world]",
        f"bounds_lo = {_num(w.bounds_lo[0])} {_num(w.bounds_lo[1])}",
        f"bounds_hi = {_num(w.bounds_hi[0])} {_num(w.bounds_hi[1])}",
        "obstacles = " + "; ".join(f"{_num(c[0])} {_num(c[1])} {_num(r)}" for c, r in w.obstacles),
        f"goal = {_num(w.goal[0])} {_num(w.goal[1])}",
        f"start = {_num(w.start[0])} {_num(w.start[1])}",
        f"dt = {_num(w.dt)}",
        f"horizon = {w.horizon}",
        "",
        "[policy]",
        f"lattice_lo = {_num(p.lo)}",
        f"lattice_hi = {_num(p.hi)}",
        f"lattice_n = {p.n}",
        f"bandwidth = {_num(p.bandwidth)}",
        f"covariance = {_num(p.covariance[0])} {_num(p.covariance[1])}",
        "",
        "[train]",
    ]
    for key, (attr, conv) in _TRAIN_KEYS.items():
        value = getattr(config, attr)
        lines.append(f"{key} = {_num(value) if conv is float else value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Checkpoint:
    lattice: LatticeSpec
    coefficients: np.ndarray
    episode: int = 0
    seed: int = 0
    version: int = FORMAT_VERSION

    def params(self) -> PolicyParams:
        return self.lattice.build(self.coefficients)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    flat = np.ascontiguousarray(np.asarray(ckpt.coefficients, dtype="<f8").ravel())
    if flat.size != 2 * ckpt.lattice.n**2:
        raise CheckpointError(f"coefficient length {flat.size} != 2 * {ckpt.lattice.n ** 2}")
    meta = {
        "format_version": ckpt.version,
        "lattice": {"lo": ckpt.lattice.lo, "hi": ckpt.lattice.hi, "n": ckpt.lattice.n},
        "bandwidth": ckpt.lattice.bandwidth,
        "covariance": list(ckpt.lattice.covariance),
        "episode": ckpt.episode,
        "rng": {"generator": "philox", "seed": ckpt.seed, "next_episode": ckpt.episode},
        "n_coefficients": int(flat.size),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, ckpt.version, len(blob)) + blob + flat.tobytes()


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a safepg checkpoint (bad magic header)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version: expected {FORMAT_VERSION}, found {version}")
    start = _HEADER.size
    try:
        meta = json.loads(data[start:start + meta_len].decode("utf-8"))
        lattice = LatticeSpec(
            lo=meta["lattice"]["lo"], hi=meta["lattice"]["hi"], n=meta["lattice"]["n"],
            bandwidth=meta["bandwidth"], covariance=tuple(meta["covariance"]),
        )
        n_coef = int(meta["n_coefficients"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupted checkpoint metadata: {exc}") from None
    if meta.get("format_version") != version:
        raise CheckpointError("checkpoint header and metadata disagree on the format version")
    body = data[start + meta_len:]
    if len(body) != 8 * n_coef or n_coef != 2 * lattice.n**2:
        raise CheckpointError(
            f"corrupted checkpoint: expected {2 * lattice.n ** 2} coefficients, found {len(body) / 8:g}"
        )
    coef = np.frombuffer(body, dtype="<f8").astype(float)
    if not np.all(np.isfinite(coef)):
        raise CheckpointError("corrupted checkpoint: non-finite coefficients")
    return Checkpoint(
        lattice=lattice,
        coefficients=coef,
        episode=int(meta["episode"]),
        seed=int(meta["rng"]["seed"]),
        version=version,
    )


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode_checkpoint(data)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

METRICS_HEADER = (
    "run_id", "episode", "lambda", "eta", "avg_cumulative_reward", "safety_probability",
    "constraint_grad_norm", "value_grad_norm",
)
SUMMARY_HEADER = (
    "lambda", "status", "safety_probability", "avg_cumulative_reward", "safety_se", "reward_se",
    "mean_final_distance", "error",
)


def csv_line(values: Iterable) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(
        [repr(v) if isinstance(v, float) else v for v in values]
    )
    return buf.getvalue()


class CsvSink:
    """Append-only CSV file; every row is written and flushed in one call."""

    def __init__(self, path: str | os.PathLike, header: Sequence[str]):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8", newline="")
        self.write(header)

    def write(self, values: Iterable) -> None:
        self._fh.write(csv_line(values))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with CsvSink(path, header) as sink:
        for row in rows:
            sink.write(row)


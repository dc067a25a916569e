"""Binary checkpoint container for all three model families.

Little-endian layout shared by every model: a 4-byte magic, a u16 format
version, the model payload, then a length-prefixed UTF-8 ``key=value`` block
echoing the training configuration. Magics: ``MRLC`` hybrid, ``MRLR``
frequency/recency regression, ``MRLP`` matrix factorization.

Entries that form tables (offsets, factor rows) are written in sorted id
order, so identical parameters always serialize to identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import nn
from .baselines import PmfParams, RfParams
from .data import DEFAULT_WINDOW_DAYS
from .errors import DataFormatError
from .model import DEFAULT_DROPOUT_P, DEFAULT_OFFSET_L2, HybridParams

MAGIC_HYBRID = b"MRLC"
MAGIC_RF = b"MRLR"
MAGIC_PMF = b"MRLP"
VERSION = 1

_MAX_LAYERS = 64


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def raw(self, data: bytes):
        self.buf += data

    def u16(self, v: int):
        self.buf += struct.pack("<H", v)

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def f64(self, v: float):
        self.buf += struct.pack("<d", v)

    def f64_array(self, a: np.ndarray):
        self.buf += np.ascontiguousarray(a, dtype="<f8").tobytes()

    def string(self, s: str):
        data = s.encode("utf-8")
        self.u16(len(data))
        self.buf += data

    def blob(self, data: bytes):
        self.u32(len(data))
        self.buf += data


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError(f"{self.path}: truncated {what} at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def f64_array(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)

    def string(self, what: str) -> str:
        n = self.u16(what)
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise DataFormatError(f"{self.path}: invalid UTF-8 in {what}") from None

    def blob(self, what: str) -> bytes:
        return self.take(self.u32(what), what)

    def expect_end(self):
        if self.pos != len(self.data):
            raise DataFormatError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes after checkpoint payload"
            )


def _encode_echo(echo: dict[str, str]) -> bytes:
    return "\n".join(f"{k}={echo[k]}" for k in sorted(echo)).encode("utf-8")


def _decode_echo(data: bytes, path) -> dict[str, str]:
    if not data:
        return {}
    out: dict[str, str] = {}
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise DataFormatError(f"{path}: config echo is not valid UTF-8") from None
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{path}: malformed config echo line {line!r}")
        out[key] = value
    return out


def _write_mlp(w: _Writer, spec: nn.MlpSpec, state: nn.MlpState) -> None:
    w.u32(len(spec.layer_dims))
    for dim in spec.layer_dims:
        w.u32(dim)
    w.string(spec.activation)
    for weight, bias in zip(state.weights, state.biases):
        w.f64_array(weight)
        w.f64_array(bias)


def _read_mlp(r: _Reader, what: str) -> tuple[nn.MlpSpec, nn.MlpState]:
    n_dims = r.u32(f"{what} layer count")
    if not 2 <= n_dims <= _MAX_LAYERS:
        raise DataFormatError(f"{r.path}: implausible {what} layer count {n_dims}")
    dims = tuple(r.u32(f"{what} layer dim") for _ in range(n_dims))
    activation = r.string(f"{what} activation")
    try:
        spec = nn.MlpSpec(dims, activation)
    except ValueError as exc:
        raise DataFormatError(f"{r.path}: {what}: {exc}") from None
    weights, biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        weights.append(r.f64_array(n_in * n_out, f"{what} weights").reshape(n_in, n_out))
        biases.append(r.f64_array(n_out, f"{what} biases"))
    return spec, nn.MlpState(weights, biases)


def _header(w: _Writer, magic: bytes) -> None:
    w.raw(magic)
    w.u16(VERSION)


def _check_header(r: _Reader, magic: bytes) -> None:
    got = r.take(4, "magic")
    if got != magic:
        raise DataFormatError(f"{r.path}: bad magic {got!r}, expected {magic!r}")
    version = r.u16("version")
    if version != VERSION:
        raise DataFormatError(f"{r.path}: unsupported checkpoint version {version}")


def save_hybrid(path, params: HybridParams, extra_config: dict[str, str] | None = None) -> None:
    params.validate()
    stats = params.require_stats()
    w = _Writer()
    _header(w, MAGIC_HYBRID)
    w.u32(params.embedding_dim)
    _write_mlp(w, params.f_spec, params.f_state)
    _write_mlp(w, params.g_spec, params.g_state)
    w.u32(len(params.offset_ids))
    for movie_id in params.offset_ids:  # already sorted
        w.string(movie_id)
        w.f64_array(params.offset_table[params._offset_pos[movie_id]])
    w.f64_array(params.head)
    w.f64_array(stats.reshape(-1))  # 3 means then 3 stds
    echo = dict(extra_config or {})
    echo.setdefault("window_days", str(params.window_days))
    echo.setdefault("dropout_p", repr(params.dropout_p))
    echo.setdefault("offset_l2", repr(params.offset_l2))
    w.blob(_encode_echo(echo))
    Path(path).write_bytes(bytes(w.buf))


def _load_hybrid(r: _Reader) -> tuple[HybridParams, dict[str, str]]:
    dim = r.u32("embedding dim")
    f_spec, f_state = _read_mlp(r, "content net")
    g_spec, g_state = _read_mlp(r, "demographics net")
    count = r.u32("offset count")
    ids = []
    rows = np.zeros((count, dim))
    for i in range(count):
        ids.append(r.string("offset movie id"))
        rows[i] = r.f64_array(dim, "offset vector")
    head = r.f64_array(4, "head weights")
    stats = r.f64_array(6, "feature stats").reshape(2, 3)
    echo = _decode_echo(r.blob("config echo"), r.path)
    r.expect_end()
    params = HybridParams(
        embedding_dim=dim,
        f_spec=f_spec,
        f_state=f_state,
        g_spec=g_spec,
        g_state=g_state,
        offset_ids=tuple(ids),
        offset_table=rows,
        head=head,
        feature_stats=stats,
        window_days=int(echo.get("window_days", DEFAULT_WINDOW_DAYS)),
        dropout_p=float(echo.get("dropout_p", DEFAULT_DROPOUT_P)),
        offset_l2=float(echo.get("offset_l2", DEFAULT_OFFSET_L2)),
    )
    params.validate()
    return params, echo


def save_rf(path, params: RfParams, extra_config: dict[str, str] | None = None) -> None:
    params.validate()
    w = _Writer()
    _header(w, MAGIC_RF)
    w.f64_array(params.weights)
    w.f64_array(params.feature_stats.reshape(-1))
    echo = dict(extra_config or {})
    echo.setdefault("window_days", str(params.window_days))
    w.blob(_encode_echo(echo))
    Path(path).write_bytes(bytes(w.buf))


def _load_rf(r: _Reader) -> tuple[RfParams, dict[str, str]]:
    weights = r.f64_array(3, "rf weights")
    stats = r.f64_array(4, "rf feature stats").reshape(2, 2)
    echo = _decode_echo(r.blob("config echo"), r.path)
    r.expect_end()
    params = RfParams(weights, stats, int(echo.get("window_days", DEFAULT_WINDOW_DAYS)))
    params.validate()
    return params, echo


def save_pmf(path, params: PmfParams, extra_config: dict[str, str] | None = None) -> None:
    params.validate()
    w = _Writer()
    _header(w, MAGIC_PMF)
    w.u32(params.k)
    w.f64(params.bias)
    for ids, table in ((params.user_ids, params.user_table), (params.movie_ids, params.movie_table)):
        w.u32(len(ids))
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        for i in order:
            w.string(ids[i])
            w.f64_array(table[i])
    w.blob(_encode_echo(dict(extra_config or {})))
    Path(path).write_bytes(bytes(w.buf))


def _load_pmf(r: _Reader) -> tuple[PmfParams, dict[str, str]]:
    k = r.u32("factor dim")
    bias = r.f64("global bias")
    tables = []
    for what in ("user", "movie"):
        count = r.u32(f"{what} count")
        ids = []
        rows = np.zeros((count, k))
        for i in range(count):
            ids.append(r.string(f"{what} id"))
            rows[i] = r.f64_array(k, f"{what} vector")
        tables.append((tuple(ids), rows))
    echo = _decode_echo(r.blob("config echo"), r.path)
    r.expect_end()
    params = PmfParams(k, tables[0][0], tables[0][1], tables[1][0], tables[1][1], bias)
    params.validate()
    return params, echo


def save_checkpoint(path, params, extra_config: dict[str, str] | None = None) -> None:
    if isinstance(params, HybridParams):
        save_hybrid(path, params, extra_config)
    elif isinstance(params, RfParams):
        save_rf(path, params, extra_config)
    elif isinstance(params, PmfParams):
        save_pmf(path, params, extra_config)
    else:
        raise TypeError(f"cannot checkpoint object of type {type(params).__name__}")


def _parse(path) -> tuple[object, dict[str, str]]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 6:
        raise DataFormatError(f"{path}: too short to be a checkpoint")
    magic = data[:4]
    r = _Reader(data, path)
    loaders = {MAGIC_HYBRID: _load_hybrid, MAGIC_RF: _load_rf, MAGIC_PMF: _load_pmf}
    if magic not in loaders:
        raise DataFormatError(f"{path}: unrecognized checkpoint magic {magic!r}")
    _check_header(r, magic)
    return loaders[magic](r)


def load_checkpoint(path):
    """Sniff the magic and load the matching parameter object."""
    return _parse(path)[0]


def read_checkpoint_echo(path) -> dict[str, str]:
    """The config echo block of any checkpoint."""
    return _parse(path)[1]


def checkpoint_model_name(path) -> str:
    """'hybrid', 'rf' or 'pmf' from the file magic alone."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    names = {MAGIC_HYBRID: "hybrid", MAGIC_RF: "rf", MAGIC_PMF: "pmf"}
    if magic not in names:
        raise DataFormatError(f"{path}: unrecognized checkpoint magic {magic!r}")
    return names[magic]

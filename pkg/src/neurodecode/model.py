"""Full decoder (extractor -> sequence head -> dense classifier) and its checkpoint format."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .extractor import fe_forward, fe_init, stage_shapes
from .heads import HEADS, bilstm_init, head_embed, transformer_init
from .params import ParamStore, glorot_uniform, rng_stream
from .tensor import Tensor, no_grad, sigmoid, softmax, softmax_xent, tensor


@dataclass
class ModelConfig:
    head: str = "bilstm"
    n_classes: int = 39
    n_channels: int = 128
    win_len: int = 220
    n_filters: int = 25
    kernel_w: int = 35
    stride_w: int = 2
    lstm_hidden: int = 22
    lstm_layers: int = 2
    d_model: int = 32
    n_heads: int = 8
    d_ff: int = 64
    pos_encoding: bool = True
    norm: str = "post"
    dense_hidden: int = 100

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.head == "transformer" and self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by {self.n_heads} heads")

    @property
    def seq_len(self) -> int:
        return stage_shapes(self.n_channels, self.win_len, self.n_filters, self.kernel_w, self.stride_w)[-1][0]

    @property
    def embed_dim(self) -> int:
        if self.head == "bilstm":
            return 2 * self.lstm_hidden
        return self.seq_len * self.d_model

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config field(s): {sorted(unknown)}")
        return cls(**d)


def classifier_init(rng, params: ParamStore, embed_dim: int, hidden: int = 100, n_classes: int = 39) -> None:
    params.add("clf.d1.w", glorot_uniform(rng, (embed_dim, hidden), embed_dim, hidden))
    params.add("clf.d1.b", np.zeros(hidden))
    params.add("clf.d2.w", glorot_uniform(rng, (hidden, n_classes), hidden, n_classes))
    params.add("clf.d2.b", np.zeros(n_classes))


def classifier_logits(emb, params: ParamStore) -> Tensor:
    emb = tensor(emb)
    w1 = params["clf.d1.w"]
    if emb.shape[-1] != w1.shape[0]:
        raise ValueError(f"embedding has {emb.shape[-1]} dims, classifier expects {w1.shape[0]}")
    single = emb.ndim == 1
    if single:
        emb = emb.reshape((1, -1))
    hidden = sigmoid(emb @ w1 + params["clf.d1.b"])
    out = hidden @ params["clf.d2.w"] + params["clf.d2.b"]
    return out.reshape((out.shape[1],)) if single else out


def classify(emb, params: ParamStore) -> np.ndarray:
    """Class probabilities for one embedding (or a batch)."""
    with no_grad():
        return softmax(classifier_logits(emb, params), axis=-1).data


class EegDecoder:
    def __init__(self, config: ModelConfig, params: ParamStore | None = None, seed: int = 0):
        self.config = config
        if params is None:
            params = self.init_params(config, seed)
        self.params = params

    @staticmethod
    def init_params(cfg: ModelConfig, seed: int) -> ParamStore:
        rng = rng_stream(seed, "init")
        p = fe_init(rng, None, cfg.n_channels, cfg.n_filters, cfg.kernel_w)
        if cfg.head == "bilstm":
            bilstm_init(rng, p, cfg.n_filters, cfg.lstm_hidden, cfg.lstm_layers)
        else:
            transformer_init(rng, p, cfg.n_filters, cfg.d_model, cfg.n_heads, cfg.d_ff)
        classifier_init(rng, p, cfg.embed_dim, cfg.dense_hidden, cfg.n_classes)
        return p

    def embed(self, x, trace: dict | None = None) -> Tensor:
        cfg = self.config
        seq = fe_forward(x, self.params, cfg.stride_w, trace)
        return head_embed(seq, cfg.head, self.params, cfg.n_heads, cfg.pos_encoding, cfg.norm, trace)

    def logits(self, x) -> Tensor:
        return classifier_logits(self.embed(x), self.params)

    def loss(self, x, y) -> tuple[Tensor, np.ndarray]:
        return softmax_xent(self.logits(x), y)

    def _batched(self, fn, x: np.ndarray, batch_size: int) -> np.ndarray:
        outs = []
        with no_grad():
            for s in range(0, len(x), batch_size):
                outs.append(fn(x[s : s + batch_size]).data)
        return np.concatenate(outs) if outs else np.zeros((0,))

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        if len(x) == 0:
            return np.zeros((0, self.config.n_classes))
        return self._batched(lambda b: softmax(self.logits(b), axis=-1), x, batch_size)

    def embeddings(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        if len(x) == 0:
            return np.zeros((0, self.config.embed_dim))
        return self._batched(self.embed, x, batch_size)


# -------------------------------------------------------------- checkpoint
# b"NDMD" | u32 version | u32 head id | u32 len + config JSON (utf-8)
# | u32 n_params | per param: u32 name len, name, u32 ndim, u32 dims..., f64 LE data
CKPT_MAGIC = b"NDMD"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(model: EegDecoder, extra: dict | None = None) -> bytes:
    cfg = {"model": asdict(model.config), **(extra or {})}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    out = [CKPT_MAGIC, struct.pack("<III", CKPT_VERSION, HEADS.index(model.config.head), len(blob)), blob]
    out.append(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> tuple[EegDecoder, dict]:
    def need(n):
        if off + n > len(buf):
            raise CheckpointError("truncated checkpoint")

    off = 0
    need(16)
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:4]!r}")
    version, head_id, n = struct.unpack_from("<III", buf, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if head_id >= len(HEADS):
        raise CheckpointError(f"unknown head id {head_id}")
    off = 16
    need(n)
    meta = json.loads(buf[off : off + n].decode())
    off += n
    config = ModelConfig.from_dict(meta["model"])
    if config.head != HEADS[head_id]:
        raise CheckpointError("head id disagrees with the embedded config")
    need(4)
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    params = ParamStore()
    for _ in range(count):
        need(4)
        (ln,) = struct.unpack_from("<I", buf, off)
        off += 4
        need(ln + 4)
        name = buf[off : off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        need(4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        need(8 * size)
        params.add(name, np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape))
        off += 8 * size
    if off != len(buf):
        raise CheckpointError("trailing bytes after checkpoint parameters")
    return EegDecoder(config, params), meta


def save_checkpoint(path: str | os.PathLike, model: EegDecoder, extra: dict | None = None) -> int:
    data = encode_checkpoint(model, extra)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_checkpoint(path: str | os.PathLike) -> tuple[EegDecoder, dict]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())

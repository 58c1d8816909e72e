"""Sequence heads: stacked bidirectional LSTM and a one-layer transformer encoder."""

from __future__ import annotations

import numpy as np

from .params import ParamStore, glorot_uniform
from .tensor import Tensor, concat, layer_norm, relu, sigmoid, softmax, stack, tanh, tensor

HEADS = ("bilstm", "transformer")

# ---------------------------------------------------------------- Bi-LSTM
# Gate layout inside the 4H pre-activation: input, forget, output, candidate.


def lstm_cell_init(rng, params: ParamStore, prefix: str, in_dim: int, hidden: int) -> None:
    params.add(f"{prefix}.wx", glorot_uniform(rng, (in_dim, 4 * hidden), in_dim, 4 * hidden))
    params.add(f"{prefix}.wh", glorot_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias starts open
    params.add(f"{prefix}.b", b)


def _cell(z: Tensor, c: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    gates = sigmoid(z[:, : 3 * hidden])
    i, f, o = gates[:, :hidden], gates[:, hidden : 2 * hidden], gates[:, 2 * hidden :]
    g = tanh(z[:, 3 * hidden :])
    c_new = f * c + i * g
    return o * tanh(c_new), c_new


def lstm_cell_step(x, h, c, params: ParamStore, prefix: str) -> tuple[Tensor, Tensor]:
    """One LSTM step on a batch: x (N x D), h and c (N x H)."""
    x, h, c = tensor(x), tensor(h), tensor(c)
    wx, wh, b = params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"]
    if x.shape[-1] != wx.shape[0] or h.shape[-1] != wh.shape[0] or c.shape != h.shape:
        raise ValueError(f"dimension mismatch in LSTM step {x.shape}, {h.shape}, {c.shape}")
    return _cell(x @ wx + h @ wh + b, c, wh.shape[0])


def lstm_run(seq: Tensor, params: ParamStore, prefix: str, reverse: bool = False) -> list[Tensor]:
    """Hidden states for every step, returned in the original time order."""
    wx, wh, b = params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"]
    n, steps, _ = seq.shape
    hidden = wh.shape[0]
    xw = seq @ wx + b  # input projection for all steps at once
    h = Tensor(np.zeros((n, hidden)))
    c = Tensor(np.zeros((n, hidden)))
    out: list[Tensor | None] = [None] * steps
    for t in (range(steps - 1, -1, -1) if reverse else range(steps)):
        h, c = _cell(xw[:, t, :] + h @ wh, c, hidden)
        out[t] = h
    return out


def bilstm_init(rng, params: ParamStore, in_dim: int, hidden: int = 22, layers: int = 2) -> None:
    dim = in_dim
    for layer in range(1, layers + 1):
        for direction in ("fw", "bw"):
            lstm_cell_init(rng, params, f"lstm.l{layer}.{direction}", dim, hidden)
        dim = 2 * hidden


def bilstm_forward(seq, params: ParamStore, trace: dict | None = None) -> Tensor:
    """Stacked Bi-LSTM; embedding = [forward state at the last step | backward state at step 0]."""
    x = tensor(seq)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    layers = sorted({int(k.split(".")[1][1:]) for k in params if k.startswith("lstm.l")})
    if not layers:
        raise KeyError("no Bi-LSTM parameters found")
    if x.shape[-1] != params["lstm.l1.fw.wx"].shape[0]:
        raise ValueError(f"sequence features {x.shape[-1]} != LSTM input {params['lstm.l1.fw.wx'].shape[0]}")
    for layer in layers:
        fw = lstm_run(x, params, f"lstm.l{layer}.fw")
        bw = lstm_run(x, params, f"lstm.l{layer}.bw", reverse=True)
        if layer == layers[-1]:
            emb = concat([fw[-1], bw[0]], axis=-1)
        x = concat([stack(fw, axis=1), stack(bw, axis=1)], axis=-1)
        if trace is not None:
            trace[f"layer{layer}"] = x
    return emb.reshape(emb.shape[1:]) if single else emb


# ------------------------------------------------------------ Transformer
def sinusoidal_positions(steps: int, d_model: int) -> np.ndarray:
    pos = np.arange(steps)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def transformer_init(rng, params: ParamStore, in_dim: int, d_model: int = 32, n_heads: int = 8,
                     d_ff: int = 64) -> None:
    if d_model % n_heads:
        raise ValueError(f"d_model={d_model} is not divisible by {n_heads} heads")
    def dense(name, i, o, bias=True):
        params.add(f"tf.{name}.w", glorot_uniform(rng, (i, o), i, o))
        if bias:
            params.add(f"tf.{name}.b", np.zeros(o))

    dense("in", in_dim, d_model)
    for name in ("q", "k", "v", "o"):
        # a key bias adds the same amount to every score in a row, which softmax cancels
        dense(name, d_model, d_model, bias=name != "k")
    params.add("tf.ln1.g", np.ones(d_model))
    params.add("tf.ln1.b", np.zeros(d_model))
    dense("ff1", d_model, d_ff)
    dense("ff2", d_ff, d_model)
    params.add("tf.ln2.g", np.ones(d_model))
    params.add("tf.ln2.b", np.zeros(d_model))


def _dense(x: Tensor, params: ParamStore, name: str) -> Tensor:
    y = x @ params[f"tf.{name}.w"]
    b = f"tf.{name}.b"
    return y + params[b] if b in params else y


def multi_head_attention(x: Tensor, params: ParamStore, n_heads: int, trace: dict | None = None) -> Tensor:
    n, steps, d = x.shape
    dh = d // n_heads

    def heads(t):
        return t.reshape(n, steps, n_heads, dh).transpose(0, 2, 1, 3)

    q, k, v = (heads(_dense(x, params, name)) for name in ("q", "k", "v"))
    attn = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)), axis=-1)
    if trace is not None:
        trace["attention"] = attn.data
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(n, steps, d)
    return _dense(ctx, params, "o")


def transformer_forward(seq, params: ParamStore, n_heads: int = 8, pos_encoding: bool = True,
                        norm: str = "post", trace: dict | None = None) -> Tensor:
    """One encoder layer; the embedding is every output token flattened."""
    x = tensor(seq)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    d_model = params["tf.in.w"].shape[1]
    if d_model % n_heads:
        raise ValueError(f"d_model={d_model} is not divisible by {n_heads} heads")
    if norm not in ("post", "pre"):
        raise ValueError(f"norm must be 'post' or 'pre', got {norm!r}")
    n, steps, _ = x.shape

    def ln(t, i):
        return layer_norm(t) * params[f"tf.ln{i}.g"] + params[f"tf.ln{i}.b"]

    def ffn(t):
        return _dense(relu(_dense(t, params, "ff1")), params, "ff2")

    h = _dense(x, params, "in")
    if pos_encoding:
        h = h + sinusoidal_positions(steps, d_model)
    if trace is not None:
        trace["projected"] = h.data
    if norm == "post":
        h = ln(h + multi_head_attention(h, params, n_heads, trace), 1)
        if trace is not None:
            trace["sublayer1"] = h.data
        h = ln(h + ffn(h), 2)
    else:
        h = h + multi_head_attention(ln(h, 1), params, n_heads, trace)
        if trace is not None:
            trace["sublayer1"] = h.data
        h = h + ffn(ln(h, 2))
    if trace is not None:
        trace["tokens"] = h.data
    emb = h.reshape(n, steps * d_model)
    return emb.reshape(emb.shape[1:]) if single else emb


def head_embed(seq, head: str, params: ParamStore, n_heads: int = 8, pos_encoding: bool = True,
               norm: str = "post", trace: dict | None = None) -> Tensor:
    if head == "bilstm":
        return bilstm_forward(seq, params, trace)
    if head == "transformer":
        return transformer_forward(seq, params, n_heads, pos_encoding, norm, trace)
    raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")

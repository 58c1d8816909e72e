"""Three-layer convolutional feature extractor: two temporal convs, one channel conv.

One window (channels x time) becomes a sequence of ``L`` steps with one
feature per filter. At full size: (1,128,220) -> (25,128,93) -> (25,128,30)
-> (25,1,30) -> (30,25).
"""

from __future__ import annotations

import numpy as np

from .params import ParamStore, glorot_uniform
from .tensor import Tensor, conv2d_nhwc, relu, sigmoid, tensor


def conv_out_len(n: int, k: int, s: int) -> int:
    if k > n:
        raise ValueError(f"kernel {k} longer than input {n}")
    return (n - k) // s + 1


def stage_shapes(n_channels=128, win_len=220, n_filters=25, kernel_w=35, stride_w=2) -> list[tuple]:
    """Channels-first shape after each stage, ending with the (steps, features) sequence."""
    w1 = conv_out_len(win_len, kernel_w, stride_w)
    w2 = conv_out_len(w1, kernel_w, stride_w)
    return [
        (1, n_channels, win_len),
        (n_filters, n_channels, w1),
        (n_filters, n_channels, w2),
        (n_filters, 1, w2),
        (w2, n_filters),
    ]


def fe_init(rng: np.random.Generator, params: ParamStore | None = None, n_channels=128,
            n_filters=25, kernel_w=35) -> ParamStore:
    """Glorot-uniform kernels, zero biases."""
    p = params if params is not None else ParamStore()
    f, k = n_filters, kernel_w
    p.add("fe.conv1.w", glorot_uniform(rng, (f, 1, 1, k), fan_in=k, fan_out=f * k))
    p.add("fe.conv1.b", np.zeros(f))
    p.add("fe.conv2.w", glorot_uniform(rng, (f, f, 1, k), fan_in=f * k, fan_out=f * k))
    p.add("fe.conv2.b", np.zeros(f))
    p.add("fe.conv3.w", glorot_uniform(rng, (f, f, n_channels, 1), fan_in=f * n_channels, fan_out=f * n_channels))
    p.add("fe.conv3.b", np.zeros(f))
    return p


def fe_forward(window, params: ParamStore, stride_w: int = 2, trace: dict | None = None) -> Tensor:
    """Map windows (N x C x T, or a single C x T) to feature sequences (N x L x F).

    ``trace`` (if given) receives the channels-first shape of every stage.
    """
    x = tensor(window)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3:
        raise ValueError(f"expected channels x time window(s), got shape {x.shape}")
    w1, w3 = params["fe.conv1.w"], params["fe.conv3.w"]
    n, c, t = x.shape
    if c != w3.shape[2]:
        raise ValueError(f"window has {c} channels, extractor expects {w3.shape[2]}")
    expected = stage_shapes(c, t, w1.shape[0], w1.shape[3], stride_w)

    h = x.reshape(n, c, t, 1)  # channels-last: N x H(electrodes) x W(time) x 1
    h = relu(conv2d_nhwc(h, w1, (1, stride_w), params["fe.conv1.b"]))
    assert (h.shape[3],) + h.shape[1:3] == expected[1], (h.shape, expected[1])
    h2 = relu(conv2d_nhwc(h, params["fe.conv2.w"], (1, stride_w), params["fe.conv2.b"]))
    assert (h2.shape[3],) + h2.shape[1:3] == expected[2]
    h3 = sigmoid(conv2d_nhwc(h2, w3, (1, 1), params["fe.conv3.b"]))
    assert (h3.shape[3],) + h3.shape[1:3] == expected[3]
    seq = h3.reshape(n, h3.shape[2], h3.shape[3])
    assert seq.shape[1:] == expected[4]
    if trace is not None:
        trace["shapes"] = expected
        trace["layer1"], trace["layer2"], trace["layer3"] = h, h2, h3
    return seq.reshape(seq.shape[1:]) if single else seq

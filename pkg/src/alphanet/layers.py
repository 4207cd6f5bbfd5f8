"""Differentiable layer primitives.

Each layer is a pair of pure functions, ``*_forward`` returning
``(output, cache)`` and ``*_backward`` consuming the cache plus the
upstream gradient.  Caches hold exactly what the analytic backward pass
needs; there is no global tape.  All spatial data is NCHW.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

__all__ = [
    "same_padding",
    "conv2d_forward",
    "conv2d_backward",
    "combined_conv_forward",
    "combined_conv_backward",
    "batch_norm_forward",
    "batch_norm_backward",
    "relu_forward",
    "relu_backward",
    "stochastic_pool_forward",
    "stochastic_pool_backward",
    "classifier_head_forward",
    "classifier_head_backward",
]


def same_padding(kernel: int, stride: int, size: int) -> tuple[int, int]:
    """Asymmetric 'same' padding (low, high) for one spatial axis.

    Output extent is ceil(size / stride).  Even kernels pad one more on
    the high side: (floor((k-1)/2), ceil((k-1)/2)) at stride 1.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _resolve_padding(padding, kH, kW, stride, H, W):
    if padding == "same":
        pt, pb = same_padding(kH, stride, H)
        pl, pr = same_padding(kW, stride, W)
        return pt, pb, pl, pr
    pt, pb, pl, pr = padding
    return pt, pb, pl, pr


def _im2col(xp: np.ndarray, kH: int, kW: int, stride: int):
    windows = sliding_window_view(xp, (kH, kW), axis=(2, 3))[:, :, ::stride, ::stride]
    N, C, Ho, Wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kH * kW)
    return np.ascontiguousarray(cols), Ho, Wo


def _col2im(gcols, xp_shape, kH, kW, stride, Ho, Wo):
    N, C, Hp, Wp = xp_shape
    g = np.zeros(xp_shape, dtype=gcols.dtype)
    gc = gcols.reshape(N, Ho, Wo, C, kH, kW).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kH):
        for j in range(kW):
            g[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gc[:, :, i, j]
    return g


def conv2d_forward(x, kernel, bias, stride=1, padding="same"):
    """2-D cross-correlation with bias.

    x: (N, C, H, W); kernel: (out_ch, C, kH, kW); bias: (out_ch,).
    Output spatial extent is floor((H + padT + padB - kH) / stride) + 1.
    """
    N, C, H, W = x.shape
    out_ch, in_ch, kH, kW = kernel.shape
    if in_ch != C:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, kernel expects {in_ch}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    pt, pb, pl, pr = _resolve_padding(padding, kH, kW, stride, H, W)
    if H + pt + pb < kH or W + pl + pr < kW:
        raise ShapeError(
            f"kernel ({kH}x{kW}) larger than padded input ({H + pt + pb}x{W + pl + pr})"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols, Ho, Wo = _im2col(xp, kH, kW, stride)
    wmat = kernel.reshape(out_ch, -1)
    out = cols @ wmat.T + bias
    out = out.reshape(N, Ho, Wo, out_ch).transpose(0, 3, 1, 2)
    cache = {
        "cols": cols,
        "kernel": kernel,
        "xp_shape": xp.shape,
        "pads": (pt, pb, pl, pr),
        "stride": stride,
        "out_hw": (Ho, Wo),
        "x_shape": x.shape,
    }
    return out, cache


def conv2d_backward(cache, gy):
    N, C, H, W = cache["x_shape"]
    kernel = cache["kernel"]
    out_ch, _, kH, kW = kernel.shape
    Ho, Wo = cache["out_hw"]
    stride = cache["stride"]
    pt, pb, pl, pr = cache["pads"]
    gflat = gy.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    gb = gflat.sum(axis=0)
    gk = (gflat.T @ cache["cols"]).reshape(kernel.shape)
    gcols = gflat @ kernel.reshape(out_ch, -1)
    gxp = _col2im(gcols, cache["xp_shape"], kH, kW, stride, Ho, Wo)
    gx = gxp[:, :, pt : pt + H, pl : pl + W]
    return gx, gk, gb


def combined_conv_forward(x, k1, b1, k2, b2, stride=1):
    """Elementwise average of two 'same'-padded parallel convolutions."""
    if k1.shape[0] != k2.shape[0]:
        raise ShapeError(f"combined_conv out_ch mismatch: {k1.shape[0]} vs {k2.shape[0]}")
    y1, c1 = conv2d_forward(x, k1, b1, stride=stride, padding="same")
    y2, c2 = conv2d_forward(x, k2, b2, stride=stride, padding="same")
    if y1.shape != y2.shape:
        raise ShapeError(f"combined_conv branch outputs differ: {y1.shape} vs {y2.shape}")
    return 0.5 * (y1 + y2), {"c1": c1, "c2": c2}


def combined_conv_backward(cache, gy):
    gh = 0.5 * gy
    gx1, gk1, gb1 = conv2d_backward(cache["c1"], gh)
    gx2, gk2, gb2 = conv2d_backward(cache["c2"], gh)
    return gx1 + gx2, gk1, gb1, gk2, gb2


def batch_norm_forward(x, gamma, beta, buffers, eps=1e-5, momentum=0.1, train=True):
    """Per-channel batch normalization with running statistics.

    ``buffers`` is a mutable dict {"running_mean", "running_var",
    "initialized"}; train mode updates it in place with biased batch
    statistics.  Eval before any update is a checked error.
    """
    N, C, H, W = x.shape
    axes = (0, 2, 3)
    if train:
        if N * H * W < 2:
            raise ValueError("batch_norm train mode needs at least 2 values per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        buffers["running_mean"] = (1 - momentum) * buffers["running_mean"] + momentum * mean
        buffers["running_var"] = (1 - momentum) * buffers["running_var"] + momentum * var
        buffers["initialized"] = True
    else:
        if not buffers.get("initialized"):
            raise RuntimeError("batch_norm eval mode before running statistics were updated")
        mean = buffers["running_mean"]
        var = buffers["running_var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "train": train, "m": N * H * W}
    return y, cache


def batch_norm_backward(cache, gy):
    xhat = cache["xhat"]
    inv_std = cache["inv_std"]
    gamma = cache["gamma"]
    axes = (0, 2, 3)
    ggamma = (gy * xhat).sum(axis=axes)
    gbeta = gy.sum(axis=axes)
    gxhat = gy * gamma[None, :, None, None]
    if cache["train"]:
        m = cache["m"]
        gx = (
            gxhat
            - gxhat.mean(axis=axes, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
        ) * inv_std[None, :, None, None]
        # note: mean over axes uses m elements per channel, folded in by .mean
    else:
        gx = gxhat * inv_std[None, :, None, None]
    return gx, ggamma, gbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, {"mask": mask}


def relu_backward(cache, gy):
    return gy * cache["mask"]


def _pool_regions(x, rH, rW):
    N, C, H, W = x.shape
    if H % rH or W % rW:
        raise ShapeError(f"pool region ({rH}x{rW}) does not divide input ({H}x{W})")
    Ho, Wo = H // rH, W // rW
    r = x.reshape(N, C, Ho, rH, Wo, rW).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, rH * rW)
    return r, Ho, Wo


def stochastic_pool_forward(x, region=(2, 2), stride=None, train=True, stream=None, indices=None):
    """Probability-proportional-to-activation pooling.

    Train mode samples one activation per region with p_i = a_i / sum(a);
    eval mode outputs the probability-weighted mean.  Zero-sum regions
    yield 0 with uniform probabilities.  Requires non-negative input
    (apply after ReLU); regions are non-overlapping (stride = region).
    """
    rH, rW = region
    if stride is not None:
        s = (stride, stride) if isinstance(stride, int) else tuple(stride)
        if s != (rH, rW):
            raise ValueError("stochastic_pool supports non-overlapping regions only (stride = region)")
    if np.any(x < 0):
        raise ValueError("stochastic_pool input must be non-negative")
    r, Ho, Wo = _pool_regions(x, rH, rW)
    sums = r.sum(axis=-1)
    nonzero = sums > 0
    k = rH * rW
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(nonzero[..., None], r / np.where(nonzero, sums, 1.0)[..., None], 1.0 / k)
    cache = {"x_shape": x.shape, "region": region, "train": train, "r": r, "sums": sums, "probs": probs}
    if train:
        if indices is None:
            if stream is None:
                raise ValueError("train-mode stochastic_pool needs a PrngStream or fixed indices")
            u = stream.uniform(sums.shape)
            cdf = np.cumsum(probs, axis=-1)
            indices = np.minimum((u[..., None] >= cdf).sum(axis=-1), k - 1)
        out = np.take_along_axis(r, indices[..., None], axis=-1)[..., 0]
        out = np.where(nonzero, out, 0.0)
        cache["indices"] = indices
    else:
        out = np.where(nonzero, (probs * r).sum(axis=-1), 0.0)
        cache["out"] = out
    return out.astype(x.dtype), cache


def stochastic_pool_backward(cache, gy):
    rH, rW = cache["region"]
    N, C, H, W = cache["x_shape"]
    Ho, Wo = H // rH, W // rW
    gr = np.zeros((N, C, Ho, Wo, rH * rW), dtype=gy.dtype)
    if cache["train"]:
        np.put_along_axis(gr, cache["indices"][..., None], gy[..., None], axis=-1)
        gr *= (cache["sums"] > 0)[..., None]
    else:
        # eval output = sum a_i^2 / S; d/da_k = (2 a_k - out) / S
        sums = cache["sums"]
        safe = np.where(sums > 0, sums, 1.0)
        gr = gy[..., None] * (2.0 * cache["r"] - cache["out"][..., None]) / safe[..., None]
        gr *= (sums > 0)[..., None]
    gx = gr.reshape(N, C, Ho, Wo, rH, rW).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
    return gx


def classifier_head_forward(x, W, b):
    """Global average pool over space, then affine map to class logits."""
    N, C, H, W_ = x.shape
    if W.shape[1] != C:
        raise ShapeError(f"classifier_head weight expects {W.shape[1]} channels, input has {C}")
    feats = x.mean(axis=(2, 3))
    logits = feats @ W.T + b
    return logits, {"feats": feats, "W": W, "x_shape": x.shape}


def classifier_head_backward(cache, glogits, gfeats_extra=None):
    """Backward for the head; ``gfeats_extra`` adds a gradient that
    arrived directly at the pooled features (cosine-loss path)."""
    N, C, H, W_ = cache["x_shape"]
    W = cache["W"]
    gW = glogits.T @ cache["feats"]
    gb = glogits.sum(axis=0)
    gfeats = glogits @ W
    if gfeats_extra is not None:
        gfeats = gfeats + gfeats_extra
    gx = np.broadcast_to(gfeats[:, :, None, None] / (H * W_), cache["x_shape"]).astype(gfeats.dtype)
    return gx, gW, gb

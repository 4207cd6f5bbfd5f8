"""Classification losses: softmax CE, AM-Softmax, AM-Softmax with a
linear branch.

The margin losses operate on cosine logits (row-normalized features dot
row-normalized class weights).  Every loss returns ``(loss, grad)``
where the gradient is taken w.r.t. its input matrix and already carries
the 1/N batch averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossConfig",
    "cosine_logits",
    "cosine_logits_backward",
    "softmax_ce",
    "am_softmax",
    "am_softmax_linear",
    "apply_loss",
]

LOSS_KINDS = ("softmax", "am_softmax", "am_softmax_linear")


@dataclass
class LossConfig:
    kind: str = "am_softmax_linear"
    s: float = 30.0
    m: float = 0.35
    a: float | None = None
    c: float | None = None
    linear_mode: str = "calibrated"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.s <= 0:
            raise ValueError("scale s must be positive")
        if not 0 <= self.m < 1:
            raise ValueError("margin m must lie in [0, 1)")
        if self.linear_mode not in ("fixed", "calibrated"):
            raise ValueError("linear_mode must be 'fixed' or 'calibrated'")
        if self.kind == "am_softmax_linear" and self.linear_mode == "fixed":
            if self.a is None or self.c is None:
                raise ValueError("fixed linear_mode requires explicit a and c")
            if self.a >= 0:
                raise ValueError("fixed linear coefficient a must be negative "
                                 "(loss must grow as the margin violation worsens)")

    @classmethod
    def fixed(cls, s=30.0, m=0.35, a=None, c=0.0, kind="am_softmax_linear"):
        if a is None:
            a = -s
        return cls(kind=kind, s=s, m=m, a=a, c=c, linear_mode="fixed")


def cosine_logits(features: np.ndarray, class_weights: np.ndarray):
    """Cosine similarity matrix between feature rows and class-weight rows.

    Returns (cos, cache) with cos[i, j] in [-1, 1].  Zero-norm rows are a
    checked error.
    """
    fn = np.linalg.norm(features, axis=1)
    wn = np.linalg.norm(class_weights, axis=1)
    if np.any(fn < 1e-12):
        raise ValueError("zero-norm feature row in cosine_logits")
    if np.any(wn < 1e-12):
        raise ValueError("zero-norm class-weight row in cosine_logits")
    fhat = features / fn[:, None]
    what = class_weights / wn[:, None]
    cos = fhat @ what.T
    cache = {"fhat": fhat, "what": what, "fn": fn, "wn": wn}
    return cos, cache


def cosine_logits_backward(cache, gcos):
    fhat, what = cache["fhat"], cache["what"]
    gfh = gcos @ what
    gf = (gfh - (gfh * fhat).sum(axis=1, keepdims=True) * fhat) / cache["fn"][:, None]
    gwh = gcos.T @ fhat
    gw = (gwh - (gwh * what).sum(axis=1, keepdims=True) * what) / cache["wn"][:, None]
    return gf, gw


def _check_labels(labels, classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"label out of range [0, {classes})")
    return labels


def softmax_ce(logits: np.ndarray, labels):
    """Mean cross-entropy of softmax(logits) against integer labels."""
    N, C = logits.shape
    labels = _check_labels(labels, C)
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(N), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(N), labels] -= 1.0
    grad /= N
    return loss, grad


def am_softmax(cos: np.ndarray, labels, s: float, m: float):
    """Additive-margin softmax over cosine logits.

    Subtracts m from the target-class cosine, scales everything by s,
    then applies softmax cross-entropy.  The gradient is w.r.t. cos.
    """
    N, C = cos.shape
    labels = _check_labels(labels, C)
    z = s * cos.astype(np.float64, copy=True)
    z[np.arange(N), labels] -= s * m
    loss, gz = softmax_ce(z, labels)
    return loss, s * gz


def am_softmax_linear(cos: np.ndarray, labels, cfg: LossConfig):
    """AM-Softmax whose log term is replaced by a linear ramp when the
    margin-adjusted target cosine psi = cos[y] - m is non-positive.

    Positive branch: -log( e^{s psi} / (e^{s psi + c} + sum_{j!=y} e^{s cos_j}) ).
    Non-positive branch, fixed mode: a*psi + c with the configured pair.
    Calibrated mode instead uses the tangent of the positive branch
    (with c = 0) at psi = 0, giving C1 continuity at the boundary.
    """
    cfg.validate()
    if cfg.kind != "am_softmax_linear":
        raise ValueError("config kind must be am_softmax_linear")
    s, m = cfg.s, cfg.m
    N, C = cos.shape
    labels = _check_labels(labels, C)
    cos = cos.astype(np.float64, copy=False)
    idx = np.arange(N)
    psi = cos[idx, labels] - m

    sz = s * cos
    mask = np.ones_like(sz, dtype=bool)
    mask[idx, labels] = False
    # log R_i = logsumexp over non-target scaled cosines
    neg = np.where(mask, sz, -np.inf)
    mx = neg.max(axis=1)
    logR = mx + np.log(np.exp(neg - mx[:, None]).sum(axis=1))

    grad = np.zeros_like(cos)
    losses = np.zeros(N)
    pos = psi > 0

    if np.any(pos):
        c_off = cfg.c if cfg.linear_mode == "fixed" else 0.0
        t = np.logaddexp(s * psi[pos] + c_off, logR[pos])
        losses[pos] = -s * psi[pos] + t
        gnt = s * np.exp(sz[pos] - t[:, None])  # non-target slots
        gnt[~mask[pos]] = 0.0
        grad[pos] = gnt
        grad[idx[pos], labels[pos]] = -s + s * np.exp(s * psi[pos] + c_off - t)

    npos = ~pos
    if np.any(npos):
        if cfg.linear_mode == "fixed":
            losses[npos] = cfg.a * psi[npos] + cfg.c
            grad[idx[npos], labels[npos]] = cfg.a
        else:
            sig = 1.0 / (1.0 + np.exp(-logR[npos]))  # R / (1 + R)
            a_i = -s * sig
            c_i = np.logaddexp(0.0, logR[npos])  # log(1 + R)
            losses[npos] = a_i * psi[npos] + c_i
            dl_dlogR = sig - s * psi[npos] * sig * (1.0 - sig)
            gnt = dl_dlogR[:, None] * s * np.exp(sz[npos] - logR[npos][:, None])
            gnt[~mask[npos]] = 0.0
            grad[npos] = gnt
            grad[idx[npos], labels[npos]] = a_i

    return losses.mean(), grad / N


def apply_loss(cfg: LossConfig, features, class_weights, bias, labels):
    """Route features through the configured loss.

    softmax: affine logits then cross-entropy.  Margin losses: cosine
    logits then the margin formulation (bias unused).  Returns
    (loss, score_matrix, grads) where grads has keys 'features',
    'weights', 'bias' and score_matrix is what evaluation ranks by.
    """
    if cfg.kind == "softmax":
        logits = features @ class_weights.T + bias
        loss, gz = softmax_ce(logits, labels)
        return loss, logits, {
            "features": gz @ class_weights,
            "weights": gz.T @ features,
            "bias": gz.sum(axis=0),
        }
    cos, cache = cosine_logits(features, class_weights)
    if cfg.kind == "am_softmax":
        loss, gcos = am_softmax(cos, labels, cfg.s, cfg.m)
    else:
        loss, gcos = am_softmax_linear(cos, labels, cfg)
    gf, gw = cosine_logits_backward(cache, gcos)
    return loss, cos, {"features": gf, "weights": gw, "bias": np.zeros_like(bias)}

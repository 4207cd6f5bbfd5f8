"""Central finite-difference verification of every analytic gradient.

All checks run in float64 with step h = 1e-5 and report the maximum
relative error.  Used by the test suite and the `gradcheck` CLI command.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from . import losses as LS
from .graph import build_network, Network
from .rng import PrngStream
from .trainer import TrainConfig

__all__ = ["numeric_grad", "rel_error", "run_suite", "LAYER_TOL", "NETWORK_TOL"]

H_STEP = 1e-5
LAYER_TOL = 1e-4
NETWORK_TOL = 1e-3


def numeric_grad(f, x, h=H_STEP):
    """Central-difference gradient of scalar f w.r.t. array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def _rand(stream, shape, lo=-1.0, hi=1.0):
    return (lo + (hi - lo) * stream.uniform(shape)).astype(np.float64)


def _weighted(forward, upstream):
    """Scalar projection <upstream, forward(...)> for FD checking."""
    return lambda out: float((out * upstream).sum())


def check_conv2d(stream):
    x = _rand(stream.fork("x"), (2, 3, 6, 6))
    k = _rand(stream.fork("k"), (4, 3, 3, 3))
    b = _rand(stream.fork("b"), (4,))
    up = _rand(stream.fork("up"), (2, 4, 3, 3))
    y, cache = L.conv2d_forward(x, k, b, stride=2)
    gx, gk, gb = L.conv2d_backward(cache, up)
    proj = lambda xx, kk, bb: float((L.conv2d_forward(xx, kk, bb, stride=2)[0] * up).sum())
    errs = [
        rel_error(gx, numeric_grad(lambda v: proj(v, k, b), x)),
        rel_error(gk, numeric_grad(lambda v: proj(x, v, b), k)),
        rel_error(gb, numeric_grad(lambda v: proj(x, k, v), b)),
    ]
    return max(errs)


def check_combined_conv(stream):
    x = _rand(stream.fork("x"), (2, 2, 6, 6))
    k1 = _rand(stream.fork("k1"), (3, 2, 3, 3))
    b1 = _rand(stream.fork("b1"), (3,))
    k2 = _rand(stream.fork("k2"), (3, 2, 4, 4))
    b2 = _rand(stream.fork("b2"), (3,))
    up = _rand(stream.fork("up"), (2, 3, 6, 6))
    _, cache = L.combined_conv_forward(x, k1, b1, k2, b2)
    gx, gk1, gb1, gk2, gb2 = L.combined_conv_backward(cache, up)
    proj = lambda *a: float((L.combined_conv_forward(*a)[0] * up).sum())
    errs = [
        rel_error(gx, numeric_grad(lambda v: proj(v, k1, b1, k2, b2), x)),
        rel_error(gk1, numeric_grad(lambda v: proj(x, v, b1, k2, b2), k1)),
        rel_error(gb1, numeric_grad(lambda v: proj(x, k1, v, k2, b2), b1)),
        rel_error(gk2, numeric_grad(lambda v: proj(x, k1, b1, v, b2), k2)),
        rel_error(gb2, numeric_grad(lambda v: proj(x, k1, b1, k2, v), b2)),
    ]
    return max(errs)


def check_batch_norm(stream):
    x = _rand(stream.fork("x"), (3, 2, 4, 4))
    gamma = _rand(stream.fork("g"), (2,), 0.5, 1.5)
    beta = _rand(stream.fork("bt"), (2,))
    up = _rand(stream.fork("up"), (3, 2, 4, 4))

    def fresh():
        return {"running_mean": np.zeros(2), "running_var": np.ones(2), "initialized": False}

    _, cache = L.batch_norm_forward(x, gamma, beta, fresh(), train=True)
    gx, gg, gb = L.batch_norm_backward(cache, up)
    proj = lambda xx, g_, b_: float(
        (L.batch_norm_forward(xx, g_, b_, fresh(), train=True)[0] * up).sum())
    errs = [
        rel_error(gx, numeric_grad(lambda v: proj(v, gamma, beta), x)),
        rel_error(gg, numeric_grad(lambda v: proj(x, v, beta), gamma)),
        rel_error(gb, numeric_grad(lambda v: proj(x, gamma, v), beta)),
    ]
    return max(errs)


def check_relu(stream):
    x = _rand(stream.fork("x"), (3, 5)) + 0.05  # keep away from the kink
    up = _rand(stream.fork("up"), (3, 5))
    _, cache = L.relu_forward(x)
    gx = L.relu_backward(cache, up)
    fd = numeric_grad(lambda v: float((L.relu_forward(v)[0] * up).sum()), x)
    return rel_error(gx, fd)


def check_stochastic_pool(stream):
    x = _rand(stream.fork("x"), (2, 2, 4, 4), 0.1, 2.0)
    up = _rand(stream.fork("up"), (2, 2, 2, 2))
    _, c0 = L.stochastic_pool_forward(x, train=True, stream=stream.fork("draw"))
    idx = c0["indices"]
    _, cache = L.stochastic_pool_forward(x, train=True, indices=idx)
    gx = L.stochastic_pool_backward(cache, up)
    fd = numeric_grad(
        lambda v: float((L.stochastic_pool_forward(v, train=True, indices=idx)[0] * up).sum()), x)
    err_train = rel_error(gx, fd)
    _, ce = L.stochastic_pool_forward(x, train=False)
    gxe = L.stochastic_pool_backward(ce, up)
    fde = numeric_grad(
        lambda v: float((L.stochastic_pool_forward(v, train=False)[0] * up).sum()), x)
    return max(err_train, rel_error(gxe, fde))


def check_classifier_head(stream):
    x = _rand(stream.fork("x"), (2, 3, 4, 4))
    W = _rand(stream.fork("W"), (5, 3))
    b = _rand(stream.fork("b"), (5,))
    up = _rand(stream.fork("up"), (2, 5))
    _, cache = L.classifier_head_forward(x, W, b)
    gx, gW, gb = L.classifier_head_backward(cache, up)
    proj = lambda xx, ww, bb: float((L.classifier_head_forward(xx, ww, bb)[0] * up).sum())
    errs = [
        rel_error(gx, numeric_grad(lambda v: proj(v, W, b), x)),
        rel_error(gW, numeric_grad(lambda v: proj(x, v, b), W)),
        rel_error(gb, numeric_grad(lambda v: proj(x, W, v), b)),
    ]
    return max(errs)


def check_softmax_ce(stream):
    z = _rand(stream.fork("z"), (4, 6), -2, 2)
    y = np.array([0, 2, 5, 1])
    _, grad = LS.softmax_ce(z, y)
    fd = numeric_grad(lambda v: LS.softmax_ce(v, y)[0], z)
    return rel_error(grad, fd)


def check_am_softmax(stream):
    cos = _rand(stream.fork("cos"), (4, 6), -0.9, 0.9)
    y = np.array([1, 0, 3, 5])
    _, grad = LS.am_softmax(cos, y, s=10.0, m=0.2)
    fd = numeric_grad(lambda v: LS.am_softmax(v, y, s=10.0, m=0.2)[0], cos)
    return rel_error(grad, fd)


def check_am_softmax_linear(stream):
    y = np.array([0, 1, 2, 3])
    errs = []
    for cfg in (LS.LossConfig(kind="am_softmax_linear", s=8.0, m=0.3, linear_mode="calibrated"),
                LS.LossConfig.fixed(s=8.0, m=0.3, a=-4.0, c=0.2)):
        cos = _rand(stream.fork(f"cos/{cfg.linear_mode}"), (4, 5), -0.9, 0.9)
        # force both branches to appear, away from the psi = 0 boundary
        cos[0, 0] = 0.8
        cos[1, 1] = 0.9
        cos[2, 2] = -0.2
        cos[3, 3] = 0.05
        _, grad = LS.am_softmax_linear(cos, y, cfg)
        fd = numeric_grad(lambda v: LS.am_softmax_linear(v, y, cfg)[0], cos)
        errs.append(rel_error(grad, fd))
    return max(errs)


def check_cosine_logits(stream):
    f = _rand(stream.fork("f"), (3, 4), 0.2, 1.0)
    W = _rand(stream.fork("W"), (5, 4), 0.2, 1.0)
    up = _rand(stream.fork("up"), (3, 5))
    _, cache = LS.cosine_logits(f, W)
    gf, gW = LS.cosine_logits_backward(cache, up)
    proj = lambda ff, ww: float((LS.cosine_logits(ff, ww)[0] * up).sum())
    errs = [
        rel_error(gf, numeric_grad(lambda v: proj(v, W), f)),
        rel_error(gW, numeric_grad(lambda v: proj(f, v), W)),
    ]
    return max(errs)


def check_network(stream, seed=11):
    """End-to-end micro-network check: 2 trainable stages of a desk alpha
    net on an 8x8 input, pooling indices frozen, every parameter checked
    against finite differences of the total loss."""
    spec, params, buffers = build_network(
        "v1", "alpha", num_classes=3, seed=seed, desk_scale=32, base_ch=2,
        p_extra=1.0, combined_kernels=(3, 5), num_stages=2)
    net = Network(spec, params, buffers).astype(np.float64)
    x = _rand(stream.fork("x"), (2, 3, 8, 8))
    y = np.array([0, 2])
    cfg = TrainConfig(loss=LS.LossConfig(kind="am_softmax_linear", s=4.0, m=0.1),
                      lambda_aux=0.3, dtype="float64")

    # freeze pooling index choices
    ref = net.forward(x, train=True, stream=PrngStream(seed, "chk"))
    frozen = {b.index: c["pool"]["indices"] for b, c in zip(spec.blocks, ref.caches)
              if "pool" in c}

    def loss_fn():
        fp = net.forward(x, train=True, pool_indices=frozen)
        p = net.params
        main, _, _ = LS.apply_loss(cfg.loss, fp.features, p["head/W"], p["head/b"], y)
        aux = []
        for bi in sorted(fp.aux_features):
            li, _, _ = LS.apply_loss(cfg.loss, fp.aux_features[bi], p[f"block{bi}/aux/W"],
                                     p[f"block{bi}/aux/b"], y)
            aux.append(li)
        from .graph import total_loss
        return total_loss(main, aux, cfg.lambda_aux)

    # analytic gradients via the trainer path, with the same frozen indices
    fp = net.forward(x, train=True, pool_indices=frozen)
    p = net.params
    main, _, mg = LS.apply_loss(cfg.loss, fp.features, p["head/W"], p["head/b"], y)
    aux_grads = {}
    head_grads = {"head/W": mg["weights"], "head/b": mg["bias"]}
    aux_blocks = sorted(fp.aux_features)
    scale = cfg.lambda_aux / len(aux_blocks) if aux_blocks else 0.0
    for bi in aux_blocks:
        _, _, gi = LS.apply_loss(cfg.loss, fp.aux_features[bi], p[f"block{bi}/aux/W"],
                                 p[f"block{bi}/aux/b"], y)
        aux_grads[bi] = scale * gi["features"]
        head_grads[f"block{bi}/aux/W"] = scale * gi["weights"]
        head_grads[f"block{bi}/aux/b"] = scale * gi["bias"]
    grads = net.backward(fp, mg["features"], aux_grads)
    for k, g in head_grads.items():
        grads[k] = grads[k] + g

    worst = 0.0
    for name in sorted(net.params):
        pv = net.params[name]
        fd = numeric_grad(lambda _v: loss_fn(), pv)
        worst = max(worst, rel_error(np.asarray(grads[name]), fd))
    return worst


LAYER_CHECKS = {
    "conv2d": check_conv2d,
    "combined_conv": check_combined_conv,
    "batch_norm": check_batch_norm,
    "relu": check_relu,
    "stochastic_pool": check_stochastic_pool,
    "classifier_head": check_classifier_head,
}
LOSS_CHECKS = {
    "cosine_logits": check_cosine_logits,
    "softmax_ce": check_softmax_ce,
    "am_softmax": check_am_softmax,
    "am_softmax_linear": check_am_softmax_linear,
}


def run_suite(scope="all", seed=3):
    """Run the requested finite-difference suites.

    Returns a list of (name, max_rel_error, tolerance, passed) tuples.
    scope: 'layer', 'loss', 'network', or 'all'.
    """
    results = []
    stream = PrngStream(seed, "gradcheck")
    if scope in ("layer", "all"):
        for name, fn in LAYER_CHECKS.items():
            err = fn(stream.fork(name))
            results.append((name, err, LAYER_TOL, err < LAYER_TOL))
    if scope in ("loss", "all"):
        for name, fn in LOSS_CHECKS.items():
            err = fn(stream.fork(name))
            results.append((name, err, LAYER_TOL, err < LAYER_TOL))
    if scope in ("network", "all"):
        err = check_network(stream.fork("network"))
        results.append(("network", err, NETWORK_TOL, err < NETWORK_TOL))
    return results

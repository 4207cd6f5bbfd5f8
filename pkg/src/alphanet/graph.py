"""Network construction and execution for the three comparable
structures: plain conv stacks, pre-activation residual blocks, and alpha
blocks with stochastic inter-block connectivity.

A network is a NetworkSpec (pure description, fully determined by config
and seed) plus flat dicts of parameters and batch-norm buffers.  Forward
and backward are explicit; every stochastic choice draws from labeled
PrngStream forks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .rng import PrngStream

__all__ = [
    "VERSION_BUDGETS",
    "BlockSpec",
    "EdgeGate",
    "NetworkSpec",
    "sample_connectivity",
    "build_network",
    "Network",
    "total_loss",
    "transplant_residual_params",
]

VERSION_BUDGETS = {"v1": 128, "v2": 256, "v3": 512, "v4": 1024}
STRUCTURES = ("plain", "residual", "alpha")
NUM_STAGES = 4


@dataclass
class BlockSpec:
    index: int
    stage: int
    structure: str
    in_ch: int
    out_ch: int
    downsample: bool
    has_aux_head: bool = False


@dataclass
class EdgeGate:
    source: int
    target: int
    init_logit: float = 0.0


@dataclass
class NetworkSpec:
    version: str
    structure: str
    num_classes: int
    seed: int
    desk_scale: int = 16
    base_ch: int = 8
    in_ch: int = 3
    p_extra: float = 0.25
    combined_kernels: tuple[int, int] = (5, 10)
    downsample_by: str = "pool"  # "pool" | "stride"
    pool_region: tuple[int, int] = (2, 2)
    blocks: list[BlockSpec] = field(default_factory=list)
    edges: list[EdgeGate] = field(default_factory=list)

    @property
    def weighted_layers(self) -> int:
        # trunk accounting: 1 conv per plain layer, 2 per block
        per = 1 if self.structure == "plain" else 2
        return per * len(self.blocks)

    @property
    def final_ch(self) -> int:
        return self.blocks[-1].out_ch

    @property
    def min_input(self) -> int:
        return 2 ** sum(1 for b in self.blocks if b.downsample)

    def to_manifest(self) -> str:
        lines = [
            f"version={self.version}",
            f"structure={self.structure}",
            f"num_classes={self.num_classes}",
            f"seed={self.seed}",
            f"desk_scale={self.desk_scale}",
            f"base_ch={self.base_ch}",
            f"in_ch={self.in_ch}",
            f"p_extra={self.p_extra}",
            f"combined_kernels={self.combined_kernels[0]},{self.combined_kernels[1]}",
            f"downsample_by={self.downsample_by}",
            f"pool_region={self.pool_region[0]},{self.pool_region[1]}",
        ]
        for e in self.edges:
            lines.append(f"edge={e.source},{e.target}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "NetworkSpec":
        kv = {}
        edges = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            if key == "edge":
                s, t = value.split(",")
                edges.append((int(s), int(t)))
            else:
                kv[key] = value
        spec, _, _ = build_network(
            version=kv["version"],
            structure=kv["structure"],
            num_classes=int(kv["num_classes"]),
            seed=int(kv["seed"]),
            desk_scale=int(kv["desk_scale"]),
            base_ch=int(kv["base_ch"]),
            in_ch=int(kv["in_ch"]),
            p_extra=float(kv["p_extra"]),
            combined_kernels=tuple(int(v) for v in kv["combined_kernels"].split(",")),
            downsample_by=kv["downsample_by"],
        )
        got = [(e.source, e.target) for e in spec.edges]
        if got != edges:
            raise ValueError("manifest edge list does not match rebuilt connectivity")
        return spec


def sample_connectivity(num_blocks, p_extra, stream: PrngStream, stages=None):
    """Seeded sampling of the inter-block edge set.

    Chain edges (i-1 -> i) are always present.  Each same-stage pair
    (j -> i) with j < i-1 joins independently with probability p_extra.
    Gate logits are initialized from the stream fork "init/gates".
    Deterministic in (num_blocks, p_extra, stream identity).
    """
    if not 0 <= p_extra <= 1:
        raise ValueError("p_extra must lie in [0, 1]")
    if stages is None:
        stages = [0] * num_blocks
    edge_stream = stream.fork("edges")
    pairs = []
    for i in range(1, num_blocks):
        pairs.append((i - 1, i))
        for j in range(i - 1):
            if stages[j] == stages[i]:
                u = float(edge_stream.uniform())
                if u < p_extra:
                    pairs.append((j, i))
    pairs.sort(key=lambda e: (e[1], e[0]))
    gate_stream = stream.fork("init/gates")
    logits = gate_stream.normal((len(pairs),), scale=0.1)
    return [EdgeGate(source=s, target=t, init_logit=float(l))
            for (s, t), l in zip(pairs, logits)]


def _plan_blocks(structure, num_blocks, base_ch, num_classes, num_stages=NUM_STAGES):
    if num_blocks % num_stages:
        raise ValueError(f"{num_blocks} blocks do not fill {num_stages} stages evenly")
    per_stage = num_blocks // num_stages
    blocks = []
    ch = base_ch
    for idx in range(num_blocks):
        stage = idx // per_stage
        first_of_stage = idx % per_stage == 0
        down = first_of_stage and stage > 0
        in_ch = ch
        out_ch = 2 * ch if down else ch
        ch = out_ch
        last_of_stage = idx % per_stage == per_stage - 1
        blocks.append(BlockSpec(
            index=idx, stage=stage, structure=structure,
            in_ch=in_ch, out_ch=out_ch, downsample=down,
            has_aux_head=structure == "alpha" and last_of_stage,
        ))
    return blocks


def build_network(version, structure, num_classes, seed, desk_scale=16, base_ch=8,
                  in_ch=3, p_extra=0.25, combined_kernels=(5, 10), downsample_by=None,
                  num_stages=NUM_STAGES):
    """Build a NetworkSpec plus He-initialized parameters and BN buffers.

    The version budget (128/256/512/1024 weighted trunk layers) is divided
    by desk_scale; plain structures spend 1 conv per layer slot, block
    structures 2 per block, spread over 4 stages with channel doubling at
    each downsample.
    """
    if version not in VERSION_BUDGETS:
        raise ValueError(f"unknown version {version!r}")
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}")
    budget = VERSION_BUDGETS[version]
    if budget % desk_scale:
        raise ValueError(f"desk_scale {desk_scale} does not divide budget {budget}")
    num_layers = budget // desk_scale
    if num_stages == NUM_STAGES and num_layers < 8:
        raise ValueError(f"desk_scale {desk_scale} leaves only {num_layers} weighted layers (< 8)")
    if downsample_by is None:
        downsample_by = "pool" if structure == "alpha" else "stride"
    if downsample_by not in ("pool", "stride"):
        raise ValueError(f"unknown downsample_by {downsample_by!r}")

    if structure == "plain":
        num_blocks = num_layers
    else:
        if num_layers % 2:
            raise ValueError("block structures need an even weighted-layer budget")
        num_blocks = num_layers // 2
    blocks = _plan_blocks(structure, num_blocks, base_ch, num_classes, num_stages)

    root = PrngStream(seed, "net")
    edges = []
    if structure == "alpha":
        edges = sample_connectivity(num_blocks, p_extra, root,
                                    stages=[b.stage for b in blocks])

    spec = NetworkSpec(
        version=version, structure=structure, num_classes=num_classes, seed=seed,
        desk_scale=desk_scale, base_ch=base_ch, in_ch=in_ch, p_extra=p_extra,
        combined_kernels=tuple(combined_kernels), downsample_by=downsample_by,
        blocks=blocks, edges=edges,
    )
    params, buffers = _init_params(spec, root)
    return spec, params, buffers


def _he(stream, shape, fan_in):
    return stream.normal(shape, scale=np.sqrt(2.0 / fan_in))


def _init_params(spec: NetworkSpec, root: PrngStream):
    params = {}
    buffers = {}

    def conv(name, out_ch, in_ch, k):
        fan = in_ch * k * k
        params[f"{name}/kernel"] = _he(root.fork(f"init/{name}/kernel"), (out_ch, in_ch, k, k), fan)
        params[f"{name}/bias"] = np.zeros(out_ch)

    def bn(name, ch):
        params[f"{name}/gamma"] = np.ones(ch)
        params[f"{name}/beta"] = np.zeros(ch)
        buffers[name] = {"running_mean": np.zeros(ch), "running_var": np.ones(ch),
                         "initialized": False}

    def head(name, ch):
        params[f"{name}/W"] = _he(root.fork(f"init/{name}/W"), (spec.num_classes, ch), ch)
        params[f"{name}/b"] = np.zeros(spec.num_classes)

    conv("stem", spec.base_ch, spec.in_ch, 3)
    kA, kB = spec.combined_kernels
    for b in spec.blocks:
        pre = f"block{b.index}"
        if b.structure == "plain":
            conv(f"{pre}/conv", b.out_ch, b.in_ch, 3)
            bn(f"{pre}/bn", b.out_ch)
        else:
            bn(f"{pre}/bn1", b.in_ch)
            conv(f"{pre}/conv1", b.out_ch, b.in_ch, 3)
            bn(f"{pre}/bn2", b.out_ch)
            if b.structure == "residual":
                conv(f"{pre}/conv2", b.out_ch, b.out_ch, 3)
            else:
                conv(f"{pre}/comb1", b.out_ch, b.out_ch, kA)
                conv(f"{pre}/comb2", b.out_ch, b.out_ch, kB)
            if b.downsample or b.in_ch != b.out_ch:
                conv(f"{pre}/proj", b.out_ch, b.in_ch, 1)
        if b.has_aux_head:
            head(f"{pre}/aux", b.out_ch)
    if spec.structure != "plain":
        bn("final/bn", spec.final_ch)
    head("head", spec.final_ch)
    for e in spec.edges:
        params[f"gate/{e.target}/{e.source}"] = np.array(e.init_logit)
    return params, buffers


def total_loss(main_loss, aux_losses, lambda_aux):
    """main + lambda_aux * mean(aux losses); empty aux list adds 0."""
    if lambda_aux < 0:
        raise ValueError("lambda_aux must be non-negative")
    if not aux_losses:
        return main_loss
    return main_loss + lambda_aux * float(np.mean(aux_losses))


@dataclass
class ForwardPass:
    features: np.ndarray          # main-head pooled features (N, final_ch)
    aux_features: dict            # block index -> pooled features
    block_outputs: list
    stem_out: np.ndarray
    caches: list                  # per-block cache dicts
    stem_cache: dict
    final_cache: dict
    gate_weights: dict            # target -> (sources, softmax weights)
    train: bool


class Network:
    """Executable network: spec + parameter/buffer dicts.

    Parameters are plain float arrays keyed by path-like names; dtype of
    the parameters decides the compute precision.
    """

    def __init__(self, spec: NetworkSpec, params: dict, buffers: dict):
        self.spec = spec
        self.params = params
        self.buffers = buffers

    def astype(self, dtype):
        self.params = {k: np.asarray(v, dtype=dtype) for k, v in self.params.items()}
        for buf in self.buffers.values():
            buf["running_mean"] = np.asarray(buf["running_mean"], dtype=dtype)
            buf["running_var"] = np.asarray(buf["running_var"], dtype=dtype)
        return self

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # ---- forward -------------------------------------------------------

    def _incoming(self, index):
        return [e for e in self.spec.edges if e.target == index]

    def forward(self, x, train=True, stream=None, pool_indices=None) -> ForwardPass:
        p = self.params
        spec = self.spec
        x = np.asarray(x, dtype=p["stem/kernel"].dtype)
        pool_indices = pool_indices or {}
        stem_out, stem_cache = L.conv2d_forward(x, p["stem/kernel"], p["stem/bias"])
        outputs = []
        caches = []
        gate_weights = {}
        aux_features = {}
        for b in spec.blocks:
            incoming = self._incoming(b.index) if spec.structure == "alpha" else []
            if not incoming:
                x_agg = outputs[b.index - 1] if b.index > 0 else stem_out
                gate_cache = None
            else:
                logits = np.array([p[f"gate/{b.index}/{e.source}"] for e in incoming])
                w = np.exp(logits - logits.max())
                w = w / w.sum()
                srcs = [outputs[e.source] for e in incoming]
                x_agg = sum(wi * s for wi, s in zip(w, srcs))
                gate_cache = ([e.source for e in incoming], w)
                gate_weights[b.index] = gate_cache
            out, cache = self._block_forward(b, x_agg, train, stream, pool_indices.get(b.index))
            cache["gate"] = gate_cache
            if b.has_aux_head:
                feats, head_cache = L.classifier_head_forward(
                    out, p[f"block{b.index}/aux/W"], p[f"block{b.index}/aux/b"])
                # head logits are recomputed by the loss adapter; keep features
                aux_features[b.index] = head_cache["feats"]
                cache["aux_head"] = head_cache
            outputs.append(out)
            caches.append(cache)
        final_cache = {}
        h = outputs[-1]
        if spec.structure != "plain":
            h, final_cache["bn"] = L.batch_norm_forward(
                h, p["final/bn/gamma"], p["final/bn/beta"], self.buffers["final/bn"],
                train=train)
            h, final_cache["relu"] = L.relu_forward(h)
        _, head_cache = L.classifier_head_forward(h, p["head/W"], p["head/b"])
        final_cache["head"] = head_cache
        return ForwardPass(
            features=head_cache["feats"], aux_features=aux_features,
            block_outputs=outputs, stem_out=stem_out, caches=caches,
            stem_cache=stem_cache, final_cache=final_cache,
            gate_weights=gate_weights, train=train,
        )

    def _block_forward(self, b: BlockSpec, x, train, stream, pool_idx):
        p = self.params
        pre = f"block{b.index}"
        cache = {"spec": b}
        if b.structure == "plain":
            stride = 2 if b.downsample else 1
            y, cache["conv"] = L.conv2d_forward(x, p[f"{pre}/conv/kernel"], p[f"{pre}/conv/bias"],
                                                stride=stride)
            y, cache["bn"] = L.batch_norm_forward(y, p[f"{pre}/bn/gamma"], p[f"{pre}/bn/beta"],
                                                  self.buffers[f"{pre}/bn"], train=train)
            y, cache["relu"] = L.relu_forward(y)
            return y, cache
        pool_here = b.downsample and self.spec.downsample_by == "pool" and b.structure == "alpha"
        conv1_stride = 2 if (b.downsample and not pool_here) else 1
        h, cache["bn1"] = L.batch_norm_forward(x, p[f"{pre}/bn1/gamma"], p[f"{pre}/bn1/beta"],
                                               self.buffers[f"{pre}/bn1"], train=train)
        h, cache["relu1"] = L.relu_forward(h)
        h, cache["conv1"] = L.conv2d_forward(h, p[f"{pre}/conv1/kernel"], p[f"{pre}/conv1/bias"],
                                             stride=conv1_stride)
        h, cache["bn2"] = L.batch_norm_forward(h, p[f"{pre}/bn2/gamma"], p[f"{pre}/bn2/beta"],
                                               self.buffers[f"{pre}/bn2"], train=train)
        h, cache["relu2"] = L.relu_forward(h)
        if pool_here:
            ps = stream.fork(f"pool/block{b.index}") if stream is not None else None
            h, cache["pool"] = L.stochastic_pool_forward(
                h, region=self.spec.pool_region, train=train, stream=ps, indices=pool_idx)
        if b.structure == "residual":
            z, cache["conv2"] = L.conv2d_forward(h, p[f"{pre}/conv2/kernel"], p[f"{pre}/conv2/bias"])
        else:
            z, cache["comb"] = L.combined_conv_forward(
                h, p[f"{pre}/comb1/kernel"], p[f"{pre}/comb1/bias"],
                p[f"{pre}/comb2/kernel"], p[f"{pre}/comb2/bias"])
        if f"{pre}/proj/kernel" in p:
            proj_stride = 2 if b.downsample else 1
            xi, cache["proj"] = L.conv2d_forward(x, p[f"{pre}/proj/kernel"], p[f"{pre}/proj/bias"],
                                                 stride=proj_stride)
        else:
            xi = x
        if xi.shape != z.shape:
            raise ValueError(f"residual addition shape mismatch {xi.shape} vs {z.shape}")
        return xi + z, cache

    # ---- backward ------------------------------------------------------

    def backward(self, fp: ForwardPass, gfeatures, aux_feature_grads=None):
        """Backprop from gradients arriving at the pooled feature vectors.

        gfeatures: gradient at the main head's features.
        aux_feature_grads: block index -> gradient at that aux head's
        features (already scaled by the aux loss weight).
        Returns a dict of gradients for every conv/BN/gate parameter;
        head weight gradients are the caller's responsibility (the loss
        adapter owns them).
        """
        p = self.params
        spec = self.spec
        aux_feature_grads = aux_feature_grads or {}
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        # main head back to the last block output
        head_cache = fp.final_cache["head"]
        g, _, _ = L.classifier_head_backward(head_cache, np.zeros((gfeatures.shape[0], spec.num_classes), dtype=gfeatures.dtype), gfeats_extra=gfeatures)
        if spec.structure != "plain":
            g = L.relu_backward(fp.final_cache["relu"], g)
            g, gg, gb = L.batch_norm_backward(fp.final_cache["bn"], g)
            grads["final/bn/gamma"] += gg
            grads["final/bn/beta"] += gb

        grad_out = [None] * len(spec.blocks)
        grad_out[-1] = g
        grad_stem = None
        for b in reversed(spec.blocks):
            g = grad_out[b.index]
            if g is None:
                g = np.zeros_like(fp.block_outputs[b.index])
            if b.index in aux_feature_grads:
                hc = fp.caches[b.index]["aux_head"]
                ga, _, _ = L.classifier_head_backward(
                    hc, np.zeros((g.shape[0], spec.num_classes), dtype=g.dtype),
                    gfeats_extra=aux_feature_grads[b.index])
                g = g + ga
            gx = self._block_backward(b, fp.caches[b.index], g, grads)
            gate_cache = fp.caches[b.index]["gate"]
            if gate_cache is None:
                if b.index == 0:
                    grad_stem = gx if grad_stem is None else grad_stem + gx
                else:
                    prev = grad_out[b.index - 1]
                    grad_out[b.index - 1] = gx if prev is None else prev + gx
            else:
                sources, w = gate_cache
                dots = np.array([float((gx * fp.block_outputs[s]).sum()) for s in sources])
                wd = float((w * dots).sum())
                for e_i, s in enumerate(sources):
                    grads[f"gate/{b.index}/{s}"] += w[e_i] * (dots[e_i] - wd)
                    contrib = w[e_i] * gx
                    prev = grad_out[s]
                    grad_out[s] = contrib if prev is None else prev + contrib
        if grad_stem is not None:
            _, gk, gb = L.conv2d_backward(fp.stem_cache, grad_stem)
            grads["stem/kernel"] += gk
            grads["stem/bias"] += gb
        return grads

    def _block_backward(self, b: BlockSpec, cache, gout, grads):
        pre = f"block{b.index}"
        if b.structure == "plain":
            g = L.relu_backward(cache["relu"], gout)
            g, gg, gbeta = L.batch_norm_backward(cache["bn"], g)
            grads[f"{pre}/bn/gamma"] += gg
            grads[f"{pre}/bn/beta"] += gbeta
            g, gk, gb = L.conv2d_backward(cache["conv"], g)
            grads[f"{pre}/conv/kernel"] += gk
            grads[f"{pre}/conv/bias"] += gb
            return g
        gz = gout
        if b.structure == "residual":
            g, gk, gb = L.conv2d_backward(cache["conv2"], gz)
            grads[f"{pre}/conv2/kernel"] += gk
            grads[f"{pre}/conv2/bias"] += gb
        else:
            g, gk1, gb1, gk2, gb2 = L.combined_conv_backward(cache["comb"], gz)
            grads[f"{pre}/comb1/kernel"] += gk1
            grads[f"{pre}/comb1/bias"] += gb1
            grads[f"{pre}/comb2/kernel"] += gk2
            grads[f"{pre}/comb2/bias"] += gb2
        if "pool" in cache:
            g = L.stochastic_pool_backward(cache["pool"], g)
        g = L.relu_backward(cache["relu2"], g)
        g, gg, gbeta = L.batch_norm_backward(cache["bn2"], g)
        grads[f"{pre}/bn2/gamma"] += gg
        grads[f"{pre}/bn2/beta"] += gbeta
        g, gk, gb = L.conv2d_backward(cache["conv1"], g)
        grads[f"{pre}/conv1/kernel"] += gk
        grads[f"{pre}/conv1/bias"] += gb
        g = L.relu_backward(cache["relu1"], g)
        g, gg, gbeta = L.batch_norm_backward(cache["bn1"], g)
        grads[f"{pre}/bn1/gamma"] += gg
        grads[f"{pre}/bn1/beta"] += gbeta
        gx = g
        if "proj" in cache:
            gxi, gk, gb = L.conv2d_backward(cache["proj"], gout)
            grads[f"{pre}/proj/kernel"] += gk
            grads[f"{pre}/proj/bias"] += gb
            gx = gx + gxi
        else:
            gx = gx + gout
        return gx


def transplant_residual_params(res_net: Network, alpha_net: Network):
    """Copy residual-network parameters into a structurally reduced alpha
    network (p_extra=0, stride downsampling, combined kernels (3,3)).

    The combined convolution averages its two branches, so the residual
    second conv maps to first branch kernel = 2x, second branch zeroed:
    0.5 * conv(x, 2K, 2b) == conv(x, K, b) exactly.
    """
    if alpha_net.spec.combined_kernels != (3, 3):
        raise ValueError("reduction requires combined kernel pair (3, 3)")
    if alpha_net.spec.downsample_by != "stride":
        raise ValueError("reduction requires stride downsampling")
    dtype = next(iter(res_net.params.values())).dtype
    for name, value in res_net.params.items():
        if "/conv2/" in name:
            alpha_name = name.replace("/conv2/", "/comb1/")
            alpha_net.params[alpha_name] = 2.0 * value
            zero_name = name.replace("/conv2/", "/comb2/")
            alpha_net.params[zero_name] = np.zeros_like(alpha_net.params[zero_name])
        elif name in alpha_net.params:
            alpha_net.params[name] = value.copy()
    alpha_net.astype(dtype)
    for key, buf in res_net.buffers.items():
        if key in alpha_net.buffers:
            alpha_net.buffers[key] = {
                "running_mean": buf["running_mean"].copy(),
                "running_var": buf["running_var"].copy(),
                "initialized": buf["initialized"],
            }

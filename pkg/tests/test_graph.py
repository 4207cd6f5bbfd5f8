import json
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from alphanet import graph as G
from alphanet import losses as LS
from alphanet.rng import PrngStream

DATA = Path(__file__).parent / "data"


class TestSampleConnectivity:
    def test_matches_golden_file(self):
        g = json.loads((DATA / "golden_edges.json").read_text())
        edges = G.sample_connectivity(g["num_blocks"], g["p_extra"],
                                      PrngStream(g["seed"], "net"))
        assert [(e.source, e.target) for e in edges] == [tuple(p) for p in g["edges"]]
        npt.assert_allclose([e.init_logit for e in edges], g["init_logits"], atol=1e-9)

    def test_p_zero_gives_chain_only(self):
        edges = G.sample_connectivity(6, 0.0, PrngStream(0, "net"))
        assert [(e.source, e.target) for e in edges] == [(i - 1, i) for i in range(1, 6)]

    def test_p_one_gives_full_dag(self):
        n = 5
        edges = G.sample_connectivity(n, 1.0, PrngStream(0, "net"))
        expected = [(j, i) for i in range(1, n) for j in range(i)]
        assert sorted((e.source, e.target) for e in edges) == sorted(expected)

    def test_edges_respect_stage_boundaries(self):
        stages = [0, 0, 0, 1, 1, 1]
        edges = G.sample_connectivity(6, 1.0, PrngStream(3, "net"), stages=stages)
        for e in edges:
            chain = e.source == e.target - 1
            assert chain or stages[e.source] == stages[e.target]

    def test_all_edges_point_forward(self):
        edges = G.sample_connectivity(10, 0.7, PrngStream(5, "net"))
        assert all(e.source < e.target for e in edges)

    def test_deterministic_in_seed(self):
        a = G.sample_connectivity(8, 0.4, PrngStream(9, "net"))
        b = G.sample_connectivity(8, 0.4, PrngStream(9, "net"))
        assert [(e.source, e.target, e.init_logit) for e in a] == \
               [(e.source, e.target, e.init_logit) for e in b]

    def test_p_out_of_range(self):
        with pytest.raises(ValueError):
            G.sample_connectivity(4, 1.5, PrngStream(0, "net"))


class TestBuildNetwork:
    def test_layer_counts_per_version(self):
        for version, expect in [("v1", 8), ("v2", 16), ("v3", 32), ("v4", 64)]:
            for structure in ("plain", "residual", "alpha"):
                spec, _, _ = G.build_network(version, structure, 10, seed=0)
                assert spec.weighted_layers == expect, (version, structure)

    def test_block_counts(self):
        spec, _, _ = G.build_network("v3", "alpha", 10, seed=0)
        assert len(spec.blocks) == 16
        spec, _, _ = G.build_network("v1", "plain", 10, seed=0)
        assert len(spec.blocks) == 8

    def test_channel_doubling_across_stages(self):
        spec, _, _ = G.build_network("v2", "alpha", 10, seed=1, base_ch=8)
        chans = {}
        for b in spec.blocks:
            chans.setdefault(b.stage, b.out_ch)
        assert chans == {0: 8, 1: 16, 2: 32, 3: 64}
        downs = [b.index for b in spec.blocks if b.downsample]
        per = len(spec.blocks) // 4
        assert downs == [per, 2 * per, 3 * per]

    def test_golden_param_counts(self):
        spec, params, _ = G.build_network("v1", "alpha", 10, seed=0)
        net = G.Network(spec, params, {})
        assert net.parameter_count() == 710541
        spec, params, _ = G.build_network("v3", "alpha", 10, seed=0)
        # gate logits add one scalar per sampled edge, so this is seed-specific
        assert G.Network(spec, params, {}).parameter_count() == 2899953
        spec, params, _ = G.build_network("v1", "plain", 10, seed=0)
        assert G.Network(spec, params, {}).parameter_count() == 75322

    def test_build_deterministic(self):
        _, p1, _ = G.build_network("v1", "alpha", 5, seed=42)
        _, p2, _ = G.build_network("v1", "alpha", 5, seed=42)
        assert sorted(p1) == sorted(p2)
        for k in p1:
            npt.assert_array_equal(p1[k], p2[k])

    def test_seed_changes_init(self):
        _, p1, _ = G.build_network("v1", "alpha", 5, seed=1)
        _, p2, _ = G.build_network("v1", "alpha", 5, seed=2)
        assert np.abs(p1["stem/kernel"] - p2["stem/kernel"]).max() > 1e-6

    def test_bad_desk_scale(self):
        with pytest.raises(ValueError, match="desk_scale"):
            G.build_network("v1", "alpha", 10, seed=0, desk_scale=3)
        with pytest.raises(ValueError, match="< 8"):
            G.build_network("v1", "alpha", 10, seed=0, desk_scale=32)

    def test_plain_has_no_edges_or_gates(self):
        spec, params, _ = G.build_network("v2", "plain", 10, seed=0)
        assert spec.edges == []
        assert not any(k.startswith("gate/") for k in params)

    def test_gate_params_match_edges(self):
        spec, params, _ = G.build_network("v1", "alpha", 10, seed=3, p_extra=0.5)
        gates = {k for k in params if k.startswith("gate/")}
        assert gates == {f"gate/{e.target}/{e.source}" for e in spec.edges}

    def test_manifest_round_trip(self):
        spec, _, _ = G.build_network("v1", "alpha", 10, seed=7, p_extra=0.5)
        back = G.NetworkSpec.from_manifest(spec.to_manifest())
        assert [(e.source, e.target) for e in back.edges] == \
               [(e.source, e.target) for e in spec.edges]
        assert back.version == spec.version and back.seed == spec.seed

    def test_manifest_detects_tamper(self):
        spec, _, _ = G.build_network("v1", "alpha", 10, seed=7, p_extra=0.5)
        text = spec.to_manifest() + "edge=0,7\n"
        with pytest.raises(ValueError, match="edge"):
            G.NetworkSpec.from_manifest(text)

    def test_min_input_matches_downsamples(self):
        spec, _, _ = G.build_network("v1", "alpha", 10, seed=0)
        assert spec.min_input == 8


class TestTotalLoss:
    def test_example(self):
        assert G.total_loss(1.0, [0.5, 1.5], 0.1) == pytest.approx(1.1)

    def test_empty_aux(self):
        assert G.total_loss(2.0, [], 0.3) == 2.0

    def test_zero_weight(self):
        assert G.total_loss(2.0, [5.0], 0.0) == 2.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            G.total_loss(1.0, [1.0], -0.1)


class TestForward:
    def _micro(self, structure, seed=0, **kw):
        spec, params, buffers = G.build_network(
            "v1", structure, 3, seed=seed, desk_scale=32, base_ch=2,
            num_stages=2, **kw)
        return G.Network(spec, params, buffers).astype(np.float64)

    def test_forward_shapes(self):
        net = self._micro("alpha", p_extra=1.0)
        x = PrngStream(0, "x").normal((2, 3, 8, 8))
        fp = net.forward(x, train=True, stream=PrngStream(0, "run"))
        assert fp.features.shape == (2, 4)  # final_ch = 2 * base_ch
        assert set(fp.aux_features) == {b.index for b in net.spec.blocks if b.has_aux_head}

    def test_gate_weights_sum_to_one(self):
        net = self._micro("alpha", p_extra=1.0)
        x = PrngStream(1, "x").normal((2, 3, 8, 8))
        fp = net.forward(x, train=True, stream=PrngStream(1, "run"))
        assert fp.gate_weights
        for _, (sources, w) in fp.gate_weights.items():
            assert len(sources) == len(w)
            npt.assert_allclose(w.sum(), 1.0, rtol=1e-12)

    def test_eval_forward_deterministic(self):
        net = self._micro("alpha", p_extra=0.5)
        x = PrngStream(2, "x").normal((2, 3, 8, 8))
        net.forward(x, train=True, stream=PrngStream(2, "run"))
        a = net.forward(x, train=False)
        b = net.forward(x, train=False)
        npt.assert_array_equal(a.features, b.features)

    def test_residual_and_plain_run(self):
        for structure in ("plain", "residual"):
            net = self._micro(structure)
            x = PrngStream(3, "x").normal((2, 3, 8, 8))
            fp = net.forward(x, train=True)
            assert np.all(np.isfinite(fp.features))
            assert fp.aux_features == {}


class TestReduction:
    def test_alpha_reduces_to_residual_exactly(self):
        kwargs = dict(num_classes=3, seed=5, desk_scale=32, base_ch=2, num_stages=2)
        rspec, rparams, rbuf = G.build_network("v1", "residual", **kwargs)
        aspec, aparams, abuf = G.build_network(
            "v1", "alpha", p_extra=0.0, combined_kernels=(3, 3),
            downsample_by="stride", **kwargs)
        res = G.Network(rspec, rparams, rbuf).astype(np.float64)
        alpha = G.Network(aspec, aparams, abuf).astype(np.float64)
        G.transplant_residual_params(res, alpha)
        x = PrngStream(5, "x").normal((2, 3, 8, 8))
        fr = res.forward(x, train=True)
        fa = alpha.forward(x, train=True)
        for br, ba in zip(fr.block_outputs, fa.block_outputs):
            assert np.abs(br - ba).max() < 1e-6
        assert np.abs(fr.features - fa.features).max() < 1e-6

    def test_reduction_requires_matching_config(self):
        kwargs = dict(num_classes=3, seed=5, desk_scale=32, base_ch=2, num_stages=2)
        rspec, rparams, rbuf = G.build_network("v1", "residual", **kwargs)
        aspec, aparams, abuf = G.build_network("v1", "alpha", p_extra=0.0, **kwargs)
        res = G.Network(rspec, rparams, rbuf)
        alpha = G.Network(aspec, aparams, abuf)
        with pytest.raises(ValueError):
            G.transplant_residual_params(res, alpha)


class TestGateTraining:
    def test_gate_softmax_sums_stay_one_under_sgd(self):
        # 100 plain gradient steps on the gate logits only
        net = TestForward()._micro("alpha", p_extra=1.0)
        x = PrngStream(8, "x").normal((4, 3, 8, 8))
        y = np.array([0, 1, 2, 0])
        cfg = LS.LossConfig(kind="am_softmax_linear", s=4.0, m=0.1)
        gate_names = [k for k in net.params if k.startswith("gate/")]
        assert gate_names
        for step in range(100):
            fp = net.forward(x, train=True, stream=PrngStream(8, f"step{step}"))
            _, _, lg = LS.apply_loss(cfg, fp.features, net.params["head/W"],
                                     net.params["head/b"], y)
            grads = net.backward(fp, lg["features"])
            for k in gate_names:
                net.params[k] = net.params[k] - 0.5 * grads[k]
        fp = net.forward(x, train=False)
        for _, (_, w) in fp.gate_weights.items():
            npt.assert_allclose(w.sum(), 1.0, rtol=1e-10)
            assert np.all(w > 0)

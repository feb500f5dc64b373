from dataclasses import replace

import numpy as np
import pytest

from laneformer import model as lm
from laneformer import numerics as nx
from laneformer.detections import DetectionBox, select_and_pad
from laneformer.errors import LaneformerError, ShapeError
from laneformer.lanes import N_ROWS
from laneformer.numerics import GradTape
from laneformer.selfcheck import preset_config

TOY = dict(d_model=8, n_queries=3, n_boxes=2, heads=1, ffn_dim=8, backbone_widths=(2, 3, 4), image_size=(16, 32))


def toy_cfg(**kw):
    return lm.ModelConfig(**{**TOY, **kw})


def toy_inputs(cfg, b=2, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.uniform(size=(b, *cfg.image_size, cfg.image_channels))
    boxes = [select_and_pad([DetectionBox(0.1, 0.2, 0.5, 0.7, 0.9, "car")], cfg.n_boxes, 0.6, k) for k in range(b)]
    return images, boxes


def np_softmax(a):
    e = np.exp(a - a.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def np_ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_attn(q, k, v):
    return np_softmax(q @ k.T / np.sqrt(q.shape[-1])) @ v


def np_mha(p, pre, xq, xk, xv):
    q = xq @ p[f"{pre}.wq"] + p[f"{pre}.bq"]
    k = xk @ p[f"{pre}.wk"] + p[f"{pre}.bk"]
    v = xv @ p[f"{pre}.wv"] + p[f"{pre}.bv"]
    return np_attn(q, k, v) @ p[f"{pre}.wo"] + p[f"{pre}.bo"]


def sincos(pos, d):
    out = np.zeros(d)
    for i in range(0, d, 2):
        ang = pos / 10000 ** (i / d)
        out[i], out[i + 1] = np.sin(ang), np.cos(ang)
    return out


def grid_pos(h, w, d):
    return np.array([np.concatenate([sincos(r, d // 2), sincos(c, d // 2)]) for r in range(h) for c in range(w)])


def randomize(params, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    for t in params.values():
        t.data[...] = rng.normal(scale=scale, size=t.data.shape)
    return params


def arrays(params):
    return {k: t.data for k, t in params.items()}


def encoder_oracle(p, cfg, h_f, z_b, z_r):
    """One frame, one layer, composed from plain numpy pieces."""
    fh, fw, fd = h_f.shape
    d = cfg.d_model
    x = h_f.reshape(fh * fw, fd) @ p["input_proj.w"] + p["input_proj.b"]
    qk = x + grid_pos(fh, fw, d)
    fused = np_mha(p, "enc0.sa", qk, qk, x) + np_attn(x, z_b, z_r)
    rows = h_f.reshape(fh, fw * fd) @ p["enc0.row.w"] + p["enc0.row.b"]
    cols = h_f.transpose(1, 0, 2).reshape(fw, fh * fd) @ p["enc0.col.w"] + p["enc0.col.b"]
    rq = rows + np.array([sincos(i, d) for i in range(fh)])
    cq = cols + np.array([sincos(i, d) for i in range(fw)])
    ro, co = np_attn(rq, rq, rows), np_attn(cq, cq, cols)
    fused = fused + np.repeat(ro, fw, axis=0) + np.tile(co, (fh, 1))
    x = np_ln(x + fused, p["enc0.ln1.g"], p["enc0.ln1.b"])
    ffn = np.maximum(x @ p["enc0.ffn1.w"] + p["enc0.ffn1.b"], 0) @ p["enc0.ffn2.w"] + p["enc0.ffn2.b"]
    return np_ln(x + ffn, p["enc0.ln2.g"], p["enc0.ln2.b"])


def decoder_oracle(p, cfg, memory, z_b, z_r):
    fh, fw = cfg.feature_hw
    tgt = p["query_embed"].copy()
    tgt = np_ln(tgt + np_mha(p, "dec0.sa", tgt, tgt, tgt), p["dec0.ln1.g"], p["dec0.ln1.b"])
    mixed = np_mha(p, "dec0.ca", tgt, memory + grid_pos(fh, fw, cfg.d_model), memory) + np_attn(tgt, z_b, z_r)
    tgt = np_ln(tgt + mixed, p["dec0.ln2.g"], p["dec0.ln2.b"])
    ffn = np.maximum(tgt @ p["dec0.ffn1.w"] + p["dec0.ffn1.b"], 0) @ p["dec0.ffn2.w"] + p["dec0.ffn2.b"]
    return np_ln(tgt + ffn, p["dec0.ln3.g"], p["dec0.ln3.b"])


class TestConfig:
    def test_defaults(self):
        c = lm.ModelConfig()
        assert (c.d_model, c.n_queries, c.n_boxes, c.encoder_layers, c.decoder_layers) == (64, 25, 10, 1, 1)
        assert c.loss_weights == (2.0, 10.0, 10.0, 10.0) and c.score_threshold_infer == 0.8
        assert c.feature_hw == (16, 32) and c.feature_stage == "C4"

    @pytest.mark.parametrize("kw", [dict(d_model=0), dict(n_queries=-1), dict(loss_weights=(0, 1, 1, 1)),
                                    dict(feature_stage="C6"), dict(d_model=10), dict(heads=3),
                                    dict(backbone_widths=(4, 4))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            lm.ModelConfig(**kw)

    def test_image_size_divisibility(self):
        with pytest.raises(ShapeError, match="4"):
            lm.ModelConfig(image_size=(62, 128))
        with pytest.raises(ShapeError, match="8"):
            lm.ModelConfig(image_size=(60, 128), feature_stage="C5")

    def test_dict_round_trip(self):
        c = toy_cfg(row_column=False)
        assert lm.ModelConfig.from_dict(c.to_dict()) == c
        with pytest.raises(ValueError):
            lm.ModelConfig.from_dict({"bogus": 1})


class TestBackbone:
    def test_zero_weights_zero_features(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        for k, t in p.items():
            if k.startswith("backbone."):
                t.data[...] = 0.0
        feats, h_r, h_c = lm.backbone_forward(p, cfg, np.zeros((1, 16, 32, 1)))
        assert all(np.all(s.data == 0) for s in feats.stages.values())
        assert np.all(h_r.data == 0) and np.all(h_c.data == 0)

    def test_row_column_flattening(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        feats, h_r, h_c = lm.backbone_forward(p, cfg, toy_inputs(cfg)[0])
        h_f = feats.h_f.data
        np.testing.assert_array_equal(h_r.data.reshape(h_f.shape), h_f)
        np.testing.assert_array_equal(h_c.data[:, 3], h_f[:, :, 3, :].reshape(2, -1))
        # stages past the working one are neither built nor computed
        assert [s.shape[1:3] for s in feats.stages.values()] == [(8, 16), (4, 8)]
        assert not any(k.startswith("backbone.C5") for k in lm.init_params(cfg))
        assert any(k.startswith("backbone.C5") for k in lm.init_params(replace(cfg, feature_stage="C5")))

    def test_matches_direct_convolution(self):
        cfg = lm.ModelConfig(d_model=8, n_queries=2, n_boxes=1, ffn_dim=8, backbone_widths=(2, 2, 2),
                             image_size=(8, 8), feature_stage="C3", coord_channels=False)
        p = randomize(lm.init_params(cfg), 3)
        img = np.random.default_rng(4).uniform(size=(8, 8, 1))

        def conv(x, w, b, stride):
            h, wd, cin = x.shape
            xp = np.zeros((h + 2, wd + 2, cin))
            xp[1:-1, 1:-1] = x
            oh, ow = (h - 1) // stride + 1, (wd - 1) // stride + 1
            out = np.zeros((oh, ow, w.shape[3]))
            for i in range(oh):
                for j in range(ow):
                    for o in range(w.shape[3]):
                        acc = b[o]
                        for a in range(3):
                            for c in range(3):
                                for ci in range(cin):
                                    acc += xp[i * stride + a, j * stride + c, ci] * w[a, c, ci, o]
                        out[i, j, o] = acc
            return np.maximum(out, 0.0)

        q = arrays(p)
        ref = conv(conv(img, q["backbone.C3.conv1.w"], q["backbone.C3.conv1.b"], 2),
                   q["backbone.C3.conv2.w"], q["backbone.C3.conv2.b"], 1)
        feats, _, _ = lm.backbone_forward(p, cfg, img[None])
        np.testing.assert_allclose(feats.h_f.data[0], ref, atol=1e-12)

    def test_errors(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        with pytest.raises(ShapeError, match="stride 4"):
            lm.backbone_forward(p, cfg, np.zeros((1, 14, 32, 1)))
        with pytest.raises(ShapeError):
            lm.backbone_forward(p, cfg, np.zeros((1, 16, 32, 3)))


class TestEncoderDecoder:
    def test_encoder_matches_composed_oracle(self):
        cfg = lm.ModelConfig(d_model=8, n_queries=2, n_boxes=3, ffn_dim=6, backbone_widths=(2, 3, 4),
                             image_size=(8, 8))  # C4 grid is 2x2
        p = randomize(lm.init_params(cfg), 5)
        rng = np.random.default_rng(6)
        h_f = rng.normal(size=(1, 2, 2, 3))
        z_b, z_r = rng.normal(size=(1, 3, 8)), rng.normal(size=(1, 3, 8))
        h_r, h_c = lm.rows_and_columns(nx.Tensor(h_f))
        got = lm.encoder_forward(p, cfg, nx.Tensor(h_f), h_r, h_c, nx.Tensor(z_b), nx.Tensor(z_r))
        np.testing.assert_allclose(got.data[0], encoder_oracle(arrays(p), cfg, h_f[0], z_b[0], z_r[0]), atol=1e-10)

    def test_encoder_uniform_attention_closed_form(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        for k, t in p.items():
            if k.startswith("enc0."):
                t.data[...] = 0.0
        for k in ("enc0.sa.wv", "enc0.sa.wo"):
            p[k].data[...] = np.eye(8)
        p["enc0.ln1.g"].data[...] = 1.0
        p["enc0.ln2.g"].data[...] = 1.0
        rng = np.random.default_rng(7)
        p["enc0.row.b"].data[...] = rb = rng.normal(size=8)
        p["enc0.col.b"].data[...] = cb = rng.normal(size=8)
        h_f = rng.normal(size=(1, 4, 8, 3))
        z_r = rng.normal(size=(1, 2, 8))
        h_r, h_c = lm.rows_and_columns(nx.Tensor(h_f))
        got = lm.encoder_forward(p, cfg, nx.Tensor(h_f), h_r, h_c, nx.Tensor(np.zeros((1, 2, 8))), nx.Tensor(z_r))
        x = h_f[0].reshape(32, 3) @ p["input_proj.w"].data + p["input_proj.b"].data
        fused = x.mean(0) + z_r[0].mean(0) + rb + cb
        m = np_ln(x + fused, 1.0, 0.0)
        np.testing.assert_allclose(got.data[0], np_ln(m, 1.0, 0.0), atol=1e-10)

    def test_zero_roi_values_equal_no_detection_path(self):
        cfg = toy_cfg()
        p = randomize(lm.init_params(cfg), 8)
        rng = np.random.default_rng(9)
        h_f = nx.Tensor(rng.normal(size=(2, 4, 8, 3)))
        h_r, h_c = lm.rows_and_columns(h_f)
        with_zero = lm.encoder_forward(p, cfg, h_f, h_r, h_c, nx.Tensor(rng.normal(size=(2, 2, 8))),
                                       nx.Tensor(np.zeros((2, 2, 8))))
        without = lm.encoder_forward(p, cfg, h_f, h_r, h_c)
        np.testing.assert_allclose(with_zero.data, without.data, atol=1e-14)

    def test_decoder_matches_composed_oracle(self):
        cfg = lm.ModelConfig(d_model=8, n_queries=2, n_boxes=3, ffn_dim=6, backbone_widths=(2, 3, 4),
                             image_size=(8, 16))
        p = randomize(lm.init_params(cfg), 10)
        rng = np.random.default_rng(11)
        mem = rng.normal(size=(1, 8, 8))
        z_b, z_r = rng.normal(size=(1, 3, 8)), rng.normal(size=(1, 3, 8))
        got = lm.decoder_forward(p, cfg, nx.Tensor(mem), nx.Tensor(z_b), nx.Tensor(z_r))
        np.testing.assert_allclose(got.data[0], decoder_oracle(arrays(p), cfg, mem[0], z_b[0], z_r[0]), atol=1e-10)

    def test_constant_memory_cross_attention(self):
        rng = np.random.default_rng(12)
        d = 8
        p = {f"c.{k}": np.eye(d) if k.startswith("w") else np.zeros(d)
             for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}
        row = rng.normal(size=d)
        from laneformer.attention import multi_head_attention
        out = multi_head_attention(rng.normal(size=(1, 1, d)), rng.normal(size=(1, 6, d)),
                                   np.tile(row, (1, 6, 1)), p, "c").values.data
        np.testing.assert_allclose(out[0, 0], row, atol=1e-14)

    def test_decoder_shape_error(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        with pytest.raises(ShapeError):
            lm.decoder_forward(p, cfg, nx.Tensor(np.zeros((1, 5, 8))))


class TestHeads:
    def test_zero_weights(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        for k, t in p.items():
            if k.startswith("head."):
                t.data[...] = 0.0
        probs, reg = lm.predict_heads(p, nx.Tensor(np.random.default_rng(0).normal(size=(2, 3, 8))))
        assert probs.shape == (2, 3, 2) and reg.shape == (2, 3, N_ROWS + 2)
        assert np.all(probs.data == 0.5) and np.all(reg.data == 0.5)

    def test_mlp_oracle(self):
        cfg = toy_cfg()
        p = arrays(randomize(lm.init_params(cfg), 13))
        x = np.random.default_rng(14).normal(size=(3, 8))
        probs, reg = lm.predict_heads({k: nx.Tensor(v) for k, v in p.items()}, nx.Tensor(x))
        h = np.maximum(x @ p["head.reg1.w"] + p["head.reg1.b"], 0)
        h = np.maximum(h @ p["head.reg2.w"] + p["head.reg2.b"], 0)
        ref = 1 / (1 + np.exp(-(h @ p["head.reg3.w"] + p["head.reg3.b"])))
        np.testing.assert_allclose(reg.data, ref, atol=1e-12)
        np.testing.assert_allclose(probs.data, np_softmax(x @ p["head.cls.w"] + p["head.cls.b"]), atol=1e-12)
        np.testing.assert_allclose(probs.data.sum(-1), 1.0, atol=1e-12)


class TestForward:
    def test_deterministic(self):
        cfg = toy_cfg()
        images, boxes = toy_inputs(cfg)
        a = lm.forward(lm.init_params(cfg, 3), cfg, images, boxes)
        b = lm.forward(lm.init_params(cfg, 3), cfg, images, boxes)
        assert a.probs.data.tobytes() == b.probs.data.tobytes() and a.reg.data.tobytes() == b.reg.data.tobytes()

    def test_box_permutation_invariance(self):
        cfg = toy_cfg(n_boxes=4)
        p = randomize(lm.init_params(cfg), 15)
        rng = np.random.default_rng(16)
        images = rng.uniform(size=(1, 16, 32, 1))
        boxes = []
        for _ in range(4):
            (x1, x2), (y1, y2) = np.sort(rng.uniform(0, 1, 2)), np.sort(rng.uniform(0, 1, 2))
            boxes.append(DetectionBox(x1, y1, x2, y2, float(rng.uniform(0.6, 1)), "truck"))
        perm = [2, 0, 3, 1]
        feats, h_r, h_c = lm.backbone_forward(p, cfg, images)

        def memory(bxs):
            z_b, z_r, _ = lm.detection_embeddings(p, cfg, feats.h_f, [bxs])
            return lm.encoder_forward(p, cfg, feats.h_f, h_r, h_c, z_b, z_r).data

        np.testing.assert_allclose(memory(boxes), memory([boxes[i] for i in perm]), atol=1e-12)
        a = lm.forward(p, cfg, images, [boxes])
        b = lm.forward(p, cfg, images, [[boxes[i] for i in perm]])
        np.testing.assert_allclose(a.reg.data, b.reg.data, atol=1e-12)

    def test_attention_retained(self):
        cfg = toy_cfg()
        images, boxes = toy_inputs(cfg)
        out = lm.forward(lm.init_params(cfg), cfg, images, boxes, keep_attention=True)
        assert set(out.attention) == {"enc0.self", "enc0.pixel_to_bbox", "enc0.row", "enc0.column",
                                      "dec0.self", "dec0.cross", "dec0.query_to_bbox"}
        assert out.attention["enc0.row"].shape == (2, 4, 4)
        assert out.attention["dec0.query_to_bbox"].shape == (2, 3, 2)

    def test_box_slot_errors(self):
        cfg = toy_cfg()
        images, boxes = toy_inputs(cfg)
        p = lm.init_params(cfg)
        with pytest.raises(ShapeError):
            lm.forward(p, cfg, images, [boxes[0][:1], boxes[1]])
        with pytest.raises(LaneformerError):
            lm.forward(p, cfg, images, None)

    def test_ablation_switches_shrink_model(self):
        base = toy_cfg()
        images, boxes = toy_inputs(base)

        def cost(cfg):
            p = lm.init_params(cfg)
            out = lm.forward(p, cfg, images, boxes if cfg.detection_attention else None)
            nodes = GradTape.from_output(nx.add(nx.tsum(out.probs), nx.tsum(out.reg))).nodes
            return lm.count_params(p), len(nodes), sum(n.data.size for n in nodes)

        full = cost(base)
        for off in (dict(detection_attention=False), dict(row_column=False)):
            small = cost(toy_cfg(**off))
            assert all(s < f for s, f in zip(small, full)), (off, small, full)
        assert lm.count_params(lm.init_params(toy_cfg(use_category=False))) < full[0]

    def test_param_groups(self):
        p = lm.init_params(toy_cfg())
        g = lm.param_groups(p)
        assert set(g["backbone"]) | set(g["transformer"]) == set(p)
        assert all(k.startswith("backbone.") for k in g["backbone"]) and "query_embed" in g["transformer"]


class TestInfer:
    def test_below_threshold_is_empty(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        p["head.cls.w"].data[...] = 0.0
        p["head.cls.b"].data[...] = [3.0, -3.0]
        assert lm.infer(p, cfg, toy_inputs(cfg)[0][0]) == []

    def test_above_threshold_returns_lanes(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        p["head.cls.w"].data[...] = 0.0
        p["head.cls.b"].data[...] = [-3.0, 3.0]
        p["head.reg3.w"].data[...] = 0.0
        p["head.reg3.b"].data[...] = 0.0
        p["head.reg3.b"].data[N_ROWS:] = [-1.0, 1.0]  # start < end
        lanes = lm.infer(p, cfg, toy_inputs(cfg)[0][0])
        assert len(lanes) == cfg.n_queries
        assert all(ln.n_valid > 0 and np.allclose(ln.xs[ln.valid], 0.5) for ln in lanes)

    def test_inverted_extent_dropped(self):
        probs = np.array([[0.1, 0.9], [0.1, 0.9]])
        reg = np.full((2, N_ROWS + 2), 0.5)
        reg[0, N_ROWS:] = [0.7, 0.2]
        assert len(lm.predictions_to_lanes(probs, reg, 0.8)) == 1

    def test_deterministic_untrained(self):
        cfg = toy_cfg()
        img = toy_inputs(cfg)[0][0]
        a = lm.infer(lm.init_params(cfg, 1), cfg, img, threshold=0.0)
        b = lm.infer(lm.init_params(cfg, 1), cfg, img, threshold=0.0)
        assert len(a) == len(b) and all(np.array_equal(x.xs, y.xs) for x, y in zip(a, b))

    def test_missing_parameters(self):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        del p["head.cls.w"]
        with pytest.raises(LaneformerError, match="missing"):
            lm.infer(p, cfg, toy_inputs(cfg)[0][0])
        with pytest.raises(LaneformerError):
            lm.infer({}, cfg, toy_inputs(cfg)[0][0])


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        cfg = preset_config("toy", use_category=False)
        p = randomize(lm.init_params(cfg), 17)
        images, boxes = toy_inputs(cfg)
        before = lm.forward(p, cfg, images, boxes)
        lm.save_checkpoint(tmp_path / "m.ckpt", p, cfg, extra={"note": "x"})
        q, cfg2, extra = lm.load_checkpoint(tmp_path / "m.ckpt")
        assert cfg2 == cfg and extra == {"note": "x"} and set(q) == set(p)
        after = lm.forward(q, cfg2, images, boxes)
        assert before.reg.data.tobytes() == after.reg.data.tobytes()
        assert before.probs.data.tobytes() == after.probs.data.tobytes()

    def test_file_is_deterministic(self, tmp_path):
        cfg = toy_cfg()
        p = lm.init_params(cfg, 2)
        lm.save_checkpoint(tmp_path / "a", p, cfg)
        lm.save_checkpoint(tmp_path / "b", p, cfg)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_files(self, tmp_path):
        (tmp_path / "junk").write_bytes(b"not a checkpoint")
        with pytest.raises(LaneformerError):
            lm.load_checkpoint(tmp_path / "junk")
        cfg = toy_cfg()
        lm.save_checkpoint(tmp_path / "v", lm.init_params(cfg), cfg)
        raw = (tmp_path / "v").read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
        (tmp_path / "v9").write_bytes(raw)
        with pytest.raises(LaneformerError, match="version"):
            lm.load_checkpoint(tmp_path / "v9")
        good = (tmp_path / "v").read_bytes()
        (tmp_path / "short").write_bytes(good[:-8])
        with pytest.raises(LaneformerError, match="truncated"):
            lm.load_checkpoint(tmp_path / "short")

    def test_params_must_fit_config(self, tmp_path):
        cfg = toy_cfg()
        p = lm.init_params(cfg)
        del p[sorted(p)[0]]
        lm.save_checkpoint(tmp_path / "m", p, cfg)
        with pytest.raises(LaneformerError, match="do not match"):
            lm.load_checkpoint(tmp_path / "m")


class TestDropout:
    def test_off_without_rng(self):
        cfg = toy_cfg(dropout=0.5)
        p = lm.init_params(cfg, 1)
        images, boxes = toy_inputs(cfg)
        a = lm.forward(p, cfg, images, boxes)
        b = lm.forward(p, cfg, images, boxes)
        c = lm.forward(p, replace(cfg, dropout=0.0), images, boxes, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(a.reg.data, b.reg.data)
        np.testing.assert_array_equal(a.reg.data, c.reg.data)

    def test_seeded_and_active_with_rng(self):
        cfg = toy_cfg(dropout=0.5)
        p = lm.init_params(cfg, 1)
        images, boxes = toy_inputs(cfg)
        a = lm.forward(p, cfg, images, boxes, rng=np.random.default_rng(3))
        b = lm.forward(p, cfg, images, boxes, rng=np.random.default_rng(3))
        np.testing.assert_array_equal(a.reg.data, b.reg.data)
        assert not np.array_equal(a.reg.data, lm.forward(p, cfg, images, boxes).reg.data)

    def test_inverted_scaling_keeps_the_mean(self):
        drop = lm.dropout_fn(0.25, np.random.default_rng(0))
        out = drop(nx.Tensor(np.ones(200000))).data
        assert set(np.unique(out)) == {0.0, 1.0 / 0.75}
        assert abs(out.mean() - 1.0) < 0.01

    def test_rate_validation(self):
        for rate in (-0.1, 1.0):
            with pytest.raises(ValueError):
                toy_cfg(dropout=rate)

import dataclasses

import numpy as np
import pytest

from fcpl import losses as L
from fcpl import trainer as T
from fcpl.errors import ConfigError, IntervalOutOfBounds, MissingVideo, NonFiniteLoss
from fcpl.net import flatten, forward_batch
from fcpl.transforms import PlantedSegment, TransformSpec, build_dataset, render_video_pair

SMALL = dict(epochs=12, finetune_epochs=2, learning_rate=0.1, num_models=2, batch_size=16, seed=3)


@pytest.fixture(scope="module")
def data():
    return T.TrainingData.from_dataset(build_dataset(24, 2, seed=1))


@pytest.fixture(scope="module")
def config():
    return T.TrainConfig(**SMALL)


@pytest.fixture(scope="module")
def base(data, config):
    return T.train_base(data, config)


@pytest.fixture(scope="module")
def table(base, data):
    return T.precompute_base_features(base.params, data.originals)


@pytest.fixture(scope="module")
def gt_pairs():
    chain = [(TransformSpec("BlockShuffle", 2), 9)]
    pairs = []
    for k in range(4):
        ref, q, gt = render_video_pair(12, 12, ((1, 6), (3, 8)), 1.0, chain, seed=100 + k)
        pairs += T.extract_gt_image_pairs([gt], {q.video_id: q}, {ref.video_id: ref})
    return pairs


# ---------------------------------------------------------------------------
# config


def test_config_defaults():
    c = T.TrainConfig()
    assert (c.lambda_r, c.lambda_pn, c.cosface_s, c.cosface_m) == (1.0, 0.5, 30.0, 0.35)
    assert (c.learning_rate, c.momentum, c.batch_size, c.num_models) == (0.01, 0.9, 32, 3)


def test_config_file_round_trip(tmp_path, config):
    path = tmp_path / "c.cfg"
    path.write_text(config.to_text())
    assert T.TrainConfig.from_file(path) == config


def test_config_file_comments_and_types(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\n\nepochs = 7\nlambda_r=0.25  # trailing\n")
    c = T.TrainConfig.from_file(path)
    assert c.epochs == 7 and isinstance(c.epochs, int) and c.lambda_r == 0.25


@pytest.mark.parametrize("text,needle", [("bogus = 1\n", "bogus"), ("epochs = x\n", "epochs"),
                                         ("epochs\n", "key=value"), ("batch_size = 2\n", "batch_size"),
                                         ("cosface_m = 1.0\n", "cosface_m")])
def test_config_errors(tmp_path, text, needle):
    path = tmp_path / "c.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=needle):
        T.TrainConfig.from_file(path)


# ---------------------------------------------------------------------------
# stage 1


def test_zero_epochs_returns_initial_params(data):
    cfg = T.TrainConfig(**{**SMALL, "epochs": 0})
    st = T.train_base(data, cfg)
    init = T._new_state(cfg, data, cfg.seed)
    for name, arr in st.params.arrays().items():
        assert np.array_equal(arr, init.params.arrays()[name])
    assert st.curve == []


def test_base_descends(base):
    assert base.curve[-1]["l_mtr"] < base.curve[0]["l_mtr"]


def test_default_config_fits_the_200_class_fixture():
    full = T.TrainingData.from_dataset(build_dataset(200, 3, seed=1))
    st = T.train_base(full, T.TrainConfig())
    E = forward_batch(st.params, full.X)
    acc = np.mean(np.argmax(L.cosine_logits(E, st.head), axis=1) == full.labels)
    assert acc >= 0.9
    assert st.curve[-1]["l_mtr"] < st.curve[0]["l_mtr"]


def test_training_is_deterministic(data, config, base):
    again = T.train_base(data, config)
    for name, arr in base.params.arrays().items():
        assert arr.tobytes() == again.params.arrays()[name].tobytes()


def test_non_finite_loss_aborts(data, config, monkeypatch):
    real = L.cosface_loss

    def broken(E, labels, head):
        loss, dE, dW = real(E, labels, head)
        return float("nan"), dE, dW
    monkeypatch.setattr(T.L, "cosface_loss", broken)
    with pytest.raises(NonFiniteLoss, match="stage 1"):
        T.train_base(data, config)


# ---------------------------------------------------------------------------
# base table


def test_base_table(base, data, table):
    assert len(table) == data.num_classes
    again = T.precompute_base_features(base.params, data.originals)
    assert again.checksum() == table.checksum()
    np.testing.assert_array_equal(table.features, forward_batch(base.params, data.originals))
    with pytest.raises(ValueError):
        table.features[0, 0] = 1.0


def test_originals_are_in_class_order(data):
    ds = build_dataset(24, 2, seed=1)
    np.testing.assert_array_equal(data.originals, flatten(np.stack([tc.original for tc in ds])))


# ---------------------------------------------------------------------------
# stage 2


def test_lambda_zero_reduces_to_base_training(data, table, config):
    seed = 77
    a = T.train_compatible(data, table, config, seed, lambda_r=0.0)
    b = T.train_base(data, dataclasses.replace(config, seed=seed))
    for name, arr in a.params.arrays().items():
        assert arr.tobytes() == b.params.arrays()[name].tobytes()


def test_compatible_training_pulls_towards_base(data, table, config, base):
    st = T.train_compatible(data, table, config, config.model_seed(0))
    assert st.curve[-1]["l_com"] < st.curve[0]["l_com"]
    assert st.curve[-1]["l_mtr"] < st.curve[0]["l_mtr"]
    free = T.train_compatible(data, table, config, config.model_seed(0), lambda_r=0.0)

    def dist(s):
        E = forward_batch(s.params, data.originals)
        return L.compat_loss(table.features, E, mean=True)[0]
    assert dist(st) < dist(free)


def test_table_must_cover_originals(data, table, config):
    with pytest.raises(ValueError):
        T.train_compatible(data, T.BaseFeatureTable(table.features[:5]), config, 1)


def test_model_seeds_distinct(config):
    assert len({config.model_seed(i) for i in range(10)} | {config.seed}) == 11


# ---------------------------------------------------------------------------
# ground-truth pairs


def _videos(**kw):
    ref, q, gt = render_video_pair(10, 10, ((1, 5), (2, 6)), 1.0, [], seed=2, **kw)
    return {q.video_id: q}, {ref.video_id: ref}, gt


def test_extract_pairs_by_timestamp():
    qs, rs, gt = _videos()
    pairs = T.extract_gt_image_pairs([gt], qs, rs)
    assert [p.q_time for p in pairs] == [1, 2, 3, 4, 5]
    assert [p.r_time for p in pairs] == [2, 3, 4, 5, 6]
    assert all(p.query_frame.tobytes() == p.ref_frame.tobytes() for p in pairs)
    assert T.extract_gt_image_pairs([], qs, rs) == []


def test_extract_pairs_errors():
    qs, rs, gt = _videos()
    with pytest.raises(MissingVideo):
        T.extract_gt_image_pairs([gt], {}, rs)
    with pytest.raises(MissingVideo):
        T.extract_gt_image_pairs([gt], qs, {})
    late = dataclasses.replace(gt, q_start=6.0, q_end=12.0, r_start=0.0, r_end=6.0)
    with pytest.raises(IntervalOutOfBounds):
        T.extract_gt_image_pairs([late], qs, rs)
    warped = PlantedSegment(gt.query_id, gt.ref_id, 1.0, 3.0, 2.0, 8.0)
    with pytest.raises(ValueError, match="differ"):
        T.extract_gt_image_pairs([warped], qs, rs)


# ---------------------------------------------------------------------------
# stage 3


def test_stage3_batch_reduces_to_stage2_when_lambda_pn_zero(data, table, base, config):
    st = T.train_compatible(data, table, config, 5)
    rng = np.random.default_rng(0)
    idx = rng.permutation(len(data.X))[:8]
    extra = rng.normal(0, 0.3, (6, data.X.shape[1]))
    b3 = T._make_class_batch(data, table, idx, extra, 3)
    b2 = T._make_class_batch(data, table, idx)
    br3, g3, w3 = T.batch_objective(st.params, st.head, b3, 1.0, 0.0, stage=3)
    br2, g2, w2 = T.batch_objective(st.params, st.head, b2, 1.0, 0.0, stage=2)
    assert br3.l_final == br2.l_final
    for name, arr in g2.arrays().items():
        assert np.array_equal(g3.arrays()[name], arr)
    assert np.array_equal(w2, w3)


def test_lambda_pn_zero_ignores_pair_content(data, table, config, gt_pairs):
    cfg = dataclasses.replace(config, lambda_pn=0.0)
    st = T.train_compatible(data, table, cfg, 5)
    shuffled = [dataclasses.replace(p, ref_frame=gt_pairs[(i + 1) % len(gt_pairs)].ref_frame)
                for i, p in enumerate(gt_pairs)]
    a = T.finetune_gt(st, data, table, gt_pairs, cfg, 9)
    b = T.finetune_gt(st, data, table, shuffled, cfg, 9)
    for name, arr in a.params.arrays().items():
        assert np.array_equal(arr, b.params.arrays()[name])


def test_finetune_leaves_input_state_alone(data, table, config, gt_pairs):
    st = T.train_compatible(data, table, config, 5)
    before = st.params.W1.copy()
    ft = T.finetune_gt(st, data, table, gt_pairs, config, 9)
    assert np.array_equal(st.params.W1, before)
    assert not np.array_equal(ft.params.W1, before)
    assert [r["stage"] for r in ft.curve] == [3] * config.finetune_epochs
    assert all(r["l_pos"] > 0 and r["l_neg"] > 0 for r in ft.curve)


def test_finetune_needs_pairs(data, table, config, base):
    with pytest.raises(ValueError):
        T.finetune_gt(base, data, table, [], config, 1)


# ---------------------------------------------------------------------------
# pipeline


def test_pipeline_outputs(tmp_path, data, config, gt_pairs):
    cfg = dataclasses.replace(config, num_models=3, epochs=2, finetune_epochs=1)
    res = T.run_pipeline(cfg, data, gt_pairs, tmp_path / "a")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.fcpl"))
    assert names == ["base.fcpl"] + [f"compat_{i}.fcpl" for i in range(3)] + [f"finetuned_{i}.fcpl" for i in range(3)]
    lines = (tmp_path / "a" / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 2 + 3 * 2 + 3 * 1 == len(res.metrics)
    stages = [int(line.split("\t")[0]) for line in lines]
    assert stages == [1] * 2 + [2] * 6 + [3] * 3
    for line in lines:
        fields = line.split("\t")
        assert len(fields) == len(T.METRIC_COLUMNS)
        stage, _, _, mtr, com, pos, neg, fin = fields
        br = L.LossBreakdown(float(mtr), float(com), float(pos), float(neg),
                             cfg.lambda_r, cfg.lambda_pn, max(int(stage), 2))
        if stage != "1":
            assert br.l_final == pytest.approx(float(fin), rel=1e-9)

    T.run_pipeline(cfg, data, gt_pairs, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.tsv").read_bytes() == (tmp_path / "b" / "metrics.tsv").read_bytes()
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_pipeline_without_pairs_skips_stage3(tmp_path, data, config, caplog):
    cfg = dataclasses.replace(config, num_models=1, epochs=1)
    res = T.run_pipeline(cfg, data, None, tmp_path)
    assert res.finetuned == []
    assert not list(tmp_path.glob("finetuned_*"))
    with caplog.at_level("WARNING"):
        T.run_pipeline(cfg, data, [], None)
    assert "stage 3 skipped" in caplog.text


def test_base_table_untouched_by_later_stages(data, table, config, gt_pairs):
    before = table.checksum()
    st = T.train_compatible(data, table, config, 4)
    T.finetune_gt(st, data, table, gt_pairs, config, 4)
    assert table.checksum() == before

import json

import numpy as np
import pytest

from gridtouch.attributes import ScoreVector
from gridtouch.conditioning import (
    ConditioningError,
    GroundTruthRef,
    RetouchGroup,
    build_conditions,
    conditions_from_scores,
    emit_pairs,
    load_manifest,
    load_pairs,
    save_manifest,
    validate_condition,
)
from gridtouch.imagecore import Image, save_image


def sv(s1=0.0, s2=0.0, s3=5000.0, s4=0.5):
    return ScoreVector(s1, s2, s3, s4)


class TestLabelRule:
    def test_three_gts_basic(self):
        scored = [("a", sv(s1=10)), ("b", sv(s1=20)), ("c", sv(s1=15))]
        cond = conditions_from_scores(scored)
        assert cond["a"][0] == -1.0
        assert cond["b"][0] == 1.0
        assert cond["c"][0] == 0.0

    def test_single_gt_all_zero(self):
        cond = conditions_from_scores([("only", sv(s1=3, s2=4, s3=6000, s4=0.7))])
        assert np.array_equal(cond["only"], np.zeros(4))

    def test_tie_on_max_first_wins(self):
        scored = [("e1", sv(s2=9)), ("e2", sv(s2=9)), ("e3", sv(s2=1))]
        cond = conditions_from_scores(scored)
        assert cond["e1"][1] == 1.0
        assert cond["e2"][1] == 0.0
        assert cond["e3"][1] == -1.0

    def test_all_tied_cancels(self):
        scored = [("x", sv()), ("y", sv()), ("z", sv())]
        cond = conditions_from_scores(scored)
        for c in cond.values():
            assert np.array_equal(c, np.zeros(4))

    def test_at_most_one_plus_minus_per_attribute(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            scored = [
                (f"e{i}", sv(*rng.random(3), rng.random() * 10000))
                for i in range(rng.integers(1, 6))
            ]
            cond = conditions_from_scores(scored)
            mat = np.stack(list(cond.values()))
            for i in range(4):
                assert np.sum(mat[:, i] == 1.0) <= 1
                assert np.sum(mat[:, i] == -1.0) <= 1
                assert set(np.unique(mat[:, i])) <= {-1.0, 0.0, 1.0}


class TestValidateCondition:
    def test_basic(self):
        assert np.array_equal(validate_condition([1, -1, 0, 0.5]), [1, -1, 0, 0.5])

    def test_range(self):
        with pytest.raises(ConditioningError):
            validate_condition([2.0, 0, 0, 0])
        validate_condition([2.0, 0, 0, 0], extended=True)
        with pytest.raises(ConditioningError):
            validate_condition([3.5, 0, 0, 0], extended=True)

    def test_shape(self):
        with pytest.raises(ConditioningError):
            validate_condition([1, 2, 3])


def make_group_files(tmp_path, seed=0):
    rng = np.random.default_rng(seed)
    (tmp_path / "img").mkdir(exist_ok=True)
    inp = tmp_path / "img" / "input.png"
    save_image(Image.from_array(rng.random((8, 8, 3)) * 0.5), inp)
    gts = []
    for i, name in enumerate("abc"):
        p = tmp_path / "img" / f"gt_{name}.png"
        # spread brightness so labels are non-degenerate
        save_image(Image.from_array(np.full((8, 8, 3), 0.2 + 0.3 * i)), p)
        gts.append(GroundTruthRef(expert=name, path=p))
    return RetouchGroup(input_path=inp, gts=tuple(gts))


class TestManifest:
    def test_round_trip(self, tmp_path):
        group = make_group_files(tmp_path)
        mp = tmp_path / "manifest.json"
        save_manifest([group], mp)
        back = load_manifest(mp)
        assert len(back) == 1
        assert back[0].input_path.resolve() == group.input_path.resolve()
        assert [g.expert for g in back[0].gts] == ["a", "b", "c"]

    def test_empty(self, tmp_path):
        mp = tmp_path / "m.json"
        mp.write_text(json.dumps({"groups": []}))
        assert load_manifest(mp) == []

    def test_missing_file_named(self, tmp_path):
        mp = tmp_path / "m.json"
        mp.write_text(
            json.dumps(
                {"groups": [{"input": "gone.png", "gts": [{"expert": "a", "path": "gone.png"}]}]}
            )
        )
        with pytest.raises(ConditioningError, match="gone.png"):
            load_manifest(mp)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "none.json")

    def test_duplicate_expert(self, tmp_path):
        group = make_group_files(tmp_path)
        with pytest.raises(ConditioningError, match="duplicate"):
            RetouchGroup(input_path=group.input_path, gts=(group.gts[0], group.gts[0]))


class TestPairs:
    def test_emit_three_records(self, tmp_path):
        group = make_group_files(tmp_path)
        out = tmp_path / "pairs.jsonl"
        n = emit_pairs([group], out)
        assert n == 3
        recs = load_pairs(out)
        assert len(recs) == 3
        for rec in recs:
            assert set(rec) == {"input", "gt", "expert", "c"}
            assert len(rec["c"]) == 4

    def test_conditions_match_build_conditions(self, tmp_path):
        group = make_group_files(tmp_path)
        out = tmp_path / "pairs.jsonl"
        emit_pairs([group], out)
        cond = build_conditions(group)
        for rec in load_pairs(out):
            assert np.array_equal(np.array(rec["c"]), cond[rec["expert"]])

    def test_brightness_labels_in_expected_order(self, tmp_path):
        group = make_group_files(tmp_path)
        cond = build_conditions(group)
        assert cond["a"][3] == -1.0  # dimmest preset
        assert cond["c"][3] == 1.0   # brightest preset


class TestScaleInvariance:
    def test_global_scale_leaves_labels(self, tmp_path):
        # same three GTs rendered at full scale and at half scale; with
        # deliberately spread attributes the labels must not move
        def gt_array(i):
            rng = np.random.default_rng(42 + i)
            amp = 0.05 * (i + 1)
            base = 0.2 + 0.15 * i + amp * rng.random((6, 6, 3))
            base[:, :, 0] *= 1.0 + 0.1 * i  # tint spread for cct/colorfulness
            return base

        groups = []
        for variant in (1.0, 0.5):
            paths = []
            for i in range(3):
                p = tmp_path / f"v{variant}_{i}.png"
                save_image(Image.from_array(variant * gt_array(i)), p)
                paths.append(p)
            inp = tmp_path / f"v{variant}_in.png"
            save_image(Image.from_array(np.full((6, 6, 3), 0.3 * variant)), inp)
            groups.append(
                RetouchGroup(
                    input_path=inp,
                    gts=tuple(
                        GroundTruthRef(expert=f"e{i}", path=p) for i, p in enumerate(paths)
                    ),
                )
            )
        from gridtouch.attributes import ScoreOptions

        opts = ScoreOptions(linearize="none")
        c_full = build_conditions(groups[0], opts)
        c_half = build_conditions(groups[1], opts)
        for k in c_full:
            assert np.array_equal(c_full[k], c_half[k])

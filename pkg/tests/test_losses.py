import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from panomatch.data import BoundingBox, GroundTruthBox
from panomatch.errors import EmptyInput, IndexOutOfRange, LengthMismatch
from panomatch.geo import GeoCoordinate, geo_from_enu, CameraPose
from panomatch.losses import (
    LossConfig,
    combined_loss,
    contrastive_loss,
    contrastive_loss_grad,
    projected_loc_loss,
    rmse_loss,
    smooth_l1,
    softmax_log_loss,
    softmax_log_loss_grad,
)

ANCHOR = CameraPose(GeoCoordinate(0.0, 0.0), 0.0, 2.5)


def offset_geo(east, north):
    return geo_from_enu(ANCHOR, east, north)


class TestSoftmaxLogLoss:
    def test_saturated_correct_class(self):
        assert softmax_log_loss([1000.0, 0.0], 0) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_two_classes(self):
        assert softmax_log_loss([0.0, 0.0], 0) == pytest.approx(math.log(2.0))

    def test_uniform_four_classes(self):
        assert softmax_log_loss([0.0, 0.0, 0.0, 0.0], 2) == pytest.approx(math.log(4.0))

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            softmax_log_loss([0.0, 0.0], 5)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.normal(0, 3, size=rng.integers(2, 8))
            c = int(rng.integers(0, len(z)))
            grad = softmax_log_loss_grad(z, c)
            eps = 1e-6
            for k in range(len(z)):
                zp, zm = z.copy(), z.copy()
                zp[k] += eps
                zm[k] -= eps
                fd = (softmax_log_loss(zp, c) - softmax_log_loss(zm, c)) / (2 * eps)
                assert fd == pytest.approx(grad[k], rel=1e-5, abs=1e-8)


class TestSmoothL1:
    def test_zero_at_equality(self):
        assert smooth_l1([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_quadratic_region(self):
        assert smooth_l1([0.5], [0.0]) == pytest.approx(0.125)

    def test_linear_region(self):
        assert smooth_l1([2.0], [0.0]) == pytest.approx(1.5)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            smooth_l1([1.0, 2.0], [1.0])

    def test_c1_continuity_at_knee(self):
        # value and first derivative continuous at |d| = 1
        eps = 1e-7
        below = smooth_l1([1.0 - eps], [0.0])
        above = smooth_l1([1.0 + eps], [0.0])
        assert above - below == pytest.approx(2 * eps, rel=1e-3)
        d_below = (smooth_l1([1.0 - eps], [0.0]) - smooth_l1([1.0 - 3 * eps], [0.0])) / (2 * eps)
        d_above = (smooth_l1([1.0 + 3 * eps], [0.0]) - smooth_l1([1.0 + eps], [0.0])) / (2 * eps)
        assert d_below == pytest.approx(d_above, abs=1e-6)
        assert d_above == pytest.approx(1.0, abs=1e-6)


class TestContrastive:
    def test_identical_same_pair(self):
        f = np.array([0.6, 0.8])
        assert contrastive_loss(f, f, True) == 0.0

    def test_far_negative_pair_satisfied(self):
        assert contrastive_loss([0.0, 0.0], [3.0, 4.0], False, margin=1.0) == 0.0

    def test_coincident_negative_pair(self):
        assert contrastive_loss([1.0, 2.0], [1.0, 2.0], False, margin=1.0) == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            contrastive_loss([1.0], [1.0, 2.0], True)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=6),
           st.data(), st.booleans())
    def test_symmetry(self, f1, data, same):
        f2 = data.draw(st.lists(st.floats(-3, 3), min_size=len(f1), max_size=len(f1)))
        assert contrastive_loss(f1, f2, same) == contrastive_loss(f2, f1, same)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for same in (True, False):
            for _ in range(20):
                f1 = rng.normal(0, 1, size=5)
                f2 = rng.normal(0, 1, size=5)
                g1, g2 = contrastive_loss_grad(f1, f2, same, margin=2.0)
                eps = 1e-6
                for k in range(5):
                    fp, fm = f1.copy(), f1.copy()
                    fp[k] += eps
                    fm[k] -= eps
                    fd = (contrastive_loss(fp, f2, same, 2.0)
                          - contrastive_loss(fm, f2, same, 2.0)) / (2 * eps)
                    assert fd == pytest.approx(g1[k], rel=1e-5, abs=1e-7)
                    fp2, fm2 = f2.copy(), f2.copy()
                    fp2[k] += eps
                    fm2[k] -= eps
                    fd2 = (contrastive_loss(f1, fp2, same, 2.0)
                           - contrastive_loss(f1, fm2, same, 2.0)) / (2 * eps)
                    assert fd2 == pytest.approx(g2[k], rel=1e-5, abs=1e-7)


class TestRmseLoss:
    def test_zero_at_equality(self):
        pts = [offset_geo(3.0, 4.0), offset_geo(-8.0, 2.0)]
        assert rmse_loss(pts, pts) == 0.0

    def test_single_pair(self):
        a = offset_geo(0.0, 0.0)
        b = offset_geo(0.0, 11.122634257103817)
        assert rmse_loss([a], [b]) == pytest.approx(11.122634257103817, rel=1e-6)

    def test_two_pairs_rms(self):
        preds = [offset_geo(3.0, 0.0), offset_geo(0.0, 4.0)]
        gts = [offset_geo(0.0, 0.0), offset_geo(0.0, 0.0)]
        assert rmse_loss(preds, gts) == pytest.approx(math.sqrt(12.5), rel=1e-6)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            rmse_loss([offset_geo(0, 0)], [])
        with pytest.raises(EmptyInput):
            rmse_loss([], [])


class TestProjectedLocLoss:
    def gt(self, box, instance_id=None):
        geo = offset_geo(1.0, 1.0) if instance_id else None
        return GroundTruthBox(BoundingBox(*box), instance_id, geo)

    def test_zero_when_projections_coincide(self):
        pred = [BoundingBox(0, 0, 10, 10)]
        proj = [BoundingBox(50, 50, 60, 60)]
        g = [self.gt((0, 0, 10, 10), "a")]
        g_other = [self.gt((50, 50, 60, 60), "a")]
        assert projected_loc_loss(pred, proj, g, g_other) == 0.0

    def test_zero_when_no_identified_boxes(self):
        pred = [BoundingBox(0, 0, 10, 10)]
        proj = [BoundingBox(0, 0, 10, 10)]
        g = [self.gt((0, 0, 10, 10))]
        g_other = [self.gt((0, 0, 10, 10))]
        assert projected_loc_loss(pred, proj, g, g_other) == 0.0

    def test_unit_offset_on_all_corners(self):
        pred = [BoundingBox(0, 0, 10, 10)]
        proj = [BoundingBox(51, 51, 61, 61)]  # off by (1,1,1,1)
        g = [self.gt((0, 0, 10, 10), "a")]
        g_other = [self.gt((50, 50, 60, 60), "a")]
        assert projected_loc_loss(pred, proj, g, g_other) == pytest.approx(2.0)

    def test_identity_missing_in_other_view_skipped(self):
        pred = [BoundingBox(0, 0, 10, 10)]
        proj = [BoundingBox(51, 51, 61, 61)]
        g = [self.gt((0, 0, 10, 10), "a")]
        g_other = [self.gt((50, 50, 60, 60), "b")]
        assert projected_loc_loss(pred, proj, g, g_other) == 0.0


class TestCombinedLoss:
    def test_all_zero_at_perfect_prediction(self):
        f = np.array([0.6, 0.8, 0.0])
        geo = offset_geo(5.0, 5.0)
        out = combined_loss(
            class_terms=[([100.0, 0.0], 0)],
            loc_terms=[([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])],
            contrastive_terms=[(f, f, True)],
            geo_terms=([geo], [geo]),
            n_matched=1,
        )
        for term in (out.conf, out.loc, out.loc_proj, out.cont, out.rmse, out.total):
            assert term == pytest.approx(0.0, abs=1e-12)

    def test_single_conf_term(self):
        out = combined_loss(class_terms=[([0.0, 0.0], 0)], n_matched=1)
        assert out.total == pytest.approx(math.log(2.0))

    def test_alpha_scales_localization_terms_exactly(self):
        loc = [([0.0, 0.0, 0.0, 0.0], [2.0, 2.0, 2.0, 2.0])]
        one = combined_loss(loc_terms=loc, class_terms=[([0.0, 0.0], 0)],
                            n_matched=2, cfg=LossConfig(alpha=1.0))
        two = combined_loss(loc_terms=loc, class_terms=[([0.0, 0.0], 0)],
                            n_matched=2, cfg=LossConfig(alpha=2.0))
        assert two.total - two.conf / 2 == pytest.approx(2 * (one.total - one.conf / 2))

    def test_breakdown_invariant(self):
        out = combined_loss(
            class_terms=[([0.0, 0.0], 0)],
            loc_terms=[([1.0], [3.0])],
            n_matched=4,
            cfg=LossConfig(alpha=1.5),
        )
        expected = (out.conf + 1.5 * (out.loc + out.loc_proj) + out.cont + out.rmse) / 4
        assert out.total == pytest.approx(expected)
        assert out.n_matched == 4

    def test_no_matches_warns_and_zeroes(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out = combined_loss(class_terms=[([0.0, 0.0], 0)], n_matched=0)
        assert out.total == 0.0
        assert any("no matched boxes" in str(w.message) for w in caught)

    def test_serializes(self):
        out = combined_loss(class_terms=[([0.0, 0.0], 0)], n_matched=1)
        obj = out.to_jsonable()
        assert set(obj) == {"conf", "loc", "loc_proj", "cont", "rmse", "total",
                            "n_matched"}

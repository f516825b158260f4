import numpy as np
import pytest

from modalign import autodiff as ad
from modalign.alignment import AlignmentLoss, ProjectionHead, alignment_loss, infonce_directional
from modalign.autodiff import Tensor, counter_rng
from modalign.errors import DomainError, ParameterError, ShapeError

from oracles import alignment_brute, infonce_brute

LN4 = 1.3862943611198906
GAP10_LOSS = 4.5398899216864647e-05  # ln(1 + e^-10), mpmath 40 digits


def rnd(shape, seed):
    return counter_rng("align-test", seed).standard_normal(shape)


class TestProjectionHead:
    def test_single_position_pooling_is_identity(self):
        head = ProjectionHead(6, 4, hidden=8, seed=0)
        row = rnd((1, 6), 0)
        out = head.project(Tensor(row)).data
        via_tokens = head.project_tokens(Tensor(row)).data[0]
        np.testing.assert_allclose(out, via_tokens, atol=1e-15)

    def test_duplicated_rows_pool_to_same_output(self):
        head = ProjectionHead(6, 4, hidden=8, seed=1)
        row = rnd((1, 6), 1)
        single = head.project(Tensor(row)).data
        triple = head.project(Tensor(np.repeat(row, 3, axis=0))).data
        np.testing.assert_allclose(single, triple, atol=1e-12)

    def test_fully_masked_rejected(self):
        head = ProjectionHead(6, 4, hidden=8, seed=2)
        with pytest.raises(DomainError):
            head.project(Tensor(rnd((3, 6), 2)), mask=[0, 0, 0])

    def test_gradient_through_pool_and_mlp(self):
        head = ProjectionHead(5, 3, hidden=7, seed=3)
        feats = Tensor(rnd((4, 5), 3), requires_grad=True)
        params = [feats] + [t for _, t in head.parameters()]
        err = ad.grad_check(
            lambda ts: ad.mean(head.project(ts[0], mask=[1, 1, 1, 0])), params
        )
        assert err < 1e-6


class TestInfoNCEDirectional:
    def test_batch_of_one_is_exactly_zero(self):
        a = Tensor(rnd((1, 5), 4))
        assert infonce_directional(a, Tensor(rnd((1, 5), 5)), 0.1).item() == 0.0

    def test_identical_rows_give_ln_b(self):
        row = rnd(6, 6)
        mat = Tensor(np.tile(row, (4, 1)))
        loss = infonce_directional(mat, Tensor(np.tile(rnd(6, 7), (4, 1))), 0.5)
        assert abs(loss.item() - LN4) < 1e-12

    def test_similarity_gap_ten_case(self):
        # orthonormal rows: sim matrix [[1,0],[0,1]], tau = 0.1
        a = Tensor(np.eye(2, 5))
        loss = infonce_directional(a, Tensor(np.eye(2, 5)), 0.1)
        assert abs(loss.item() - GAP10_LOSS) < 1e-15

    def test_matches_brute_force_on_random_batches(self):
        for trial in range(50):
            rng = counter_rng("nce", trial)
            b = int(rng.integers(1, 9))
            anchors = rng.standard_normal((b, 6)) + 0.05
            targets = rng.standard_normal((b, 6)) + 0.05
            tau = float(rng.uniform(0.05, 2.0))
            got = infonce_directional(Tensor(anchors), Tensor(targets), tau).item()
            assert abs(got - infonce_brute(anchors, targets, tau)) < 1e-10

    def test_row_rescaling_invariance(self):
        rng = counter_rng("nce-scale", 0)
        anchors = rng.standard_normal((5, 4))
        targets = rng.standard_normal((5, 4))
        base = infonce_directional(Tensor(anchors), Tensor(targets), 0.3).item()
        scales = rng.uniform(0.1, 10.0, size=(5, 1))
        scaled = infonce_directional(Tensor(anchors * scales), Tensor(targets), 0.3).item()
        assert abs(base - scaled) < 1e-10

    def test_nonnegative_always(self):
        for trial in range(20):
            rng = counter_rng("nce-pos", trial)
            b = int(rng.integers(1, 8))
            loss = infonce_directional(
                Tensor(rng.standard_normal((b, 4)) + 0.1),
                Tensor(rng.standard_normal((b, 4)) + 0.1),
                0.2,
            )
            assert loss.item() >= 0.0

    def test_invalid_temperature(self):
        a = Tensor(rnd((2, 3), 8))
        with pytest.raises(ParameterError):
            infonce_directional(a, a, 0.0)

    def test_zero_norm_row_rejected(self):
        a = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(DomainError):
            infonce_directional(a, Tensor(np.ones((2, 2))), 0.1)

    def test_monotone_in_temperature_with_fixed_margin(self):
        # diagonal sim 1, off-diagonal 0: loss shrinks as tau shrinks
        a = Tensor(np.eye(4))
        losses = [infonce_directional(a, a, tau).item() for tau in (1.0, 0.5, 0.1)]
        assert losses[0] > losses[1] > losses[2]


class TestAlignmentLoss:
    def _random_inputs(self, b, d, seed):
        rng = counter_rng("align-loss", seed)
        return [rng.standard_normal((b, d)) + 0.05 for _ in range(4)]

    def test_matches_brute_force(self):
        si, ci, st, ct = self._random_inputs(4, 6, 0)
        got = alignment_loss(Tensor(si), Tensor(ci), Tensor(st), Tensor(ct), 0.1)
        want = alignment_brute(si, ci, st, ct, 0.1)
        for key in ("l_ic", "l_ci", "l_i", "l_tc", "l_ct", "l_t", "l_con"):
            assert abs(getattr(got, key) - want[key]) < 1e-10

    def test_halving_identities(self):
        si, ci, st, ct = self._random_inputs(5, 4, 1)
        rep = alignment_loss(Tensor(si), Tensor(ci), Tensor(st), Tensor(ct), 0.2)
        assert abs(rep.l_i - 0.5 * (rep.l_ic + rep.l_ci)) < 1e-12
        assert abs(rep.l_t - 0.5 * (rep.l_tc + rep.l_ct)) < 1e-12
        assert abs(rep.l_con - 0.5 * (rep.l_i + rep.l_t)) < 1e-12
        assert abs(rep.tensor.item() - rep.l_con) < 1e-12

    def test_perfect_alignment_with_margin_two_vanishes(self):
        mat = np.vstack([np.eye(2), -np.eye(2)])  # pairwise sims in {1, -1, 0}
        rep = alignment_loss(Tensor(mat), Tensor(mat), Tensor(mat), Tensor(mat), 0.01)
        assert rep.l_con < 1e-8

    def test_swapping_student_and_teacher_swaps_directional_terms(self):
        si, ci, st, ct = self._random_inputs(4, 5, 2)
        fwd = alignment_loss(Tensor(si), Tensor(ci), Tensor(st), Tensor(ct), 0.1)
        rev = alignment_loss(Tensor(ci), Tensor(si), Tensor(ct), Tensor(st), 0.1)
        assert fwd.l_ic == rev.l_ci and fwd.l_ci == rev.l_ic
        assert fwd.l_tc == rev.l_ct and fwd.l_ct == rev.l_tc

    def test_teacher_side_receives_no_gradient(self):
        si, ci, st, ct = self._random_inputs(3, 4, 3)
        students = [Tensor(si, requires_grad=True), Tensor(st, requires_grad=True)]
        teachers = [Tensor(ci, requires_grad=True), Tensor(ct, requires_grad=True)]
        rep = alignment_loss(students[0], teachers[0], students[1], teachers[1], 0.1)
        rep.tensor.backward()
        assert all(t.grad is None for t in teachers)
        assert all(s.grad is not None and np.any(s.grad != 0) for s in students)

    def test_batch_size_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            alignment_loss(
                Tensor(rnd((3, 4), 9)), Tensor(rnd((2, 4), 10)),
                Tensor(rnd((3, 4), 11)), Tensor(rnd((3, 4), 12)), 0.1,
            )

    def test_gradient_through_loss(self):
        si, ci, st, ct = self._random_inputs(3, 4, 4)
        inputs = [Tensor(si, requires_grad=True), Tensor(st, requires_grad=True)]

        def f(ts):
            return alignment_loss(ts[0], Tensor(ci), ts[1], Tensor(ct), 0.1).tensor

        assert ad.grad_check(f, inputs) < 1e-6

    def test_one_descent_step_does_not_increase_loss(self):
        # median over 20 seeds, plain gradient step, lr 1e-3
        deltas = []
        for seed in range(20):
            rng = counter_rng("descent", seed)
            student_i = Tensor(rng.standard_normal((6, 8)), requires_grad=True)
            student_t = Tensor(rng.standard_normal((6, 8)), requires_grad=True)
            teacher_i = Tensor(rng.standard_normal((6, 8)))
            teacher_t = Tensor(rng.standard_normal((6, 8)))
            before = alignment_loss(student_i, teacher_i, student_t, teacher_t, 0.1)
            before.tensor.backward()
            for t in (student_i, student_t):
                t.data -= 1e-3 * t.grad
                t.zero_grad()
            after = alignment_loss(student_i, teacher_i, student_t, teacher_t, 0.1)
            deltas.append(after.l_con - before.l_con)
        assert np.median(deltas) <= 0.0


def test_alignment_loss_report_is_dataclass():
    assert AlignmentLoss.__dataclass_fields__.keys() >= {"tau", "l_ic", "l_ci", "l_tc", "l_ct"}

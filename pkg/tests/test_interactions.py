"""The four pairwise combiners and the DAG student model."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagfm.interactions import (
    EMBED_INIT_STD,
    KINDS,
    DagfmModel,
    DagfmPlusModel,
    DagfmPlusSpec,
    DagfmSpec,
    full_dag_pairs,
    mlp_widths,
    phi_basic_inner,
    phi_inner,
    phi_kernel,
    phi_outer,
)
from dagfm.numcore import ConfigurationError, ShapeError, grad_check

from conftest import perturb_params, squared_logit_closure

finite_vec = st.lists(
    st.floats(-10, 10, allow_nan=False, allow_infinity=False), min_size=1, max_size=6
)


def identity_model(kind, m, d, layers, embeddings):
    """Single-row-vocab model whose embeddings are pinned to the given rows
    and whose edge weights reduce the combiner to a plain product."""
    model = DagfmModel(DagfmSpec(kind, m, d, layers), [1] * m, seed=0)
    model.set_identity_edge_weights()
    emb = np.asarray(embeddings, dtype=np.float64).reshape(m, d)
    for i in range(m):
        model.store.set(f"emb.f{i}", emb[i][None, :])
    return model


class TestPhis:
    def test_basic_inner_example(self):
        np.testing.assert_array_equal(phi_basic_inner([1, 2], [3, 4]), [3, 8])

    def test_basic_inner_zero(self):
        np.testing.assert_array_equal(phi_basic_inner([0, 0], [3, 4]), [0, 0])

    @given(a=finite_vec)
    @settings(max_examples=25, deadline=None)
    def test_basic_inner_commutes(self, a):
        b = list(reversed(a))
        np.testing.assert_array_equal(phi_basic_inner(a, b), phi_basic_inner(b, a))

    def test_inner_example(self):
        np.testing.assert_array_equal(phi_inner([1, 2], [3, 4], [0, 1]), [0, 8])

    def test_inner_ones_reduces_to_basic(self):
        a, b = [1.5, -2.0], [0.5, 3.0]
        np.testing.assert_array_equal(phi_inner(a, b, [1, 1]), phi_basic_inner(a, b))

    def test_inner_homogeneous_in_w(self, rng):
        a, b, w = rng.normal(size=(3, 4))
        np.testing.assert_allclose(
            phi_inner(a, b, 2 * w), 2 * phi_inner(a, b, w), rtol=1e-15
        )

    def test_kernel_example(self):
        out = phi_kernel([1, 2], [3, 4], [[0, 1], [1, 0]])
        np.testing.assert_array_equal(out, [6, 4])

    def test_kernel_identity_reduces_to_basic(self, rng):
        a, b = rng.normal(size=(2, 5))
        np.testing.assert_array_equal(phi_kernel(a, b, np.eye(5)), phi_basic_inner(a, b))

    def test_kernel_diagonal_reduces_to_inner(self, rng):
        a, b, w = rng.normal(size=(3, 4))
        np.testing.assert_allclose(
            phi_kernel(a, b, np.diag(w)), phi_inner(a, b, w), rtol=1e-15
        )

    def test_outer_example(self):
        np.testing.assert_array_equal(phi_outer([1, 2], [3, 4], [1, 0], [1, 1]), [3, 4])

    def test_outer_zero_p(self, rng):
        b, q = rng.normal(size=(2, 3))
        np.testing.assert_array_equal(
            phi_outer(rng.normal(size=3), b, np.zeros(3), q), np.zeros(3)
        )

    def test_outer_equals_rank1_kernel_50_cases(self, rng):
        for _ in range(50):
            d = int(rng.integers(1, 7))
            a, b, p, q = rng.normal(size=(4, d))
            W = np.outer(p, q)
            np.testing.assert_allclose(
                phi_outer(a, b, p, q), phi_kernel(a, b, W), atol=1e-12, rtol=0
            )

    @pytest.mark.parametrize(
        "call",
        [
            lambda: phi_basic_inner([1, 2], [1, 2, 3]),
            lambda: phi_inner([1, 2], [1, 2], [1, 2, 3]),
            lambda: phi_kernel([1, 2], [1, 2], np.eye(3)),
            lambda: phi_outer([1, 2], [1, 2], [1, 2, 3], [1, 2]),
        ],
    )
    def test_shape_errors(self, call):
        with pytest.raises(ShapeError):
            call()


class TestDagfmSpec:
    def test_kinds_tuple(self):
        assert KINDS == ("basic-inner", "inner", "kernel", "outer")

    def test_full_dag_pairs(self):
        assert full_dag_pairs(3) == ((0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2))

    def test_defaults_to_full_dag(self):
        spec = DagfmSpec("inner", 4, 2, 2)
        assert spec.is_full_dag
        assert spec.num_states == 3
        assert len(spec.pairs()) == 10  # m(m+1)/2

    def test_bad_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            DagfmSpec("cosine", 3, 2, 1)

    def test_too_few_fields_rejected(self):
        with pytest.raises(ConfigurationError):
            DagfmSpec("inner", 1, 2, 1)

    def test_zero_layers_rejected(self):
        with pytest.raises(ConfigurationError):
            DagfmSpec("inner", 3, 2, 0)

    def test_backward_edge_rejected(self):
        with pytest.raises(ConfigurationError):
            DagfmSpec("inner", 3, 2, 1, edges=((0, 0), (1, 1), (2, 2), (2, 0)))

    def test_missing_self_edge_rejected(self):
        with pytest.raises(ConfigurationError):
            DagfmSpec("inner", 3, 2, 1, edges=((0, 0), (1, 1), (0, 2)))


class TestPropagation:
    def test_second_order_states(self):
        model = identity_model("basic-inner", 3, 1, 2, [1, 2, 3])
        _, trace = model.forward_trace(np.zeros((1, 3), dtype=np.int64))
        np.testing.assert_allclose(trace.node_states[1][0, :, 0], [1, 6, 18])

    def test_third_order_states(self):
        model = identity_model("basic-inner", 3, 1, 2, [1, 2, 3])
        _, trace = model.forward_trace(np.zeros((1, 3), dtype=np.int64))
        np.testing.assert_allclose(trace.node_states[2][0, :, 0], [1, 14, 75])

    def test_initial_states_are_embeddings(self, rng):
        emb = rng.normal(size=(4, 3))
        model = identity_model("kernel", 4, 3, 2, emb)
        _, trace = model.forward_trace(np.zeros((1, 4), dtype=np.int64))
        np.testing.assert_array_equal(trace.node_states[0][0], emb)

    def test_masked_edge_changes_state(self):
        # dropping 1 -> 3 leaves h3^2 = (e2 + e3) * e3 = (2 + 3) * 3 = 15
        edges = tuple(p for p in full_dag_pairs(3) if p != (0, 2))
        model = DagfmModel(DagfmSpec("basic-inner", 3, 1, 2, edges=edges), [1] * 3)
        for i, v in enumerate([1.0, 2.0, 3.0]):
            model.store.set(f"emb.f{i}", np.array([[v]]))
        _, trace = model.forward_trace(np.zeros((1, 3), dtype=np.int64))
        assert trace.node_states[1][0, 2, 0] == pytest.approx(15.0)

    def test_logit_with_ones_head(self):
        model = identity_model("basic-inner", 3, 1, 2, [1, 2, 3])
        model.store.set("head.w", np.ones(9))
        logits = model.forward(np.zeros((1, 3), dtype=np.int64))
        # (1+2+3) + (1+6+18) + (1+14+75)
        assert logits[0] == pytest.approx(121.0)

    def test_zero_head_gives_half_probability(self, rng):
        model = DagfmModel(DagfmSpec("kernel", 4, 3, 2), [5] * 4, seed=1)
        idx = rng.integers(0, 5, size=(7, 4))
        np.testing.assert_array_equal(model.predict_proba(idx), np.full(7, 0.5))

    def test_inner_ones_matches_basic_bitwise(self, rng):
        emb = rng.normal(size=(4, 3))
        basic = identity_model("basic-inner", 4, 3, 2, emb)
        inner = identity_model("inner", 4, 3, 2, emb)
        head = rng.normal(size=12)
        for model in (basic, inner):
            model.store.set("head.w", head)
        idx = np.zeros((2, 4), dtype=np.int64)
        np.testing.assert_array_equal(basic.forward(idx), inner.forward(idx))

    def test_kernel_identity_matches_basic(self, rng):
        emb = rng.normal(size=(3, 2))
        basic = identity_model("basic-inner", 3, 2, 3, emb)
        kernel = identity_model("kernel", 3, 2, 3, emb)
        idx = np.zeros((1, 3), dtype=np.int64)
        _, tb = basic.forward_trace(idx)
        _, tk = kernel.forward_trace(idx)
        for sb, sk in zip(tb.node_states, tk.node_states):
            # same sums in a different contraction order: tight but not bitwise
            np.testing.assert_allclose(sb, sk, rtol=1e-13, atol=1e-14)

    def test_pooled_width(self):
        for layers in (1, 2, 3):
            model = DagfmModel(DagfmSpec("inner", 4, 2, layers), [3] * 4)
            _, trace = model.forward_trace(np.zeros((2, 4), dtype=np.int64))
            assert trace.pooled_concat.shape == (2, 4 * (layers + 1))
            assert model.store["head.w"].shape == (4 * (layers + 1),)

    def test_pooled_matches_state_sums(self, rng):
        model = DagfmModel(DagfmSpec("outer", 3, 4, 2), [4] * 3, seed=2)
        idx = rng.integers(0, 4, size=(5, 3))
        _, trace = model.forward_trace(idx)
        for t, state in enumerate(trace.node_states):
            np.testing.assert_allclose(trace.pooled[:, t, :], state.sum(axis=2))

    def test_out_of_range_index_rejected(self):
        model = DagfmModel(DagfmSpec("inner", 2, 2, 1), [3, 3])
        bad = np.array([[0, 3]])  # table has 3 rows -> valid indices 0..2
        with pytest.raises(IndexError):
            model.forward(bad)

    def test_outer_identity_only_at_d1(self):
        model = DagfmModel(DagfmSpec("outer", 3, 2, 1), [2] * 3)
        with pytest.raises(ConfigurationError):
            model.set_identity_edge_weights()
        # and at d=1 it reduces to the plain product chain
        m1 = identity_model("outer", 3, 1, 2, [1, 2, 3])
        _, trace = m1.forward_trace(np.zeros((1, 3), dtype=np.int64))
        np.testing.assert_allclose(trace.node_states[1][0, :, 0], [1, 6, 18])

    def test_embedding_init_scale(self):
        model = DagfmModel(DagfmSpec("inner", 6, 8, 1), [50] * 6, seed=0)
        rows = np.concatenate([model.store[n].ravel() for n in model.embedding_names()])
        assert abs(rows.std() - EMBED_INIT_STD) < 0.02

    def test_batch_forward_matches_row_by_row(self, rng):
        model = DagfmModel(DagfmSpec("kernel", 3, 2, 2), [4] * 3, seed=3)
        perturb_params(model, rng)
        idx = rng.integers(0, 4, size=(6, 3))
        batched = model.forward(idx)
        single = np.array([model.forward(idx[i : i + 1])[0] for i in range(6)])
        np.testing.assert_allclose(batched, single, rtol=1e-12)


class TestDagfmGradients:
    @pytest.mark.parametrize("kind", KINDS)
    def test_squared_loss_grad(self, kind, rng):
        model = DagfmModel(DagfmSpec(kind, 3, 2, 2), [3] * 3, seed=11)
        perturb_params(model, rng)
        idx = rng.integers(0, 3, size=(4, 3))
        targets = rng.normal(size=4)
        assert grad_check(squared_logit_closure(model, idx, targets), model.store) < 1e-5

    def test_ctr_loss_grad_inner(self, rng):
        from dagfm.distill import _ctr_loss_and_grad

        model = DagfmModel(DagfmSpec("inner", 3, 2, 2), [4] * 3, seed=5)
        perturb_params(model, rng)
        idx = rng.integers(0, 4, size=(5, 3))
        labels = rng.integers(0, 2, size=5).astype(float)

        def fn(store):
            logits = model.forward(idx)
            loss, dlogits = _ctr_loss_and_grad(labels, logits)
            return loss, model.backward(dlogits)

        assert grad_check(fn, model.store) < 1e-4


class TestDagfmPlus:
    def test_zero_mlp_is_additive_noop(self, rng):
        base = DagfmModel(DagfmSpec("inner", 3, 2, 2), [4] * 3, seed=9)
        plus = DagfmPlusModel(
            DagfmPlusSpec(DagfmSpec("inner", 3, 2, 2), mlp_hidden=(8, 8)), [4] * 3, seed=9
        )
        idx = rng.integers(0, 4, size=(6, 3))
        np.testing.assert_array_equal(base.forward(idx), plus.forward(idx))

    def test_hand_set_mlp(self):
        spec = DagfmPlusSpec(DagfmSpec("basic-inner", 2, 1, 1), mlp_hidden=(1,))
        model = DagfmPlusModel(spec, [1, 1], seed=0)
        model.store.set("emb.f0", np.array([[2.0]]))
        model.store.set("emb.f1", np.array([[3.0]]))
        # states: layer 0 = [2, 3], layer 1 = [2*2, (2+3)*3] = [4, 15]
        model.store.set("mlp.W0", np.array([[0.1], [0.2], [0.3], [-0.1]]))
        model.store.set("mlp.b0", np.array([0.25]))
        model.store.set("mlp.W1", np.array([[2.0]]))
        model.store.set("mlp.b1", np.array([0.1]))
        logit = model.forward(np.zeros((1, 2), dtype=np.int64))[0]
        # hidden pre-activation 0.2+0.6+1.2-1.5+0.25 = 0.75, relu passes it
        assert logit == pytest.approx(0.75 * 2.0 + 0.1)

    def test_mlp_widths(self):
        spec = DagfmPlusSpec(DagfmSpec("inner", 3, 4, 2), mlp_hidden=(7, 5))
        assert mlp_widths(spec) == [3 * 3 * 4, 7, 5, 1]
        final = DagfmPlusSpec(
            DagfmSpec("inner", 3, 4, 2), mlp_hidden=(7,), mlp_feed="final-state"
        )
        assert mlp_widths(final) == [3 * 4, 7, 1]

    def test_width_mismatch_guard(self):
        spec = DagfmPlusSpec(DagfmSpec("inner", 2, 2, 2), mlp_hidden=(4,))
        model = DagfmPlusModel(spec, [3, 3], seed=0)
        model._mlp_input = lambda states: np.zeros((1, 3))
        with pytest.raises(ConfigurationError, match="width"):
            model.forward(np.zeros((1, 2), dtype=np.int64))

    def test_bad_feed_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            DagfmPlusSpec(DagfmSpec("inner", 2, 2, 1), mlp_feed="two-streams")

    @pytest.mark.parametrize("feed", ["all-states", "final-state"])
    def test_gradients(self, feed, rng):
        # tanh keeps the loss smooth so central differences are well-posed;
        # relu configs are covered by the filtered acceptance sweep
        spec = DagfmPlusSpec(
            DagfmSpec("outer", 3, 2, 2), mlp_hidden=(5,), activation="tanh", mlp_feed=feed
        )
        model = DagfmPlusModel(spec, [3] * 3, seed=4)
        perturb_params(model, rng)
        idx = rng.integers(0, 3, size=(3, 3))
        targets = rng.normal(size=3)
        assert grad_check(squared_logit_closure(model, idx, targets), model.store) < 1e-5

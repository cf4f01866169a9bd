import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trendkern import numcore as nc
from trendkern.errors import NonFiniteError, ShapeError
from trendkern.gradcheck import REL_TOL, check, check_primitives, primitive_cases
from trendkern.numcore import kernels


def leaf(x):
    return nc.Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestForwardValues:
    def test_sigmoid_tanh_at_zero(self):
        assert nc.sigmoid(nc.Tensor(0.0)).item() == 0.5
        assert nc.tanh(nc.Tensor(0.0)).item() == 0.0

    def test_matmul_identity(self):
        A = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(nc.matmul(A, np.eye(4)).data, A)

    def test_embedding_repeated_ids(self):
        table = np.arange(12.0).reshape(4, 3)
        out = nc.embedding(table, [2, 2]).data
        np.testing.assert_array_equal(out, [table[2], table[2]])

    def test_concat_and_slice(self):
        a, b = np.ones((2, 2)), np.zeros((2, 3))
        c = nc.concat([a, b])
        assert c.shape == (2, 5)
        np.testing.assert_array_equal(nc.slice(c, 2, 5).data, b)
        np.testing.assert_array_equal(nc.slice(c, 0, 1, axis=0).data, c.data[:1])

    def test_euclidean_distance_rows(self):
        d = nc.euclidean_distance([[0.0, 0.0], [1.0, 1.0]], [[3.0, 4.0], [1.0, 1.0]]).data
        np.testing.assert_array_equal(d, [5.0, 0.0])

    def test_row_broadcast_add(self):
        out = nc.add(np.zeros((2, 3)), np.array([1.0, 2.0, 3.0])).data
        np.testing.assert_array_equal(out, [[1, 2, 3], [1, 2, 3]])


class TestErrors:
    @pytest.mark.parametrize("op,args", [
        (nc.matmul, (np.ones((2, 3)), np.ones((2, 3)))),
        (nc.add, (np.ones((2, 3)), np.ones((3, 2)))),
        (nc.mul, (np.ones((2, 3)), np.ones((2,)))),
        (nc.euclidean_distance, (np.ones((2, 3)), np.ones((2, 4)))),
        (nc.concat, ([np.ones((2, 3)), np.ones((3, 3))],)),
    ])
    def test_shape_mismatch_names_primitive_and_shapes(self, op, args):
        with pytest.raises(ShapeError) as err:
            op(*args)
        assert op.__name__ in str(err.value)
        assert "(2, 3)" in str(err.value)

    def test_non_finite_forward_raises(self):
        with pytest.raises(NonFiniteError):
            nc.mul(np.array([1e308]), np.array([1e308]))
        with pytest.raises(NonFiniteError):
            nc.Tensor([np.nan])

    def test_zero_norm_rejected(self):
        with pytest.raises(ShapeError):
            nc.l2_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_backward_needs_scalar(self):
        w = leaf([1.0, 2.0])
        with nc.Tape() as tape:
            y = nc.square(w)
        with pytest.raises(ShapeError):
            nc.backward(tape, y)


class TestBackward:
    def test_mean_square_analytic(self):
        w = leaf([3.0])
        with nc.Tape() as tape:
            loss = nc.mean(nc.square(w))
        (g,) = nc.backward(tape, loss, wrt=[w])
        assert g.tolist() == [6.0]

    def test_disconnected_leaf_gets_zero(self):
        w, unused = leaf([1.0, 2.0]), leaf(np.ones((2, 2)))
        with nc.Tape() as tape:
            loss = nc.sum(nc.square(w))
        gw, gu = nc.backward(tape, loss, wrt=[w, unused])
        np.testing.assert_array_equal(gw, [2.0, 4.0])
        np.testing.assert_array_equal(gu, np.zeros((2, 2)))

    def test_shared_operand_accumulates(self):
        w = leaf([2.0])
        with nc.Tape() as tape:
            loss = nc.sum(nc.mul(w, w))
        assert nc.backward(tape, loss, wrt=[w])[0].tolist() == [4.0]

    def test_no_tape_records_nothing(self):
        w = leaf([1.0])
        y = nc.square(w)
        assert not y.requires_grad

    def test_tape_order_is_topological(self):
        a, b = leaf(np.ones((2, 2))), leaf(np.ones((2, 2)))
        with nc.Tape() as tape:
            nc.sum(nc.tanh(nc.matmul(nc.add(a, b), a)))
        seen = {id(a), id(b)}
        for entry in tape.entries:
            assert all(id(t) in seen for t in entry.inputs if t.requires_grad)
            seen.update(id(o) for o in entry.outputs)

    def test_every_primitive_matches_finite_differences(self):
        # 20 randomized trials per primitive, worst case reported
        results = check_primitives(trials=20, seed=123)
        assert {r.name for r in results} >= {
            "matmul", "add", "mul", "concat", "slice", "sigmoid", "tanh", "relu", "square",
            "abs", "mean", "sum", "euclidean_distance", "embedding", "l2_normalize"}
        bad = [r for r in results if not r.passed]
        assert not bad, bad

    def test_composed_graph(self):
        rng = np.random.default_rng(5)

        def fn(x, w, t):
            h = nc.tanh(nc.add(nc.matmul(x, w), nc.slice(t, 0, 3, axis=0)))
            e = nc.l2_normalize(nc.concat([h, nc.sigmoid(h)]))
            return nc.mean(nc.euclidean_distance(e, nc.mul(e, 0.5)))

        res = check("composed", fn, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(5, 2))])
        assert res.max_rel_error < REL_TOL


class TestDeterminism:
    def test_bitwise_repeatable_forward_and_gradients(self):
        def run():
            rng = np.random.default_rng(9)
            out = []
            for name, fn, arrays in primitive_cases(rng):
                leaves = [leaf(a) for a in arrays]
                with nc.Tape() as tape:
                    loss = fn(*leaves)
                grads = nc.backward(tape, loss, wrt=leaves)
                out.append((loss.item(), [g.tobytes() for g in grads]))
            return out

        assert run() == run()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_l2_normalize_unit_norm(x):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < 1e-150):
        with pytest.raises(ShapeError):
            nc.l2_normalize(x)
        return
    y = nc.l2_normalize(x).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)


class TestLstmKernels:
    @pytest.fixture(autouse=True)
    def restore_backend(self):
        before = kernels.active_backend()
        yield
        kernels.use_backend(before)

    def test_cell_against_composed_primitives(self):
        rng = np.random.default_rng(1)
        H = 5
        gates, c_prev = rng.normal(size=(3, 4 * H)) * 2, rng.normal(size=(3, H))
        i = nc.sigmoid(nc.slice(gates, 0, H))
        f = nc.sigmoid(nc.slice(gates, H, 2 * H))
        g = nc.tanh(nc.slice(gates, 2 * H, 3 * H))
        o = nc.sigmoid(nc.slice(gates, 3 * H, 4 * H))
        c_ref = nc.add(nc.mul(f, c_prev), nc.mul(i, g))
        h_ref = nc.mul(o, nc.tanh(c_ref))
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            h, c = nc.lstm_cell(gates, c_prev)
            np.testing.assert_allclose(h.data, h_ref.data, rtol=0, atol=1e-14)
            np.testing.assert_allclose(c.data, c_ref.data, rtol=0, atol=1e-14)

    def test_step_equals_matmul_add_cell(self):
        rng = np.random.default_rng(2)
        B, H = 4, 6
        v, wv = rng.normal(size=(B, 1)), rng.normal(size=(1, 4 * H))
        fixed, h0, wh, c0 = (rng.normal(size=s) for s in ((B, 4 * H), (B, H), (H, 4 * H), (B, H)))
        gates = nc.add(nc.add(nc.matmul(v, wv), fixed), nc.matmul(h0, wh))
        h_ref, c_ref = nc.lstm_cell(gates, c0)
        h, c = nc.lstm_step(v, wv, fixed, h0, wh, c0)
        np.testing.assert_allclose(h.data, h_ref.data, atol=1e-14, rtol=0)
        np.testing.assert_allclose(c.data, c_ref.data, atol=1e-14, rtol=0)

    @pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled kernels not built")
    def test_backends_agree(self):
        from trendkern.numcore import _lstm_kernels, _pykernels
        rng = np.random.default_rng(3)
        B, H = 7, 9
        args = (rng.normal(size=B), rng.normal(size=4 * H), rng.normal(size=(B, 4 * H)) * 3,
                rng.normal(size=(B, 4 * H)), rng.normal(size=(B, H)))
        fwd_c = _lstm_kernels.lstm_step_forward(*args)
        fwd_p = _pykernels.lstm_step_forward(*args)
        for a, b in zip(fwd_c, fwd_p):
            np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)
        dh, dc = rng.normal(size=(B, H)), rng.normal(size=(B, H))
        acts, _, tanh_c, _ = fwd_p
        for a, b in zip(_lstm_kernels.lstm_backward(dh, dc, acts, args[4], tanh_c),
                        _pykernels.lstm_backward(dh, dc, acts, args[4], tanh_c)):
            np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)

    def test_gradients_pass_on_every_backend(self):
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            rng = np.random.default_rng(4)
            cases = {n: (fn, arrs) for n, fn, arrs in primitive_cases(rng)}
            for name in ("lstm_cell", "lstm_step"):
                fn, arrs = cases[name]
                assert check(name, fn, arrs).passed, (backend, name)


class TestAdam:
    def test_first_step_moves_by_lr_against_sign(self):
        p = leaf([1.0, -2.0, 0.5])
        state = nc.AdamState.for_params([p], lr=0.01)
        nc.adam_step(state, [p], [np.array([0.3, -4.0, 1e-3])])
        np.testing.assert_allclose(p.data, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], rtol=0, atol=1e-7)
        assert state.step == 1

    def test_zero_gradient_leaves_params(self):
        p = leaf([1.0, 2.0])
        state = nc.AdamState.for_params([p], lr=0.1)
        nc.adam_step(state, [p], [np.zeros(2)])
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_converges_on_quadratic(self):
        w = leaf([0.0])
        state = nc.AdamState.for_params([w], lr=0.05)
        for _ in range(100):
            with nc.Tape() as tape:
                loss = nc.sum(nc.square(nc.sub(w, 3.0)))
            nc.adam_step(state, [w], nc.backward(tape, loss, wrt=[w]))
        # oracle: the scalar update rule replayed in plain floats
        x, m, v = 0.0, 0.0, 0.0
        for t in range(1, 101):
            g = 2 * (x - 3.0)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= 0.05 * (m / (1 - 0.9 ** t)) / ((v / (1 - 0.999 ** t)) ** 0.5 + 1e-8)
        assert abs(w.data[0] - 3.0) < 0.2
        assert w.data[0] == pytest.approx(x, abs=1e-12)

    def test_non_finite_gradient_aborts(self):
        p = leaf([1.0])
        with pytest.raises(NonFiniteError):
            nc.adam_step(nc.AdamState.for_params([p], 0.1), [p], [np.array([np.inf])])

    def test_clipping_is_optional(self):
        p, q = leaf([0.0]), leaf([0.0])
        sp, sq = nc.AdamState.for_params([p], 0.1), nc.AdamState.for_params([q], 0.1)
        nc.adam_step(sp, [p], [np.array([100.0])])
        nc.adam_step(sq, [q], [np.array([100.0])], max_grad_norm=1.0)
        # Adam's first step is scale-invariant, so clipping changes nothing here
        np.testing.assert_allclose(p.data, q.data, atol=1e-9)


class TestSchedule:
    @pytest.mark.parametrize("interval,epoch,expected", [(10, 12, 0.0001), (15, 20, 0.0001),
                                                          (10, 10, 0.001), (10, 1, 0.001), (10, 21, 1e-5)])
    def test_step_decay(self, interval, epoch, expected):
        lr = nc.lr_at_epoch(nc.LrSchedule(0.001, interval, 0.1, True), epoch)
        assert lr == pytest.approx(expected, rel=1e-12)

    def test_disabled(self):
        sched = nc.LrSchedule(0.001, 10, 0.1, enabled=False)
        assert all(nc.lr_at_epoch(sched, e) == 0.001 for e in range(1, 50))

    def test_rejects_bad_values(self):
        from trendkern.errors import ConfigError
        for kwargs in ({"lr0": 0}, {"gamma": 0}, {"gamma": 1.5}, {"decay_interval": 0}):
            with pytest.raises(ConfigError):
                nc.LrSchedule(**kwargs)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphink import tensor as T
from morphink.checkpoint import (array_to_bytes, bytes_to_array,
                                 load_checkpoint, save_checkpoint)
from morphink.errors import NoTape, NotScalar, ShapeMismatch, TapeConsumed

RNG = np.random.default_rng(7)


def numeric_grads(f, arrays, eps=1e-3):
    """Central finite differences of scalar f(*arrays) for each array."""
    base = [np.array(a, dtype=np.float32) for a in arrays]
    grads = []
    for k, a in enumerate(base):
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*base)
            flat[i] = orig - eps
            lo = f(*base)
            flat[i] = orig
            g.reshape(-1)[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def tape_grads(f_tensor, arrays):
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    with T.tape():
        loss = f_tensor(*leaves)
        gmap = T.backward(loss)
    return [gmap[leaf] for leaf in leaves]


def check_op(f_tensor, f_value, arrays, rtol=1e-3, atol=1e-4, eps=1e-3):
    got = tape_grads(f_tensor, arrays)
    want = numeric_grads(f_value, arrays, eps=eps)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, rtol=rtol, atol=atol)


def scalarize(t):
    return T.sum_(T.mul(t, t))


def scalarize_np(a):
    return float((a.astype(np.float64) ** 2).sum())


class TestForward:
    def test_sigmoid_midpoint(self):
        y = T.sigmoid(T.Tensor(0.0))
        assert y.item() == pytest.approx(0.5)

    def test_sigmoid_grad_at_zero(self):
        x = T.Tensor(0.0, requires_grad=True)
        with T.tape():
            g = T.backward(T.sigmoid(x))
        assert g[x] == pytest.approx(0.25)

    def test_conv2d_identity_kernel(self):
        img = T.Tensor(RNG.random((2, 1, 8, 8), dtype=np.float32))
        k = np.zeros((1, 1, 3, 3), dtype=np.float32)
        k[0, 0, 1, 1] = 1.0
        out = T.conv2d(img, T.Tensor(k))
        np.testing.assert_allclose(out.data, img.data, atol=1e-6)

    def test_relu_values(self):
        out = T.relu(T.Tensor([-1.0, 0.0, 2.5]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.5])

    def test_max_pool_values(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        out = T.max_pool2d(T.Tensor(x))
        np.testing.assert_array_equal(out.data[0, 0], [[5, 7], [13, 15]])

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeMismatch):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_softplus_matches_reference(self):
        x = np.array([-30.0, -1.0, 0.0, 1.0, 30.0], dtype=np.float32)
        out = T.softplus(T.Tensor(x))
        np.testing.assert_allclose(out.data, np.logaddexp(0, x.astype(np.float64)), rtol=1e-6)


class TestBackwardContract:
    def test_sum_gradient_is_ones(self):
        x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with T.tape():
            g = T.backward(T.sum_(x))
        np.testing.assert_array_equal(g[x], [1, 1, 1])

    def test_square_sum_gradient(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.tape():
            g = T.backward(T.sum_(x * x))
        np.testing.assert_allclose(g[x], [2.0, 4.0])

    def test_backward_requires_tape(self):
        x = T.Tensor(1.0, requires_grad=True)
        with pytest.raises(NoTape):
            T.backward(x)

    def test_backward_requires_scalar(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.tape():
            y = x * x
            with pytest.raises(NotScalar):
                T.backward(y)

    def test_tape_consumed_on_second_backward(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.tape():
            loss = T.sum_(x * x)
            T.backward(loss)
            with pytest.raises(TapeConsumed):
                T.backward(loss)

    def test_unused_watched_leaf_gets_zeros(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        y = T.Tensor([3.0], requires_grad=True)
        with T.tape() as tp:
            tp.watch(y)
            g = T.backward(T.sum_(x))
        np.testing.assert_array_equal(g[y], [0.0])

    def test_ops_do_not_mutate_inputs(self):
        a = T.Tensor(RNG.random((3, 4), dtype=np.float32), requires_grad=True)
        b = T.Tensor(RNG.random((3, 4), dtype=np.float32), requires_grad=True)
        a0, b0 = a.data.copy(), b.data.copy()
        with T.tape():
            loss = T.sum_(T.sigmoid(a * b + a / (b + 2.0) - b))
            T.backward(loss)
        np.testing.assert_array_equal(a.data, a0)
        np.testing.assert_array_equal(b.data, b0)

    def test_no_recording_without_tape(self):
        a = T.Tensor([1.0], requires_grad=True)
        out = a * 2.0
        assert out.node is None and not out.requires_grad


class TestFiniteDifference:
    """Every core op against the central-difference oracle."""

    def test_add_sub_mul_div_broadcast(self):
        a = RNG.random((2, 3, 4)).astype(np.float32) + 0.5
        b = RNG.random((3, 1)).astype(np.float32) + 0.5
        check_op(lambda x, y: scalarize(T.div(T.mul(T.add(x, y), T.sub(x, y)), y)),
                 lambda x, y: scalarize_np(((x.astype(np.float64) + y) * (x - y)) / y),
                 [a, b])

    def test_matmul_2d(self):
        a = RNG.random((3, 4)).astype(np.float32)
        b = RNG.random((4, 2)).astype(np.float32)
        check_op(lambda x, y: scalarize(T.matmul(x, y)),
                 lambda x, y: scalarize_np(x.astype(np.float64) @ y),
                 [a, b])

    def test_matmul_vector(self):
        a = RNG.random((3, 4)).astype(np.float32)
        v = RNG.random(4).astype(np.float32)
        check_op(lambda x, y: scalarize(T.matmul(x, y)),
                 lambda x, y: scalarize_np(x.astype(np.float64) @ y),
                 [a, v])

    def test_conv2d(self):
        x = RNG.random((2, 3, 6, 5)).astype(np.float32)
        w = RNG.random((4, 3, 3, 3)).astype(np.float32)
        check_op(lambda a, b: scalarize(T.conv2d(a, b)),
                 lambda a, b: scalarize_np(_conv_ref(a, b)),
                 [x, w], rtol=2e-3, atol=2e-3)

    def test_max_pool2d(self):
        # well-separated values keep the argmax stable under the probe step
        x = (RNG.permutation(64).astype(np.float32).reshape(1, 1, 8, 8)) * 0.1
        check_op(lambda a: scalarize(T.max_pool2d(a)),
                 lambda a: scalarize_np(_pool_ref(a)),
                 [x])

    def test_relu_away_from_kink(self):
        x = RNG.random((4, 4)).astype(np.float32) + 0.1
        x[::2] *= -1
        check_op(lambda a: scalarize(T.relu(a)),
                 lambda a: scalarize_np(np.maximum(a, 0)),
                 [x])

    def test_sigmoid_softplus_exp_log_sqrt(self):
        x = RNG.random((3, 3)).astype(np.float32) + 0.5

        def fv(a):
            a64 = a.astype(np.float64)
            return float(np.sum(1 / (1 + np.exp(-a64)) + np.logaddexp(0, a64)
                                + np.exp(a64) + np.log(a64) + np.sqrt(a64)))

        check_op(lambda a: T.sum_(T.sigmoid(a) + T.softplus(a) + T.exp(a) + T.log(a) + T.sqrt(a)),
                 fv, [x])

    def test_trig(self):
        x = RNG.random((5,)).astype(np.float32) * 2 - 1
        check_op(lambda a: T.sum_(T.sin(a) * T.cos(a)),
                 lambda a: float(np.sum(np.sin(a.astype(np.float64)) * np.cos(a))),
                 [x])

    def test_min_max_where_abs(self):
        a = RNG.random((4, 4)).astype(np.float32)
        b = RNG.random((4, 4)).astype(np.float32)
        mask = RNG.random((4, 4)) > 0.5

        def ft(x, y):
            return T.sum_(T.minimum(x, y) + T.maximum(x, y) + T.where(mask, x, y) + T.absolute(x - y))

        def fv(x, y):
            x64, y64 = x.astype(np.float64), y.astype(np.float64)
            return float(np.sum(np.minimum(x64, y64) + np.maximum(x64, y64)
                                + np.where(mask, x64, y64) + np.abs(x64 - y64)))

        check_op(ft, fv, [a, b])

    def test_mean_axis_and_reshape_slice_concat(self):
        a = RNG.random((3, 4, 2)).astype(np.float32)

        def ft(x):
            y = T.mean(x, axis=1)
            z = T.reshape(y, (6,))
            return T.sum_(T.concat([z[:3], z[3:] * 2.0], axis=0) * z)

        def fv(x):
            y = x.astype(np.float64).mean(axis=1)
            z = y.reshape(6)
            return float((np.concatenate([z[:3], z[3:] * 2.0]) * z).sum())

        check_op(ft, fv, [a])

    def test_stack_transpose(self):
        a = RNG.random((2, 3)).astype(np.float32)
        b = RNG.random((2, 3)).astype(np.float32)

        def ft(x, y):
            s = T.stack([x, y], axis=0)
            return T.sum_(T.transpose(s, (1, 0, 2)) * T.transpose(s, (1, 0, 2)))

        def fv(x, y):
            s = np.stack([x.astype(np.float64), y], axis=0)
            return float((s ** 2).sum())

        check_op(ft, fv, [a, b])

    def test_affine_grid_sample(self):
        img = RNG.random((2, 2, 6, 6)).astype(np.float32)
        # grid interior so every corner weight is active
        gx = RNG.uniform(1.2, 4.8, size=(2, 3, 3))
        gy = RNG.uniform(1.2, 4.8, size=(2, 3, 3))
        grid = np.stack([gx, gy], axis=-1).astype(np.float32)

        def ft(x):
            return scalarize(T.affine_grid_sample(x, T.Tensor(grid)))

        def fv(x):
            return scalarize_np(_grid_sample_ref(x, grid))

        check_op(ft, fv, [img], rtol=2e-3, atol=2e-3)

    def test_five_op_composition(self):
        a = RNG.random((2, 2, 4, 4)).astype(np.float32)
        w = RNG.random((3, 2, 3, 3)).astype(np.float32) * 0.5

        def ft(x, k):
            y = T.conv2d(x, k)
            y = T.relu(y)
            y = T.max_pool2d(y)
            y = T.sigmoid(T.reshape(y, (2, 12)))
            return T.sum_(y * y)

        def fv(x, k):
            y = _conv_ref(x, k)
            y = np.maximum(y, 0)
            y = _pool_ref(y)
            y = 1 / (1 + np.exp(-y.reshape(2, 12).astype(np.float64)))
            return float((y ** 2).sum())

        check_op(ft, fv, [a, w], rtol=2e-3, atol=2e-3)


def _conv_ref(x, w):
    x64 = x.astype(np.float64)
    w64 = w.astype(np.float64)
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x64, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((B, O, H, W))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("bchw,oc->bohw", xp[:, :, i:i + H, j:j + W], w64[:, :, i, j])
    return out


def _pool_ref(x):
    B, C, H, W = x.shape
    return x.reshape(B, C, H // 2, 2, W // 2, 2).max(axis=(3, 5))


def _grid_sample_ref(img, grid):
    B, C, H, W = img.shape
    out = np.zeros((B, C) + grid.shape[1:3])
    for b in range(B):
        for i in range(grid.shape[1]):
            for j in range(grid.shape[2]):
                u, v = grid[b, i, j, 0] - 0.5, grid[b, i, j, 1] - 0.5
                x0, y0 = int(np.floor(u)), int(np.floor(v))
                fx, fy = u - x0, v - y0
                for dy in (0, 1):
                    for dx in (0, 1):
                        xx, yy = x0 + dx, y0 + dy
                        if 0 <= xx < W and 0 <= yy < H:
                            wgt = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
                            out[b, :, i, j] += wgt * img[b, :, yy, xx].astype(np.float64)
    return out


@st.composite
def broadcastable_pair(draw):
    ndim = draw(st.integers(1, 4))
    full = [draw(st.integers(1, 4)) for _ in range(ndim)]
    def variant():
        keep = draw(st.integers(0, ndim))
        dims = [d if draw(st.booleans()) else 1 for d in full[ndim - keep:]] if keep else []
        return tuple(dims)
    return tuple(full), variant()


class TestBroadcastProperty:
    @settings(max_examples=60, deadline=None)
    @given(broadcastable_pair())
    def test_matches_numpy(self, shapes):
        sa, sb = shapes
        a = np.arange(int(np.prod(sa, dtype=int)) or 1, dtype=np.float32).reshape(sa) + 1
        b = np.ones(sb, dtype=np.float32) * 2 if sb else np.float32(2.0)
        out = T.mul(T.Tensor(a), T.Tensor(np.asarray(b)))
        np.testing.assert_allclose(out.data, a * np.asarray(b))

    @settings(max_examples=40, deadline=None)
    @given(broadcastable_pair())
    def test_broadcast_gradient_shape(self, shapes):
        sa, sb = shapes
        a = T.Tensor(np.ones(sa, dtype=np.float32), requires_grad=True)
        b = T.Tensor(np.full(sb, 2.0, dtype=np.float32), requires_grad=True)
        with T.tape():
            g = T.backward(T.sum_(a * b))
        assert g[a].shape == a.shape
        assert g[b].shape == b.shape
        # every gradient entry of b counts each broadcast use exactly once
        np.testing.assert_allclose(g[b].sum(), np.ones(sa).sum() * 1.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        entries = {
            "alpha": RNG.random((3, 4)).astype(np.float32),
            "beta": RNG.random(7).astype(np.float32),
            "scalar": np.float32(3.25).reshape(()),
        }
        p = tmp_path / "t.morf"
        save_checkpoint(p, entries)
        back = load_checkpoint(p)
        assert list(back) == list(entries)
        for k in entries:
            np.testing.assert_array_equal(back[k], entries[k])

    def test_magic_layout(self, tmp_path):
        p = tmp_path / "t.morf"
        save_checkpoint(p, {"x": np.zeros(2, dtype=np.float32)})
        raw = p.read_bytes()
        assert raw[:4] == b"MORF"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 1

    def test_bytes_payload(self):
        blob = b'{"n_bits": 24}'
        arr = bytes_to_array(blob)
        assert arr.dtype == np.float32
        assert array_to_bytes(arr) == blob

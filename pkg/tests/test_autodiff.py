import numpy as np
import pytest

from hoigen import autodiff as ad
from hoigen import nn
from hoigen.autodiff import Tensor


def test_silu_at_zero():
    assert float(ad.silu(Tensor(0.0)).data) == 0.0


def test_matmul_identity():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 3)).astype(np.float32)
    out = ad.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_layernorm_vector():
    g = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    b = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    x = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    y = ad.layernorm(Tensor(x), g, b).data
    # hand oracle: (x - mean) / sqrt(var + eps)
    expect = (x - x.mean()) / np.sqrt(x.var() + 1e-5)
    np.testing.assert_allclose(y, expect, atol=1e-6)
    assert abs(y.mean()) < 1e-6
    assert abs(y.std() - 1.0) < 1e-3


def test_shape_mismatch_named():
    with pytest.raises(ad.ShapeError) as ei:
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(ei.value) and "(4, 2)" in str(ei.value)
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_backward_simple_square():
    x = Tensor(3.0, requires_grad=True)
    ad.backward(ad.power(x, 2))
    assert float(x.grad) == pytest.approx(6.0)
    ad.clear_tape()


def test_backward_rejects_non_scalar():
    x = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.backward(x + 1.0)
    ad.clear_tape()


def test_silu_derivative_matches_fd():
    x = Tensor(np.float32(1.0), requires_grad=True)
    ad.backward(ad.silu(x))
    s = 1.0 / (1.0 + np.exp(-1.0))
    analytic = s + 1.0 * s * (1.0 - s)
    assert float(x.grad) == pytest.approx(analytic, rel=1e-4)
    # central finite difference, h = 1e-3
    h = 1e-3
    f = lambda v: v / (1.0 + np.exp(-v))
    fd = (f(1.0 + h) - f(1.0 - h)) / (2 * h)
    assert float(x.grad) == pytest.approx(fd, rel=1e-3)
    ad.clear_tape()


def test_linear_regression_gradient():
    # gradient of ||Wx - y||^2 wrt W equals 2 (Wx - y) x^T
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(4, 4)).astype(np.float32), requires_grad=True)
    x = rng.normal(size=(4, 1)).astype(np.float32)
    y = rng.normal(size=(4, 1)).astype(np.float32)

    def loss_fn(wt):
        r = ad.matmul(wt, Tensor(x)) - Tensor(y)
        return ad.tsum(r * r)

    ad.gradcheck(loss_fn, [w], h=1e-2, tol=1e-3)
    loss = loss_fn(w)
    ad.backward(loss)
    expect = 2.0 * (w.data @ x - y) @ x.T
    np.testing.assert_allclose(w.grad, expect, rtol=1e-4, atol=1e-5)
    ad.clear_tape()


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape).astype(np.float32), requires_grad=True)


def test_gradcheck_all_ops():
    rng = np.random.default_rng(7)
    w = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
    w2 = Tensor(rng.normal(size=(2, 3, 8)).astype(np.float32))
    w3 = Tensor(rng.normal(size=(2, 2, 3, 4)).astype(np.float32))

    cases = {
        "add": lambda a, b: ad.tsum((a + b) * w),
        "sub": lambda a, b: ad.tsum((a - b) * w),
        "mul": lambda a, b: ad.tsum(a * b * w),
        "div": lambda a, b: ad.tsum(a / (b + 5.0) * w),
        "exp": lambda a, b: ad.tsum(ad.exp(a) * w),
        "log": lambda a, b: ad.tsum(ad.log(ad.tabs(a) + 1.0) * w),
        "sqrt": lambda a, b: ad.tsum(ad.sqrt(a * a + 1.0) * w),
        "sin": lambda a, b: ad.tsum(ad.sin(a) * w),
        "cos": lambda a, b: ad.tsum(ad.cos(a) * w),
        "sigmoid": lambda a, b: ad.tsum(ad.sigmoid(a) * w),
        "softplus": lambda a, b: ad.tsum(ad.softplus(a) * w),
        "silu": lambda a, b: ad.tsum(ad.silu(a) * w),
        "relu": lambda a, b: ad.tsum(ad.relu(a + 0.05) * w),
        "power": lambda a, b: ad.tsum(ad.power(a * a + 0.5, 1.5) * w),
        "mean": lambda a, b: ad.tmean(a * b),
        "sum_axis": lambda a, b: ad.tsum(ad.tsum(a * b, axis=1)),
        "softmax": lambda a, b: ad.tsum(ad.softmax(a) * w),
        "l2norm": lambda a, b: ad.tsum(ad.l2norm(a + 0.2)),
        "min": lambda a, b: ad.tsum(ad.tmin(a, axis=2) * w[:, :, 0]),
        "max": lambda a, b: ad.tsum(ad.tmax(a, axis=2) * w[:, :, 0]),
        "abs": lambda a, b: ad.tsum(ad.tabs(a + 0.03) * w),
        "slice": lambda a, b: ad.tsum(a[:, 1:, :2] * b[:, 1:, :2]),
        "concat": lambda a, b: ad.tsum(ad.concat([a, b], axis=2) * w2),
        "reshape": lambda a, b: ad.tsum(a.reshape(2, 12) @ b.reshape(12, 2)),
        "swapaxes": lambda a, b: ad.tsum(ad.swapaxes(a, 1, 2) * ad.swapaxes(b, 1, 2)),
        "stack": lambda a, b: ad.tsum(ad.stack([a, b], axis=0) * w3),
    }
    for name, fn in cases.items():
        a = _rand(rng, 2, 3, 4)
        b = _rand(rng, 2, 3, 4)
        worst = ad.gradcheck(fn, [a, b], h=2e-3, tol=1e-3)
        assert worst < 1e-3, name


def test_gradcheck_matmul_layernorm_scan():
    rng = np.random.default_rng(11)
    a = _rand(rng, 3, 4)
    b = _rand(rng, 4, 5)
    w = Tensor(rng.normal(size=(3, 5)).astype(np.float32))
    ad.gradcheck(lambda x, y: ad.tsum(ad.matmul(x, y) * w), [a, b], h=2e-3)

    g = Tensor((rng.normal(size=5) * 0.2 + 1).astype(np.float32), requires_grad=True)
    beta = _rand(rng, 5)
    x = _rand(rng, 3, 5)
    ad.gradcheck(lambda xx, gg, bb: ad.tsum(ad.layernorm(xx, gg, bb) * w),
                 [x, g, beta], h=2e-3)

    decay = Tensor(rng.uniform(0.2, 0.95, (2, 6, 3)).astype(np.float32), requires_grad=True)
    drive = _rand(rng, 2, 6, 3)
    ws = Tensor(rng.normal(size=(2, 6, 3)).astype(np.float32))
    ad.gradcheck(lambda d, x2: ad.tsum(ad.scan(d, x2, axis=1) * ws), [decay, drive], h=2e-3)


def test_scan_matches_sequential_loop():
    rng = np.random.default_rng(5)
    for _ in range(20):
        shape = (2, int(rng.integers(1, 64)), 3)
        a = rng.uniform(0, 1, shape).astype(np.float32)
        x = rng.normal(size=shape).astype(np.float32)
        h_par = ad._scan_forward(a, x, 1)
        h_seq = ad.scan_sequential(a, x, 1)
        assert np.abs(h_par - h_seq).max() < 1e-5


def test_tape_topological_order_and_single_visit():
    ad.clear_tape()
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    y = ad.silu(x * 2.0)
    z = ad.tsum(y * y)
    nodes = ad.tape().nodes
    ids = {id(out): i for i, (out, _, _) in enumerate(nodes)}
    for i, (_, parents, _) in enumerate(nodes):
        for p in parents:
            if id(p) in ids:
                assert ids[id(p)] < i
    ad.backward(z)
    assert x.grad is not None and y.grad is not None
    ad.clear_tape()


def test_deterministic_replay():
    def run():
        ad.clear_tape()
        rng = np.random.default_rng(42)
        w = Tensor(rng.normal(size=(8, 8)).astype(np.float32), requires_grad=True)
        x = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
        loss = ad.tmean(ad.silu(ad.matmul(x, w)) ** 2)
        ad.backward(loss)
        g = w.grad.copy()
        ad.clear_tape()
        return float(loss.data), g

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(g1, g2)


# -- optimizer / checkpoint ----------------------------------------------------


def test_adam_first_step_is_lr_sized():
    p = Tensor(np.float32(1.0), requires_grad=True)
    opt = nn.Adam({"p": p}, lr=0.1)
    p.grad = np.float32(1.0)
    opt.step()
    assert float(p.data) == pytest.approx(0.9, abs=1e-6)


def test_adam_zero_grad_no_change():
    p = Tensor(np.float32(1.5), requires_grad=True)
    opt = nn.Adam({"p": p}, lr=0.1)
    p.grad = np.float32(0.0)
    opt.step()
    assert float(p.data) == 1.5
    p.grad = None
    opt.step()
    assert float(p.data) == 1.5


def test_adam_converges_on_quadratic():
    p = Tensor(np.float32(5.0), requires_grad=True)
    opt = nn.Adam({"p": p}, lr=0.1)
    for _ in range(200):
        ad.clear_tape()
        loss = p * p
        ad.backward(loss)
        opt.step()
    assert abs(float(p.data)) < 0.1


def test_adam_halts_on_nan():
    p = Tensor(np.float32(1.0), requires_grad=True)
    opt = nn.Adam({"bad_param": p}, lr=0.1)
    p.grad = np.float32(np.nan)
    with pytest.raises(RuntimeError) as ei:
        opt.step()
    assert "bad_param" in str(ei.value)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.w": Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True),
              "b": Tensor(rng.normal(size=7).astype(np.float32), requires_grad=True)}
    path = tmp_path / "ck.bin"
    nn.save_checkpoint(path, params, {"note": "x"})
    arrays, meta = nn.load_checkpoint(path)
    assert meta["note"] == "x"
    for k, p in params.items():
        np.testing.assert_array_equal(arrays[k], p.data)
    # header is honest json with offsets
    import json
    with open(path, "rb") as f:
        f.seek(4)
        hlen = int(np.frombuffer(f.read(8), np.uint64)[0])
        header = json.loads(f.read(hlen))
    names = [e["name"] for e in header["params"]]
    assert names == sorted(names)
    assert all({"name", "shape", "offset"} <= set(e) for e in header["params"])

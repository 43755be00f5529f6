import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xssm import scan
from xssm.numerics import Tape, Tensor, precision
from xssm.scan import S6Params, discretize, scan_coefficients, selective_scan, ssm_scan
from xssm.scan.bench import attention_reference, doubling_ratios, rows_to_csv

from oracles import naive_scan, softplus


@pytest.fixture(params=scan.available_backends())
def backend(request):
    prev = scan.get_backend()
    scan.set_backend(request.param)
    yield request.param
    scan.set_backend(prev)


def random_instance(rng, L, Din, N):
    return dict(
        u=rng.standard_normal((L, Din)),
        delta=rng.uniform(0.01, 1.0, (L, Din)),
        A=-rng.uniform(0.1, 4.0, (Din, N)),
        B=rng.standard_normal((L, N)),
        C=rng.standard_normal((L, N)),
        D=rng.standard_normal(Din),
    )


def run_scan(inst):
    t = {k: Tensor(v[None] if k in ("u", "delta", "B", "C") else v) for k, v in inst.items()}
    return ssm_scan(t["u"], t["delta"], t["A"], t["B"], t["C"], t["D"]).data[0]


def test_discretize_examples():
    abar, bbar = discretize(np.array([0.5]), np.array([[-2.0]]), np.array([3.0]))
    assert abar[0, 0] == pytest.approx(np.exp(-1.0))
    assert bbar[0, 0] == pytest.approx(1.5)
    # tiny step: Abar -> 1, Bbar -> 0
    abar, bbar = discretize(np.array([1e-12]), np.array([[-5.0]]), np.array([1.0]))
    assert abar[0, 0] == pytest.approx(1.0) and bbar[0, 0] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        discretize(np.array([0.0]), np.array([[-1.0]]), np.array([1.0]))


def test_scan_length_one_is_direct_feedthrough(backend):
    # h_1 = delta*B*u, y_1 = C.h_1 + D u
    inst = dict(u=np.array([[2.0]]), delta=np.array([[0.5]]), A=np.array([[-1.0, -2.0]]),
                B=np.array([[1.0, 3.0]]), C=np.array([[0.5, -1.0]]), D=np.array([0.25]))
    y = run_scan(inst)
    assert y[0, 0] == pytest.approx(0.5 * 2 * (0.5 * 1 - 1 * 3) + 0.25 * 2)


@given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_scan_matches_naive_recurrence(L, Din, N, seed):
    inst = random_instance(np.random.default_rng(seed), L, Din, N)
    expect = naive_scan(**inst)
    for name in scan.available_backends():
        scan.set_backend(name)
        np.testing.assert_allclose(run_scan(inst), expect, atol=1e-10)
    scan.set_backend(scan.available_backends()[0])


def test_backends_agree_on_gradients():
    if len(scan.available_backends()) < 2:
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 17, 3, 4)
    proj = rng.standard_normal((1, 17, 3))
    grads = {}
    for name in scan.available_backends():
        scan.set_backend(name)
        ts = {k: Tensor(v[None] if k in ("u", "delta", "B", "C") else v, requires_grad=True)
              for k, v in inst.items()}
        with Tape() as tape:
            y = ssm_scan(ts["u"], ts["delta"], ts["A"], ts["B"], ts["C"], ts["D"])
            loss = (y * proj).sum()
        tape.backward(loss)
        grads[name] = [ts[k].grad for k in ("u", "delta", "A", "B", "C", "D")]
    scan.set_backend("cython")
    for a, b in zip(grads["cython"], grads["numpy"]):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_scan_float32_close_to_float64():
    inst = random_instance(np.random.default_rng(2), 64, 8, 16)
    y64 = run_scan(inst)
    y32 = run_scan({k: v.astype(np.float32) for k, v in inst.items()})
    assert y32.dtype == np.float32
    np.testing.assert_allclose(y32, y64, atol=1e-4)


def test_ssm_scan_shape_errors():
    u = Tensor(np.zeros((1, 4, 2)))
    with pytest.raises(ValueError):
        ssm_scan(u, u, Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 4, 2))),
                 Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros(2)))
    e = Tensor(np.zeros((1, 0, 2)))
    with pytest.raises(ValueError):
        ssm_scan(e, e, Tensor(np.zeros((2, 2))), Tensor(np.zeros((1, 0, 2))),
                 Tensor(np.zeros((1, 0, 2))), Tensor(np.zeros(2)))


def test_s6_initialization():
    p = S6Params(np.random.default_rng(0), d_inner=16, d_state=16)
    np.testing.assert_allclose(p.A().data, -np.tile(np.arange(1, 17), (16, 1)), rtol=1e-6)
    dt = softplus(p.b_dt.data.astype(np.float64))
    assert np.all(dt >= 1e-3 * (1 - 1e-5)) and np.all(dt <= 1e-1 * (1 + 1e-5))
    np.testing.assert_array_equal(p.D.data, 1.0)


def test_selective_scan_equals_scan_with_projected_coefficients():
    rng = np.random.default_rng(4)
    with precision(np.float64):
        p = S6Params(rng, 4, 5)
        u = Tensor(rng.standard_normal((9, 4)))
        y = selective_scan(u, p)
        delta = softplus(u.data @ p.W_dt.data.T + p.b_dt.data)
        B = u.data @ p.W_B.data.T
        C = u.data @ p.W_C.data.T
        expect = naive_scan(u.data, delta, -np.exp(p.log_A.data), B, C, p.D.data)
    assert y.shape == (9, 4)
    np.testing.assert_allclose(y.data, expect, atol=1e-10)
    d, b, c = scan_coefficients(Tensor(u.data[None]), p)
    assert d.shape == (1, 9, 4) and b.shape == c.shape == (1, 9, 5)
    assert np.all(d.data > 0)


def test_selective_scan_batch_rows_are_independent():
    rng = np.random.default_rng(1)
    p = S6Params(rng, 4, 3)
    u = rng.standard_normal((3, 10, 4)).astype(np.float32)
    batched = selective_scan(Tensor(u), p).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], selective_scan(Tensor(u[i]), p).data, atol=1e-6)
    with pytest.raises(ValueError):
        selective_scan(Tensor(np.zeros((5, 3))), p)


def test_backend_selection():
    assert "numpy" in scan.available_backends()
    with pytest.raises(ValueError):
        scan.set_backend("fortran")


def test_bench_helpers():
    rows = [(1024, 1.0, 2.0), (2048, 2.0, 8.0), (4096, 4.2, 33.0)]
    assert doubling_ratios(rows, 1) == [2.0, 2.1]
    assert doubling_ratios(rows, 2) == [4.0, 4.125]
    assert rows_to_csv(rows).splitlines()[0] == "L,scan_ms,attention_ms"
    x = np.random.default_rng(0).standard_normal((50, 4))
    s = x @ x.T / 2.0
    w = np.exp(s - s.max(1, keepdims=True))
    np.testing.assert_allclose(attention_reference(x, block=16), (w / w.sum(1, keepdims=True)) @ x, atol=1e-12)

import numpy as np
import pytest

from conftest import margin_instance, rel_err_max
from hesslab import hessian as hk
from hesslab.models import forward, softmax
from hesslab.randkit import Dataset, ModelParams, RngStream, gen_gaussian_dataset, lecun_init

SMALL = dict(d=6, m=3, C=4, N=8)


def _instance(kind, label, **kw):
    cfg = {**SMALL, **kw}
    return margin_instance(kind, cfg["d"], cfg["m"], cfg["C"], cfg["N"],
                           RngStream(23, f"hess/{label}"))


def test_linear_mse_offdiagonal_exactly_zero():
    p, ds = _instance("linear", "lmse")
    blk = hk.hessian_block_linear(p, ds, "mse", 0, 1)
    assert np.all(blk.M == 0.0)
    diag = hk.hessian_block_linear(p, ds, "mse", 2, 2)
    assert np.allclose(diag.M, (2.0 / ds.N) * ds.X @ ds.X.T, atol=0)


def test_linear_ce_uniform_probs_closed_form():
    ds = gen_gaussian_dataset(5, 10, 4, RngStream(1, "unif"))
    p = ModelParams(kind="linear", V=np.zeros((4, 5)))
    G = ds.X @ ds.X.T / ds.N
    diag = hk.hessian_block_linear(p, ds, "ce", 1, 1).M
    off = hk.hessian_block_linear(p, ds, "ce", 1, 3).M
    assert rel_err_max(diag, 0.25 * 0.75 * G) < 1e-13
    assert rel_err_max(off, -G / 16.0) < 1e-13


def test_mlp_vv_uniform_probs_closed_form():
    rng = RngStream(2, "vvunif")
    ds = gen_gaussian_dataset(5, 10, 4, rng.child("d"))
    W = rng.child("w").generator().standard_normal((3, 5)) / np.sqrt(5)
    p = ModelParams(kind="mlp", W=W, V=np.zeros((4, 3)))
    _, act = forward(p, ds)
    G = act.A @ act.A.T / ds.N
    off = hk.hessian_block_mlp_vv(p, ds, "ce", 0, 2).M
    assert rel_err_max(off, -G / 16.0) < 1e-13


def test_mlp_mse_vv_offdiagonal_exactly_zero():
    p, ds = _instance("mlp", "mvv")
    assert np.all(hk.hessian_block_mlp_vv(p, ds, "mse", 0, 1).M == 0.0)
    _, act = forward(p, ds)
    diag = hk.hessian_block_mlp_vv(p, ds, "mse", 1, 1).M
    assert np.allclose(diag, (2.0 / ds.N) * act.A @ act.A.T, atol=0)


def test_mlp_ww_ce_equal_rows_vanish():
    p, ds = _instance("mlp", "eqrows")
    V = np.tile(p.V[0], (p.C, 1))  # all class rows identical -> zero variance weights
    q = ModelParams(kind="mlp", W=p.W, V=V)
    scale = float(np.abs(V).max()) ** 2
    for i, j in ((0, 0), (0, 1)):
        M = hk.hessian_block_mlp_ww(q, ds, "ce", i, j).M
        assert np.abs(M).max() < 1e-12 * max(scale, 1.0)


def test_mlp_ww_mse_unit_rows_prefactor():
    p, ds = _instance("mlp", "ones")
    q = ModelParams(kind="mlp", W=p.W, V=np.ones_like(p.V))
    _, act = forward(q, ds)
    got = hk.hessian_block_mlp_ww(q, ds, "mse", 1, 1).M
    ref = 2.0 * q.C * (ds.X * act.mask[1]) @ ds.X.T / ds.N
    assert rel_err_max(got, ref) < 1e-13


@pytest.mark.parametrize("kind,lk", [("linear", "mse"), ("linear", "ce"),
                                     ("mlp", "mse"), ("mlp", "ce")])
def test_closed_forms_match_fd_oracle(kind, lk):
    p, ds = _instance(kind, f"fd-{kind}-{lk}")
    closed = hk.assemble_full_hessian(p, ds, lk).H
    fd = hk.fd_hessian_oracle(p, ds, lk).H
    assert rel_err_max(closed, fd) <= 1e-5


def test_fd_oracle_quadratic_exactness():
    # central differences are exact for quadratics; a larger step only cuts rounding
    p, ds = _instance("linear", "quad")
    closed = hk.assemble_full_hessian(p, ds, "mse").H
    fd = hk.fd_hessian_oracle(p, ds, "mse", step=0.5).H
    assert rel_err_max(closed, fd) <= 1e-9


def test_fd_error_scales_quadratically_in_step():
    # linear CE is smooth (no ReLU), so the h^2 truncation law is visible
    p, ds = _instance("linear", "hh")
    closed = hk.assemble_full_hessian(p, ds, "ce").H
    errs = []
    for h in (4e-3, 2e-3):
        fd = hk.fd_hessian_oracle(p, ds, "ce", step=h).H
        errs.append(np.abs(fd - closed).max())
    ratio = errs[0] / errs[1]
    assert 2.5 < ratio < 6.0


def test_wv_leading_term_single_column():
    p, ds = _instance("mlp", "wvlead")
    for lk in ("mse", "ce"):
        blk = hk.hessian_block_mlp_wv(p, ds, lk, 1, 2, leading_only=True)
        others = np.delete(blk.M, 1, axis=1)
        assert np.all(others == 0.0)
        assert np.abs(blk.M[:, 1]).max() > 0.0


def test_wv_leading_term_vanishes_at_perfect_fit():
    # with m >= N the activations have full column rank, so V = s Y A^+ yields
    # logits exactly s * onehot and p_y -> 1 as s grows
    p, ds = _instance("mlp", "wvfit", m=10, N=6)
    _, act = forward(p, ds)
    lead0 = hk.hessian_block_mlp_wv(p, ds, "ce", 0, 1, leading_only=True).M
    big = ModelParams(kind="mlp", W=p.W, V=40.0 * ds.onehot @ np.linalg.pinv(act.A))
    P = softmax(forward(big, ds)[0]).P
    assert np.abs(P[ds.labels, np.arange(ds.N)] - 1.0).max() < 1e-3
    lead = hk.hessian_block_mlp_wv(big, ds, "ce", 0, 1, leading_only=True).M
    assert np.linalg.norm(lead) < 1e-2 * np.linalg.norm(lead0)


def test_wv_exact_is_leading_plus_second_term():
    p, ds = _instance("mlp", "wv2")
    exact = hk.hessian_block_mlp_wv(p, ds, "ce", 2, 3).M
    lead = hk.hessian_block_mlp_wv(p, ds, "ce", 2, 3, leading_only=True).M
    assert np.linalg.norm(exact - lead) > 0  # the second term is genuinely present


def test_block_transpose_consistency():
    p, ds = _instance("mlp", "sym")
    for lk in ("mse", "ce"):
        for fn, hi in ((hk.hessian_block_mlp_ww, p.m), (hk.hessian_block_mlp_vv, p.C)):
            A = fn(p, ds, lk, 0, 1).M
            B = fn(p, ds, lk, 1, 0).M
            assert rel_err_max(A, B.T) < 1e-12


def test_diagonal_blocks_positive_semidefinite():
    p, ds = _instance("mlp", "psd")
    blocks = [
        hk.hessian_block_mlp_ww(p, ds, "ce", 1, 1).M,
        hk.hessian_block_mlp_vv(p, ds, "ce", 2, 2).M,
        hk.hessian_block_mlp_ww(p, ds, "mse", 0, 0).M,
        hk.hessian_block_mlp_vv(p, ds, "mse", 0, 0).M,
    ]
    for M in blocks:
        evals = np.linalg.eigvalsh(M)
        assert evals.min() >= -1e-8 * max(np.abs(evals).max(), 1e-300)


def test_full_hessian_symmetry_and_norm_additivity():
    p, ds = _instance("mlp", "full", d=16, m=4, C=6, N=20)
    for lk in ("mse", "ce"):
        full = hk.assemble_full_hessian(p, ds, lk)
        H = full.H
        assert np.linalg.norm(H - H.T) <= 1e-10 * np.linalg.norm(H)
        total = 0.0
        for blk in hk.iter_hessian_blocks(p, ds, lk):
            w = 1.0
            if blk.pair_kind == "wv" or blk.i != blk.j:
                w = 2.0  # off-diagonal blocks appear twice in the symmetric matrix
            total += w * hk.block_fro_sq(blk.M)
        assert abs(total - (H * H).sum()) <= 1e-10 * (H * H).sum()


def test_layout_large_config_block_count():
    lay = hk.Layout(kind="mlp", d=500, C=500, m=8)
    assert lay.side == 8 * 500 + 500 * 8 == 8000
    assert lay.n_groups == 508
    assert hk.Layout(kind="linear", d=500, C=500).side == 250000


def test_memory_cap_enforced():
    rng = RngStream(0, "cap")
    ds = gen_gaussian_dataset(500, 10, 500, rng.child("d"))
    p = lecun_init("mlp", 500, 8, 500, rng.child("i"))
    with pytest.raises(hk.MemoryBudgetError):
        hk.assemble_full_hessian(p, ds, "mse", max_side=5000)


def test_scale_covariance_linear_mse():
    p, ds = _instance("linear", "scale")
    blk = hk.hessian_block_linear(p, ds, "mse", 0, 0).M
    ds2 = Dataset(X=2.0 * ds.X, labels=ds.labels, onehot=ds.onehot)
    blk2 = hk.hessian_block_linear(p, ds2, "mse", 0, 0).M
    assert np.array_equal(blk2, 4.0 * blk)


def test_fd_budget_and_kink_guard():
    rng = RngStream(0, "guard")
    ds = gen_gaussian_dataset(40, 10, 30, rng.child("d"))
    p = lecun_init("mlp", 40, 30, 30, rng.child("i"))
    with pytest.raises(hk.BudgetExceededError):
        hk.fd_hessian_oracle(p, ds, "mse", max_params=100)
    q, ds2 = _instance("mlp", "kink")
    bad = ModelParams(kind="mlp", W=q.W.copy(), V=q.V)
    bad.W[0, :] = 0.0  # margin exactly zero
    with pytest.raises(hk.KinkError):
        hk.fd_hessian_oracle(bad, ds2, "mse")


def test_index_out_of_range():
    p, ds = _instance("mlp", "idx")
    with pytest.raises(hk.IndexOutOfRangeError):
        hk.hessian_block_mlp_ww(p, ds, "ce", 0, p.m)
    with pytest.raises(hk.IndexOutOfRangeError):
        hk.hessian_block_mlp_vv(p, ds, "ce", p.C, 0)

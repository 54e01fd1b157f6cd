import numpy as np
import pytest

from hesslab import hessian as hk
from hesslab.randkit import RngStream, gen_gaussian_dataset, lecun_init


@pytest.fixture(scope="session")
def root():
    return RngStream(0, "tests")


def margin_instance(kind, d, m, C, N, stream, min_margin=1e-3):
    """Instance whose pre-activations sit safely away from the ReLU kink."""
    for k in range(200):
        data = gen_gaussian_dataset(d, N, C, stream.child(f"data{k}"))
        params = lecun_init(kind, d, m, C, stream.child(f"init{k}"))
        if kind == "linear" or hk.relu_margin(params, data) > min_margin:
            return params, data
    raise RuntimeError("no kink-free instance found")


def rel_err_max(A, B, floor=1e-10):
    """Max elementwise relative error, ignoring entries tiny on both sides."""
    denom = np.maximum(np.abs(A), np.abs(B))
    mask = denom > floor
    if not mask.any():
        return 0.0
    return float((np.abs(A - B)[mask] / denom[mask]).max())


def monotone_within(values, sigmas, k=3.0):
    """True when the sequence trends monotonically, allowing k-sigma slack per step."""
    direction = 1.0 if values[-1] >= values[0] else -1.0
    for a, b, sa, sb in zip(values, values[1:], sigmas, sigmas[1:]):
        step = direction * (b - a)
        if step < -k * (sa + sb):
            return False
    return True

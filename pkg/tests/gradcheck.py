"""Central finite-difference gradient checker shared by the test suite.

Runs the op in float64, scalarizes its output with a fixed random weight
vector, and compares the analytic input gradient against
(f(x+eps) - f(x-eps)) / (2 eps) elementwise.
"""

from __future__ import annotations

import numpy as np

from fgsearch.substrate import Tensor


def scalarize(out_tensor, weights):
    return float(np.sum(out_tensor.data * weights))


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grad(fn, inputs: dict[str, np.ndarray], wrt: str, seed: int = 0,
               eps: float = 1e-4) -> float:
    """Max relative error between analytic and numeric gradient of
    sum(weights * fn(**inputs)) w.r.t. inputs[wrt].

    fn receives Tensors keyed like inputs and returns a Tensor.
    """
    rng = np.random.default_rng(seed ^ 0x5EED)
    tensors = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=(k == wrt))
               for k, v in inputs.items()}
    out = fn(**tensors)
    weights = rng.standard_normal(out.data.shape)
    out.backward(seed=weights)
    analytic = tensors[wrt].grad.copy()

    x = np.asarray(inputs[wrt], dtype=np.float64)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = scalarize(fn(**{k: Tensor(v.data if k != wrt else x.reshape(x.shape))
                               for k, v in tensors.items()}), weights)
        flat[i] = orig - eps
        minus = scalarize(fn(**{k: Tensor(v.data if k != wrt else x.reshape(x.shape))
                                for k, v in tensors.items()}), weights)
        flat[i] = orig
        num_flat[i] = (plus - minus) / (2 * eps)
    return max_rel_error(analytic, numeric)

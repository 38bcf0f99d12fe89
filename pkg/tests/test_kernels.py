"""Cross-checks between the numba and numpy kernel backends."""

import numpy as np
import pytest

from qac.kernels import BACKEND, load_backend

BACKENDS = {name: load_backend(name) for name in ("numpy", "numba")}


def make_case(seed, B=4, T=9, e=5, h=8, r=2, V=9, dtype=np.float64):
    rng = np.random.default_rng(seed)
    eh, g3 = e + h, 3 * h
    lengths = rng.integers(2, T + 1, B).astype(np.int64)
    lengths[0] = T
    return dict(
        tokens=rng.integers(0, V, (B, T)).astype(np.int32),
        lengths=lengths,
        E=rng.normal(0, 0.4, (V, e)).astype(dtype),
        W=rng.normal(0, 0.4, (eh, g3)).astype(dtype),
        L=rng.normal(0, 0.4, (B, eh, r)).astype(dtype),
        R=rng.normal(0, 0.4, (B, r, g3)).astype(dtype),
        bias=rng.normal(0, 0.4, (B, g3)).astype(dtype),
        ln_gain=(1 + 0.1 * rng.normal(0, 1, (3, h))).astype(dtype),
        ln_bias=(0.1 * rng.normal(0, 1, (3, h))).astype(dtype),
        P=rng.normal(0, 0.4, (h, V)).astype(dtype),
        p_bias=rng.normal(0, 0.1, V).astype(dtype),
        eps=1e-5,
    )


def args_of(case):
    return [case[k] for k in ("tokens", "lengths", "E", "W", "L", "R", "bias",
                              "ln_gain", "ln_bias", "P", "p_bias", "eps")]


GRAD_NAMES = ["nll", "dE", "dW", "dL", "dR", "dbias", "dln_gain", "dln_bias", "dP", "dp_bias"]


class TestBackendAgreement:
    @pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 5e-4)])
    @pytest.mark.parametrize("seed", range(3))
    def test_seq_grads(self, seed, dtype, tol):
        case = make_case(seed, dtype=dtype)
        outs = {name: be.seq_grads(*args_of(case)) for name, be in BACKENDS.items()}
        for label, a, b in zip(GRAD_NAMES, outs["numpy"], outs["numba"]):
            a = np.asarray(a, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            scale = max(1.0, np.abs(a).max())
            assert np.abs(a - b).max() / scale < tol, label

    @pytest.mark.parametrize("seed", range(3))
    def test_seq_nll(self, seed):
        case = make_case(seed)
        n1, s1 = BACKENDS["numpy"].seq_nll(*args_of(case))
        n2, s2 = BACKENDS["numba"].seq_nll(*args_of(case))
        assert np.allclose(n1, n2, rtol=1e-12)
        assert (s1 == s2).all()

    def test_cell_batch(self):
        case = make_case(0)
        rng = np.random.default_rng(5)
        B, eh, h = 6, 13, 8
        xh = rng.normal(0, 0.5, (B, eh))
        c_prev = rng.normal(0, 0.5, (B, h))
        outs = [
            be.cell_batch(xh, case["W"], case["bias"][0], case["ln_gain"],
                          case["ln_bias"], c_prev, 1e-5)
            for be in BACKENDS.values()
        ]
        assert np.allclose(outs[0][0], outs[1][0], atol=1e-12)
        assert np.allclose(outs[0][1], outs[1][1], atol=1e-12)

    def test_zero_rank_matches_between_backends(self):
        case = make_case(1, r=0)
        outs = {name: be.seq_grads(*args_of(case)) for name, be in BACKENDS.items()}
        for label, a, b in zip(GRAD_NAMES, outs["numpy"], outs["numba"]):
            assert np.allclose(a, b, atol=1e-12), label


class TestPaddingExactness:
    """Right-padding must not leak into losses or gradients."""

    @pytest.mark.parametrize("backend", list(BACKENDS))
    def test_padded_batch_equals_per_sequence_sum(self, backend):
        be = BACKENDS[backend]
        case = make_case(3, B=3, T=8)
        batch_out = be.seq_grads(*args_of(case))
        singles = []
        for b in range(3):
            T_b = int(case["lengths"][b])
            sub = dict(case)
            sub["tokens"] = np.ascontiguousarray(case["tokens"][b : b + 1, :T_b])
            sub["lengths"] = case["lengths"][b : b + 1]
            sub["L"] = np.ascontiguousarray(case["L"][b : b + 1])
            sub["R"] = np.ascontiguousarray(case["R"][b : b + 1])
            sub["bias"] = np.ascontiguousarray(case["bias"][b : b + 1])
            singles.append(be.seq_grads(*args_of(sub)))
        # per-sequence outputs (dL, dR, dbias, nll) line up row-wise
        for idx in (0, 3, 4, 5):
            merged = np.concatenate([s[idx] for s in singles], axis=0)
            assert np.allclose(batch_out[idx], merged, atol=1e-10), GRAD_NAMES[idx]
        # shared-tensor gradients add across sequences
        for idx in (1, 2, 6, 7, 8, 9):
            summed = sum(s[idx] for s in singles)
            assert np.allclose(batch_out[idx], summed, atol=1e-10), GRAD_NAMES[idx]

    @pytest.mark.parametrize("backend", list(BACKENDS))
    def test_extra_padding_changes_nothing(self, backend):
        be = BACKENDS[backend]
        case = make_case(4, B=2, T=6)
        base = be.seq_grads(*args_of(case))
        padded = dict(case)
        extra = np.zeros((2, 4), dtype=np.int32)
        padded["tokens"] = np.concatenate([case["tokens"], extra], axis=1)
        out = be.seq_grads(*args_of(padded))
        for label, a, b in zip(GRAD_NAMES, base, out):
            assert np.allclose(a, b, atol=0), label


class TestCellAgainstSequenceKernel:
    @pytest.mark.parametrize("backend", list(BACKENDS))
    def test_stepwise_cell_reproduces_sequence_nll(self, backend):
        be = BACKENDS[backend]
        case = make_case(6, B=1, T=7, r=0)
        tokens, lengths = case["tokens"], case["lengths"]
        nll_kernel, _ = be.seq_nll(*args_of(case))
        e, h = case["E"].shape[1], case["ln_gain"].shape[1]
        hs = np.zeros((1, h))
        c = np.zeros((1, h))
        total = 0.0
        for t in range(int(lengths[0]) - 1):
            xh = np.concatenate([case["E"][tokens[:, t]], hs], axis=1)
            hs, c = be.cell_batch(xh, case["W"], case["bias"][0], case["ln_gain"],
                                  case["ln_bias"], c, case["eps"])
            logits = hs[0] @ case["P"] + case["p_bias"]
            z = np.exp(logits - logits.max())
            total -= np.log(z[tokens[0, t + 1]] / z.sum())
        assert abs(total - nll_kernel[0]) < 1e-9

    def test_active_backend_is_exported(self):
        assert BACKEND in BACKENDS

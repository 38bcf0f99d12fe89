"""Adaptable character LSTM language model.

Three ways of personalizing the recurrent layer, all driven by an m-dim user
embedding u:

- ``unadapted``: shared weights, no user signal.
- ``concat``: the recurrent bias is shifted by V.T @ u (equivalent to
  concatenating u to the input at every step).
- ``factor``: the recurrent weight matrix additionally receives a low-rank
  additive perturbation A(u) built from left/right bases tensors, so the
  effective matrix W' = W + A(u) differs per user. A(u) has rank at most r.

The cell is a single-layer LSTM with coupled input/forget gates and per-block
layer normalization; gate blocks are (input, output, candidate), so the
recurrent matrix has 3h output columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, UnknownUserError

VARIANTS = ("unadapted", "concat", "factor")

#: Gate blocks: input, output, candidate (forget gate is coupled as 1-input).
GATE_BLOCKS = 3


@dataclass
class ModelConfig:
    variant: str = "factor"
    e: int = 24
    h: int = 300
    m: int = 20
    r: int = 40
    vocab_size: int = 79
    ln_epsilon: float = 1e-5
    float_width: int = 32
    # The low-rank variant keeps the bias-adaptation term on top of A(u),
    # strictly generalizing the concat variant. Can be switched off.
    use_bias_adaptation: bool = True

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if min(self.e, self.h, self.m) < 1:
            raise ConfigError("e, h, m must all be >= 1")
        if self.r < 0:
            raise ConfigError("r must be >= 0")
        if self.variant == "factor" and self.r < 1:
            raise ConfigError("factor variant needs rank r >= 1")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover specials plus one char")
        if self.ln_epsilon <= 0:
            raise ConfigError("ln_epsilon must be positive")
        if self.float_width not in (32, 64):
            raise ConfigError("float_width must be 32 or 64")
        return self

    @property
    def dtype(self):
        return np.float32 if self.float_width == 32 else np.float64

    @property
    def gate_dim(self) -> int:
        return GATE_BLOCKS * self.h


@dataclass
class Parameters:
    """All trainable tensors except the user embedding table."""

    E: np.ndarray        # (vocab, e) character embeddings
    W: np.ndarray        # (e+h, 3h) recurrent weights
    b: np.ndarray        # (3h,) recurrent bias
    V: np.ndarray        # (m, 3h) bias adaptation
    Z_L: np.ndarray      # (m, e+h, r) left bases
    Z_R: np.ndarray      # (r, 3h, m) right bases
    ln_gain: np.ndarray  # (3, h)
    ln_bias: np.ndarray  # (3, h)
    P: np.ndarray        # (h, vocab) output projection
    p_bias: np.ndarray   # (vocab,)

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def copy(self) -> "Parameters":
        return Parameters(**{k: v.copy() for k, v in self.tensors().items()})


class UserEmbeddings:
    """Growable k x m table of user embeddings with 1-based user ids.

    Row 1 (``u_1``) is the shared rare-user embedding and the cold-start
    initializer for users spawned at inference time. Each row carries a
    version counter that increments on every write, which downstream weight
    caches key on.
    """

    def __init__(self, U: np.ndarray):
        if U.ndim != 2 or U.shape[0] < 1:
            raise DimensionError("U must be a 2-D array with at least the shared row")
        self._U = np.array(U, copy=True)
        self._versions = [0] * U.shape[0]

    @property
    def k(self) -> int:
        return self._U.shape[0]

    @property
    def m(self) -> int:
        return self._U.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """The live k x m array. Mutate only through row accessors."""
        return self._U

    def _check(self, user_id: int) -> int:
        if not 1 <= user_id <= self.k:
            raise UnknownUserError(f"user id {user_id} not in 1..{self.k}")
        return user_id - 1

    def row(self, user_id: int) -> np.ndarray:
        return self._U[self._check(user_id)].copy()

    def rows(self, user_ids: Sequence[int]) -> np.ndarray:
        idx = np.asarray([self._check(u) for u in user_ids])
        return self._U[idx]

    def set_row(self, user_id: int, value: np.ndarray) -> None:
        i = self._check(user_id)
        self._U[i] = value
        self._versions[i] += 1

    def add_row(self, value: np.ndarray) -> int:
        """Append a row; returns its (1-based) user id."""
        if value.shape != (self.m,):
            raise DimensionError(f"expected row of shape ({self.m},)")
        self._U = np.vstack([self._U, value.astype(self._U.dtype)])
        self._versions.append(0)
        return self.k

    def version(self, user_id: int) -> int:
        return self._versions[self._check(user_id)]

    def copy(self) -> "UserEmbeddings":
        out = UserEmbeddings(self._U)
        out._versions = list(self._versions)
        return out


class CallCounter:
    """Instrumentation for how often adapted weights are materialized."""

    def __init__(self):
        self.count = 0

    def bump(self) -> None:
        self.count += 1

    def reset(self) -> None:
        self.count = 0


#: Global counter bumped once per adapted-weight construction. The decode
#: cache relies on this staying at one per (user, request) while the user's
#: embedding is unchanged.
adaptation_counter = CallCounter()


def init_parameters(
    config: ModelConfig, user_count: int, rng: np.random.Generator
) -> tuple[Parameters, UserEmbeddings]:
    """Seeded initialization.

    Weight matrices draw from uniform(-s, s) with s = 1/sqrt(fan_in); biases
    and the adaptation tensors V, Z_L, Z_R start at zero, so every variant
    initially computes the same function as the unadapted model. Layer-norm
    gains start at 1. User embeddings draw small fan-in-scaled noise rather
    than zeros: with U, V, and Z all zero simultaneously, every adaptation
    gradient is identically zero (each is a product with u or with V/Z) and
    the personalized variants could never leave that saddle point.
    """
    config.validate()
    if user_count < 1:
        raise ConfigError("user_count must be >= 1")
    dt = config.dtype
    e, h, m, r, v = config.e, config.h, config.m, config.r, config.vocab_size
    g = config.gate_dim

    def uniform(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape).astype(dt)

    params = Parameters(
        E=uniform((v, e), e),
        W=uniform((e + h, g), e + h),
        b=np.zeros(g, dtype=dt),
        V=np.zeros((m, g), dtype=dt),
        Z_L=np.zeros((m, e + h, r), dtype=dt),
        Z_R=np.zeros((r, g, m), dtype=dt),
        ln_gain=np.ones((GATE_BLOCKS, h), dtype=dt),
        ln_bias=np.zeros((GATE_BLOCKS, h), dtype=dt),
        P=uniform((h, v), h),
        p_bias=np.zeros(v, dtype=dt),
    )
    users = UserEmbeddings(uniform((user_count, m), m))
    return params, users


def compute_adaptation(u: np.ndarray, Z_L: np.ndarray, Z_R: np.ndarray) -> np.ndarray:
    """Low-rank adaptation matrix A = (u x_1 Z_L)(Z_R x_3 u).

    The mode-1 product contracts u against the first axis of Z_L giving the
    (e+h, r) left factor; the mode-3 product contracts u against the last
    axis of Z_R giving the (r, 3h) right factor. Their product selects a
    user-specific weighted combination of the m rank-r basis matrices.
    """
    if Z_L.ndim != 3 or Z_R.ndim != 3:
        raise DimensionError("Z_L and Z_R must be 3-D tensors")
    if u.shape != (Z_L.shape[0],) or Z_R.shape[2] != u.shape[0]:
        raise DimensionError("user embedding size does not match bases tensors")
    if Z_L.shape[2] != Z_R.shape[0]:
        raise DimensionError("rank axes of Z_L and Z_R disagree")
    left = np.einsum("i,ijr->jr", u, Z_L)
    right = np.einsum("rni,i->rn", Z_R, u)
    return left @ right


def adapted_recurrent_weights(
    params: Parameters, config: ModelConfig, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Dense per-user effective recurrent weights (W_eff, b_eff).

    unadapted -> (W, b); concat -> (W, b + V.T u); factor additionally adds
    the low-rank matrix to W. Bumps the adaptation counter for the adapted
    variants; decode paths must call this at most once per query.
    """
    if config.variant == "unadapted":
        return params.W, params.b
    adaptation_counter.bump()
    if config.variant == "concat":
        return params.W, params.b + u @ params.V
    if config.variant == "factor":
        A = compute_adaptation(u, params.Z_L, params.Z_R)
        b_eff = params.b + u @ params.V if config.use_bias_adaptation else params.b
        return params.W + A, b_eff
    raise ConfigError(f"unknown variant {config.variant!r}")


def user_factors(
    params: Parameters, config: ModelConfig, u_rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row low-rank factors and effective biases for a batch of users.

    Returns (L (B, e+h, r'), R (B, r', 3h), bias (B, 3h)) where r' = 0 for the
    variants that do not adapt the weight matrix. This is the cheap form the
    training kernels consume; ``adapted_recurrent_weights`` is the dense form
    for decoding.
    """
    B = u_rows.shape[0]
    dt = params.W.dtype
    eh, g = params.W.shape
    if config.variant == "factor":
        L = np.einsum("bi,ijr->bjr", u_rows, params.Z_L)
        R = np.einsum("rni,bi->brn", params.Z_R, u_rows)
    else:
        L = np.zeros((B, eh, 0), dtype=dt)
        R = np.zeros((B, 0, g), dtype=dt)
    if config.variant == "concat" or (
        config.variant == "factor" and config.use_bias_adaptation
    ):
        bias = params.b + u_rows @ params.V
    else:
        bias = np.broadcast_to(params.b, (B, g)).astype(dt, copy=True)
    return L, R, bias


def lstm_step(
    state: tuple[np.ndarray, np.ndarray],
    x: np.ndarray,
    W_eff: np.ndarray,
    b_eff: np.ndarray,
    ln_gain: np.ndarray,
    ln_bias: np.ndarray,
    eps: float,
) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray]:
    """Single-example cell step; returns ((h, c), h).

    Thin wrapper over the batched kernel, kept as the readable reference for
    the cell contract.
    """
    h_prev, c_prev = state
    if not (np.isfinite(x).all() and np.isfinite(h_prev).all() and np.isfinite(c_prev).all()):
        raise FloatingPointError("non-finite input to lstm_step")
    xh = np.concatenate([x, h_prev])[None, :]
    h, c = kernels.cell_batch(xh, W_eff, b_eff, ln_gain, ln_bias, c_prev[None, :], eps)
    return (h[0], c[0]), h[0]


def zero_state(config: ModelConfig, batch: int = 1) -> tuple[np.ndarray, np.ndarray]:
    z = np.zeros((batch, config.h), dtype=config.dtype)
    return z, z.copy()


def forward_logits(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    user_id: int,
    token_ids: np.ndarray,
) -> np.ndarray:
    """Per-step next-token logits for one encoded query.

    The adapted weights are materialized exactly once and reused across all
    steps. Output row t predicts token_ids[t+1], so a sequence of T tokens
    yields T-1 rows.
    """
    u = users.row(user_id)
    W_eff, b_eff = adapted_recurrent_weights(params, config, u)
    hs, c = zero_state(config)
    T = len(token_ids)
    out = np.empty((T - 1, config.vocab_size), dtype=config.dtype)
    for t in range(T - 1):
        xh = np.concatenate([params.E[token_ids[t]][None, :], hs], axis=1)
        hs, c = kernels.cell_batch(
            xh, W_eff, b_eff, params.ln_gain, params.ln_bias, c, config.ln_epsilon
        )
        out[t] = hs[0] @ params.P + params.p_bias
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sequence_nll(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    user_id: int,
    token_ids: np.ndarray,
) -> float:
    """Total negative log-likelihood (nats) of one encoded query."""
    logits = forward_logits(params, config, users, user_id, token_ids)
    lp = log_softmax(logits.astype(np.float64))
    rows = np.arange(len(token_ids) - 1)
    return float(-lp[rows, token_ids[1:]].sum())


def batch_nll(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    items: Sequence[tuple[int, np.ndarray]],
) -> tuple[float, int]:
    """Summed NLL and prediction-step count over (user_id, token_ids) pairs.

    Runs through the batched sequence kernel with right-padding.
    """
    if not items:
        raise ValueError("empty dataset")
    total_nll = 0.0
    total_steps = 0
    for start in range(0, len(items), 256):
        chunk = items[start : start + 256]
        tokens, lengths, u_rows = pack_batch(users, chunk, config.dtype)
        L, R, bias = user_factors(params, config, u_rows)
        nll, steps = kernels.seq_nll(
            tokens, lengths, params.E, params.W, L, R, bias,
            params.ln_gain, params.ln_bias, params.P, params.p_bias,
            config.ln_epsilon,
        )
        total_nll += float(nll.sum())
        total_steps += int(steps.sum())
    return total_nll, total_steps


def perplexity(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    items: Sequence[tuple[int, np.ndarray]],
) -> float:
    """exp(total NLL / total prediction steps) over the dataset."""
    total_nll, total_steps = batch_nll(params, config, users, items)
    return float(np.exp(total_nll / total_steps))


def pack_batch(
    users: UserEmbeddings, items: Sequence[tuple[int, np.ndarray]], dtype
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad encoded queries into (tokens, lengths, user_rows)."""
    B = len(items)
    T = max(len(t) for _, t in items)
    tokens = np.zeros((B, T), dtype=np.int32)
    lengths = np.empty(B, dtype=np.int64)
    for i, (_, ids) in enumerate(items):
        tokens[i, : len(ids)] = ids
        lengths[i] = len(ids)
    u_rows = users.rows([uid for uid, _ in items]).astype(dtype, copy=False)
    return tokens, lengths, u_rows

"""Full-model training plus evaluation-time online adaptation.

Training backpropagates through everything (embeddings, recurrent weights,
adaptation tensors, layer-norm parameters, output projection, and the user
embedding table) and applies Adam. Online adaptation is the evaluation-time
protocol: all parameters frozen, one Adadelta step on a single user's
embedding row each time that user selects a query.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .corpus import (
    DEFAULT_RARE_THRESHOLD,
    RARE_USER_ID,
    DatasetSplit,
    Vocabulary,
    UserTable,
    assign_user_ids,
    build_vocabulary,
    encode_query,
)
from .errors import ConfigError, EmptyCorpusError
from .model import (
    ModelConfig,
    Parameters,
    UserEmbeddings,
    init_parameters,
    pack_batch,
    perplexity,
    user_factors,
)


@dataclass
class TrainConfig:
    epochs: int = 6
    adam_lr: float = 1e-3
    batch_size: int = 64
    max_train_chars: int = 40
    seed: int = 0
    gradient_clip: float | None = None
    rare_threshold: int = DEFAULT_RARE_THRESHOLD

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.adam_lr <= 0:
            raise ConfigError("adam_lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        return self


@dataclass
class OnlineConfig:
    """Adadelta settings for per-query embedding updates."""

    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-6


class GradientSet(dict):
    """Named gradients: one entry per Parameters tensor plus ``U``."""

    @property
    def dU(self) -> np.ndarray:
        return self["U"]


def compute_gradients(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    batch: Sequence[tuple[int, np.ndarray]],
) -> tuple[GradientSet, float]:
    """Exact gradients of the mean per-step NLL over a batch.

    ``batch`` is a sequence of (user_id, encoded token ids). The U gradient
    covers the full table; rows of users absent from the batch are zero.
    Returns (gradients, mean per-step NLL).
    """
    if not batch:
        raise EmptyCorpusError("empty batch")
    tokens, lengths, u_rows = pack_batch(users, batch, config.dtype)
    L, R, bias = user_factors(params, config, u_rows)
    (nll, dE, dW, dL, dR, dbias, dln_gain, dln_bias, dP, dp_bias) = kernels.seq_grads(
        tokens, lengths, params.E, params.W, L, R, bias,
        params.ln_gain, params.ln_bias, params.P, params.p_bias,
        config.ln_epsilon,
    )
    total_steps = int((lengths - 1).sum())
    scale = 1.0 / total_steps
    dt = config.dtype

    grads = GradientSet(
        E=dE * scale,
        W=dW * scale,
        b=dbias.sum(axis=0) * scale,
        ln_gain=dln_gain * scale,
        ln_bias=dln_bias * scale,
        P=dP * scale,
        p_bias=dp_bias * scale,
    )

    B = len(batch)
    du = np.zeros((B, config.m), dtype=dt)
    if config.variant == "factor":
        grads["Z_L"] = np.einsum("bi,bjr->ijr", u_rows, dL) * scale
        grads["Z_R"] = np.einsum("brn,bi->rni", dR, u_rows) * scale
        du += np.einsum("ijr,bjr->bi", params.Z_L, dL)
        du += np.einsum("rni,brn->bi", params.Z_R, dR)
    else:
        grads["Z_L"] = np.zeros_like(params.Z_L)
        grads["Z_R"] = np.zeros_like(params.Z_R)
    if config.variant == "concat" or (
        config.variant == "factor" and config.use_bias_adaptation
    ):
        grads["V"] = np.einsum("bi,bn->in", u_rows, dbias) * scale
        du += dbias @ params.V.T
    else:
        grads["V"] = np.zeros_like(params.V)

    dU = np.zeros((users.k, config.m), dtype=dt)
    ids = np.asarray([uid for uid, _ in batch], dtype=np.int64) - 1
    np.add.at(dU, ids, du * scale)
    grads["U"] = dU
    return grads, float(nll.sum()) * scale


class AdamState:
    """Bias-corrected Adam accumulators, one pair of moments per tensor."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    adam: AdamState,
    params: Parameters,
    users: UserEmbeddings,
    grads: GradientSet,
    lr: float,
) -> None:
    """Standard Adam update applied in place to Parameters and U."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}; update rejected")
    adam.step += 1
    bc1 = 1.0 - adam.beta1 ** adam.step
    bc2 = 1.0 - adam.beta2 ** adam.step
    for name, g in grads.items():
        target = users.matrix if name == "U" else getattr(params, name)
        if name not in adam.m:
            adam.m[name] = np.zeros_like(target)
            adam.v[name] = np.zeros_like(target)
        m, v = adam.m[name], adam.v[name]
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + adam.eps)
        target -= (lr * update).astype(target.dtype, copy=False)
        if not np.isfinite(target).all():
            raise FloatingPointError(f"non-finite parameter {name} after update")


def clip_gradients(grads: GradientSet, max_norm: float) -> None:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


class AdadeltaState:
    """Per-user-row Adadelta accumulators, allocated lazily (fresh = zeros)."""

    def __init__(self, rho: float = 0.95, eps: float = 1e-6):
        self.rho = rho
        self.eps = eps
        self.acc_grad: dict[int, np.ndarray] = {}
        self.acc_delta: dict[int, np.ndarray] = {}

    def rows(self, user_id: int, m: int, dtype) -> tuple[np.ndarray, np.ndarray]:
        if user_id not in self.acc_grad:
            self.acc_grad[user_id] = np.zeros(m, dtype=dtype)
            self.acc_delta[user_id] = np.zeros(m, dtype=dtype)
        return self.acc_grad[user_id], self.acc_delta[user_id]

    def reset_row(self, user_id: int) -> None:
        self.acc_grad.pop(user_id, None)
        self.acc_delta.pop(user_id, None)


def spawn_user(users: UserEmbeddings, ada: AdadeltaState | None = None) -> int:
    """Add a row for a user unseen during training, initialized to u_1."""
    uid = users.add_row(users.row(RARE_USER_ID))
    if ada is not None:
        ada.reset_row(uid)
    return uid


def embedding_gradient(
    params: Parameters,
    config: ModelConfig,
    u: np.ndarray,
    token_ids: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Gradient of one query's summed NLL w.r.t. a single embedding row."""
    tokens = np.asarray(token_ids, dtype=np.int32)[None, :]
    lengths = np.array([tokens.shape[1]], dtype=np.int64)
    u_rows = u[None, :].astype(config.dtype, copy=False)
    L, R, bias = user_factors(params, config, u_rows)
    (nll, _dE, _dW, dL, dR, dbias, *_rest) = kernels.seq_grads(
        tokens, lengths, params.E, params.W, L, R, bias,
        params.ln_gain, params.ln_bias, params.P, params.p_bias,
        config.ln_epsilon,
    )
    du = np.zeros(config.m, dtype=config.dtype)
    if config.variant == "factor":
        du += np.einsum("ijr,jr->i", params.Z_L, dL[0])
        du += np.einsum("rni,rn->i", params.Z_R, dR[0])
    if config.variant == "concat" or (
        config.variant == "factor" and config.use_bias_adaptation
    ):
        du += params.V @ dbias[0]
    return du, float(nll[0])


def online_update(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    ada: AdadeltaState,
    user_id: int,
    token_ids: np.ndarray,
    online_lr: float,
) -> float:
    """One Adadelta step on U[user_id] for the selected query.

    Every other tensor is left untouched. Returns the query NLL measured
    before the update.
    """
    u = users.row(user_id)
    du, nll = embedding_gradient(params, config, u, token_ids)
    acc_g, acc_d = ada.rows(user_id, config.m, config.dtype)
    acc_g *= ada.rho
    acc_g += (1.0 - ada.rho) * du * du
    delta = np.sqrt(acc_d + ada.eps) / np.sqrt(acc_g + ada.eps) * du
    acc_d *= ada.rho
    acc_d += (1.0 - ada.rho) * delta * delta
    new_row = u - online_lr * delta
    if not np.isfinite(new_row).all():
        raise FloatingPointError("non-finite embedding after online update")
    users.set_row(user_id, new_row.astype(config.dtype, copy=False))
    return nll


def tune_online_lr(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    candidates: Sequence[float],
    tuning_groups: Sequence[tuple[str, Sequence[np.ndarray]]],
    online: OnlineConfig | None = None,
) -> tuple[float, dict[float, float]]:
    """Pick the online learning rate with the best simulated perplexity.

    Each tuning user is replayed as if unseen: a fresh row spawned from u_1,
    then predict-then-update over their queries in order. Ties go to the
    smaller rate. Returns (best_lr, perplexity per candidate).
    """
    if not candidates:
        raise ConfigError("need at least one candidate learning rate")
    if not tuning_groups:
        raise EmptyCorpusError("empty tuning set")
    online = online or OnlineConfig()
    results: dict[float, float] = {}
    best_lr, best_ppl = None, np.inf
    for lr in sorted(candidates):
        sim_users = users.copy()
        ada = AdadeltaState(rho=online.rho, eps=online.eps)
        total_nll = 0.0
        total_steps = 0
        for _key, queries in tuning_groups:
            uid = spawn_user(sim_users, ada)
            for ids in queries:
                u = sim_users.row(uid)
                _du, nll = embedding_gradient(params, config, u, ids)
                total_nll += nll
                total_steps += len(ids) - 1
                online_update(params, config, sim_users, ada, uid, ids, lr)
        ppl = float(np.exp(total_nll / total_steps))
        results[lr] = ppl
        if ppl < best_ppl - 1e-12:
            best_lr, best_ppl = lr, ppl
    return best_lr, results


@dataclass
class TrainedModel:
    params: Parameters
    users: UserEmbeddings
    user_table: UserTable
    vocab: Vocabulary
    config: ModelConfig
    history: list[dict]


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    splits: DatasetSplit,
    log_fn: Callable[[dict], None] | None = None,
) -> TrainedModel:
    """Minibatch Adam training over the train split.

    Builds the vocabulary (capped at model_cfg.vocab_size) and the user table
    from the training records, then runs seeded shuffled epochs. Validation
    perplexity is measured after every epoch when a valid split exists.
    """
    train_cfg.validate()
    if not splits.train:
        raise EmptyCorpusError("empty training split")
    vocab = build_vocabulary(splits.train, model_cfg.vocab_size)
    model_cfg = replace(model_cfg, vocab_size=len(vocab)).validate()
    table = assign_user_ids(splits.train, train_cfg.rare_threshold)
    rng = np.random.default_rng(train_cfg.seed)
    params, users = init_parameters(model_cfg, table.user_count, rng)

    items = [
        (table.id_for(rec.user_key), encode_query(vocab, rec.text, train_cfg.max_train_chars))
        for rec in splits.train
    ]
    valid_items = [
        (table.id_for(rec.user_key), encode_query(vocab, rec.text))
        for rec in splits.valid
        if rec.user_key in table.ids
    ]

    adam = AdamState()
    shuffle_rng = np.random.default_rng([train_cfg.seed, 1])
    history: list[dict] = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle_rng.permutation(len(items))
        epoch_nll = 0.0
        n_batches = 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [items[i] for i in order[start : start + train_cfg.batch_size]]
            grads, mean_nll = compute_gradients(params, model_cfg, users, batch)
            if train_cfg.gradient_clip is not None:
                clip_gradients(grads, train_cfg.gradient_clip)
            adam_step(adam, params, users, grads, train_cfg.adam_lr)
            epoch_nll += mean_nll
            n_batches += 1
        record = {"epoch": epoch, "train_nll": epoch_nll / max(n_batches, 1)}
        if valid_items:
            record["valid_ppl"] = perplexity(params, model_cfg, users, valid_items)
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return TrainedModel(params, users, table, vocab, model_cfg, history)

"""Neural classifier families built on the ops module.

One class covers the five architectures (cnn, lstm, bilstm, bigru,
bigru_attention) behind a shared contract: forward produces logits from
token-id sequences, backward produces analytic gradients for every
trainable tensor.  Pooling for non-attention recurrent nets is the hidden
state at the last unmasked position; bidirectional sequences are averaged
per timestep before pooling.
"""
from __future__ import annotations

from typing import Any

import numpy as np

from ..features import PAD_ID, UNK_ID
from ..metrics import UndefinedMetricError, roc_auc
from ..rng import derive_rng
from . import ops
from .spec import TrainingError


def _init(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    scale = np.sqrt(6.0 / sum(shape)) if len(shape) > 1 else 0.0
    if scale == 0.0:
        return np.zeros(shape, dtype=dtype)
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


class NeuralNetwork:
    def __init__(self, family: str, vocab_size: int, n_classes: int, head: str,
                 hp: dict[str, Any], seed: int = 0, dtype=np.float32,
                 embedding_matrix: np.ndarray | None = None,
                 freeze_embeddings: bool = False):
        self.family = family
        self.head = head
        self.hp = hp
        self.dtype = dtype
        self.freeze_embeddings = freeze_embeddings
        rng = derive_rng(seed, "init", family)
        d_e = int(hp["embedding_dim"])
        units = int(hp.get("units", 64))
        self.params: dict[str, np.ndarray] = {}
        p = self.params

        if embedding_matrix is not None:
            emb = np.asarray(embedding_matrix, dtype=dtype).copy()
            d_e = emb.shape[1]
        else:
            emb = rng.uniform(-0.05, 0.05, size=(vocab_size, d_e)).astype(dtype)
        emb[PAD_ID] = 0.0  # padding row stays zero, always
        p["emb"] = emb

        if family in ("lstm", "bilstm"):
            gates = 4
        elif family in ("bigru", "bigru_attention"):
            gates = 3
        if family == "lstm":
            p["rnn.W"] = _init(rng, (d_e, gates * units), dtype)
            p["rnn.U"] = _init(rng, (units, gates * units), dtype)
            p["rnn.b"] = np.zeros(gates * units, dtype=dtype)
            pooled_dim = units
        elif family in ("bilstm", "bigru", "bigru_attention"):
            for direction in ("fwd", "bwd"):
                p[f"{direction}.W"] = _init(rng, (d_e, gates * units), dtype)
                p[f"{direction}.U"] = _init(rng, (units, gates * units), dtype)
                p[f"{direction}.b"] = np.zeros(gates * units, dtype=dtype)
            pooled_dim = units
            if family == "bigru_attention":
                d_a = int(hp.get("attention_dim", units))
                p["att.W"] = _init(rng, (units, d_a), dtype)
                p["att.b"] = np.zeros(d_a, dtype=dtype)
                p["att.u"] = _init(rng, (d_a, 1), dtype).reshape(d_a)
        elif family == "cnn":
            widths = [int(w) for w in hp["filter_widths"]]
            n_f = int(hp["filters_per_width"])
            for w in widths:
                p[f"conv{w}.K"] = _init(rng, (n_f, w, d_e), dtype).reshape(n_f, w, d_e)
                p[f"conv{w}.b"] = np.zeros(n_f, dtype=dtype)
            pooled_dim = n_f * len(widths)
        else:
            raise ValueError(f"not a neural family: {family}")

        p["out.W"] = _init(rng, (pooled_dim, n_classes), dtype)
        p["out.b"] = np.zeros(n_classes, dtype=dtype)

    def trainable(self) -> list[str]:
        names = [k for k in self.params if k != "emb" or not self.freeze_embeddings]
        return sorted(names)

    # -- forward ------------------------------------------------------------

    def forward(self, ids: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, dict]:
        p = self.params
        ids = np.asarray(ids, dtype=np.int64)
        mask = (ids != PAD_ID).astype(self.dtype)
        empty = mask.sum(axis=1) == 0
        if empty.any():
            mask[empty, 0] = 1.0  # empty text: process one zero-embedding step
        lengths = mask.sum(axis=1).astype(np.int64)

        if train and self.hp.get("spatial_dropout", 0.0) > 0:
            assert rng is not None
            ids = ops.spatial_word_dropout(ids, float(self.hp["spatial_dropout"]),
                                           rng, unk_id=UNK_ID, pad_id=PAD_ID)

        X = p["emb"][ids]
        cache: dict[str, Any] = {"ids": ids, "mask": mask, "lengths": lengths}

        if self.family == "lstm":
            Hs, c = ops.lstm_seq_forward(X, mask, _sub(p, "rnn"))
            cache["rnn"] = c
            A = Hs
        elif self.family in ("bilstm", "bigru", "bigru_attention"):
            run_fwd = ops.lstm_seq_forward if self.family == "bilstm" else ops.gru_seq_forward
            Hf, cf = run_fwd(X, mask, _sub(p, "fwd"))
            Hb_rev, cb = run_fwd(X[:, ::-1], mask[:, ::-1], _sub(p, "bwd"))
            Hb = Hb_rev[:, ::-1]
            cache["fwd"], cache["bwd"] = cf, cb
            A = ops.bidirectional_combine(Hf, Hb)
        elif self.family == "cnn":
            filters = {int(w): {"K": p[f"conv{w}.K"], "b": p[f"conv{w}.b"]}
                       for w in self.hp["filter_widths"]}
            pooled, c = ops.conv_maxpool_forward(X, lengths, filters)
            cache["conv"] = c

        if self.family == "bigru_attention":
            pooled, _alpha, catt = ops.attention_forward(
                A, mask, {"W": p["att.W"], "b": p["att.b"], "u": p["att.u"]})
            cache["att"] = catt
        elif self.family != "cnn":
            last = lengths - 1
            pooled = A[np.arange(len(ids)), last]
            cache["last"] = last
            cache["A_shape"] = A.shape

        rate = float(self.hp.get("dropout", 0.0))
        if train and rate > 0:
            keep = (rng.random(pooled.shape) >= rate).astype(self.dtype) / (1 - rate)
            pooled = pooled * keep
            cache["drop_mask"] = keep
        cache["pooled"] = pooled
        logits = pooled @ p["out.W"] + p["out.b"]
        return logits, cache

    # -- loss + backward ----------------------------------------------------

    def loss_and_grads(self, ids: np.ndarray, Y: np.ndarray, train: bool = False,
                       rng: np.random.Generator | None = None
                       ) -> tuple[float, dict[str, np.ndarray]]:
        logits, cache = self.forward(ids, train=train, rng=rng)
        Y = np.asarray(Y, dtype=self.dtype)
        B = max(1, logits.shape[0])
        if self.head == "sigmoid_per_class":
            z = logits
            loss = float(np.mean(np.maximum(z, 0) - z * Y + np.log1p(np.exp(-np.abs(z)))))
            dlogits = (ops.sigmoid(z) - Y) / z.size
        else:
            zmax = logits.max(axis=1, keepdims=True)
            logsumexp = zmax + np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True))
            loss = float(np.mean((logsumexp - logits)[Y > 0.5]))
            dlogits = (np.exp(logits - logsumexp) - Y) / B
        grads = self.backward(dlogits.astype(self.dtype), cache)
        return loss, grads

    def backward(self, dlogits: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        p = self.params
        grads: dict[str, np.ndarray] = {}
        pooled = cache["pooled"]
        grads["out.W"] = pooled.T @ dlogits
        grads["out.b"] = dlogits.sum(axis=0)
        dpooled = dlogits @ p["out.W"].T
        if "drop_mask" in cache:
            dpooled = dpooled * cache["drop_mask"]

        ids, mask = cache["ids"], cache["mask"]
        if self.family == "cnn":
            conv_grads, dX = ops.conv_maxpool_backward(dpooled, cache["conv"])
            for w, g in conv_grads.items():
                grads[f"conv{w}.K"] = g["K"]
                grads[f"conv{w}.b"] = g["b"]
        else:
            if self.family == "bigru_attention":
                att_grads, dA = ops.attention_backward(dpooled, cache["att"])
                grads["att.W"], grads["att.b"], grads["att.u"] = (
                    att_grads["W"], att_grads["b"], att_grads["u"])
            else:
                dA = np.zeros(cache["A_shape"], dtype=self.dtype)
                dA[np.arange(len(ids)), cache["last"]] = dpooled
            if self.family == "lstm":
                rnn_grads, dX = ops.lstm_seq_backward(dA, cache["rnn"])
                for k, v in rnn_grads.items():
                    grads[f"rnn.{k}"] = v
            else:
                run_bwd = (ops.lstm_seq_backward if self.family == "bilstm"
                           else ops.gru_seq_backward)
                dHf = 0.5 * dA
                dHb_rev = (0.5 * dA)[:, ::-1]
                fwd_grads, dXf = run_bwd(dHf, cache["fwd"])
                bwd_grads, dXb_rev = run_bwd(dHb_rev, cache["bwd"])
                dX = dXf + dXb_rev[:, ::-1]
                for k, v in fwd_grads.items():
                    grads[f"fwd.{k}"] = v
                for k, v in bwd_grads.items():
                    grads[f"bwd.{k}"] = v

        if not self.freeze_embeddings:
            demb = np.zeros_like(p["emb"])
            np.add.at(demb, ids, dX)
            demb[PAD_ID] = 0.0
            grads["emb"] = demb
        return grads

    # -- inference ----------------------------------------------------------

    def predict_proba(self, ids: np.ndarray, batch_size: int = 256) -> np.ndarray:
        outs = []
        for start in range(0, len(ids), batch_size):
            logits, _ = self.forward(ids[start:start + batch_size], train=False)
            if self.head == "sigmoid_per_class":
                outs.append(ops.sigmoid(logits))
            else:
                zmax = logits.max(axis=1, keepdims=True)
                ex = np.exp(logits - zmax)
                outs.append(ex / ex.sum(axis=1, keepdims=True))
        if not outs:
            return np.zeros((0, self.params["out.b"].shape[0]))
        return np.vstack(outs).astype(np.float64)


def _sub(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {"W": params[f"{prefix}.W"], "U": params[f"{prefix}.U"], "b": params[f"{prefix}.b"]}


class Adam:
    def __init__(self, param_names: list[str], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0
        self.names = param_names

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name in self.names:
            if name not in grads:
                continue
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_network(net: NeuralNetwork, X_train: np.ndarray, Y_train: np.ndarray,
                  X_val: np.ndarray, Y_val: np.ndarray, hp: dict[str, Any],
                  seed: int) -> list[dict[str, Any]]:
    """Adam training with early stopping on validation AUC (patience rounds).

    Mutates net.params in place; returns the per-epoch training log.
    """
    optimizer = Adam(net.trainable(), lr=float(hp["learning_rate"]))
    batch_size = int(hp["batch_size"])
    epochs = int(hp["epochs"])
    patience = hp.get("patience", 1)
    log: list[dict[str, Any]] = []
    best_metric, best_params, since_best = -np.inf, None, 0
    shuffle_rng = derive_rng(seed, "batches")
    dropout_rng = derive_rng(seed, "dropout")

    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(X_train))
        epoch_loss, n_batches = 0.0, 0
        for b, start in enumerate(range(0, len(X_train), batch_size)):
            idx = order[start:start + batch_size]
            loss, grads = net.loss_and_grads(X_train[idx], Y_train[idx],
                                             train=True, rng=dropout_rng)
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged (loss={loss})",
                                    epoch=epoch, batch=b)
            optimizer.step(net.params, grads)
            net.params["emb"][PAD_ID] = 0.0
            epoch_loss += loss
            n_batches += 1
        val_metric = _validation_auc(net, X_val, Y_val)
        log.append({"epoch": epoch, "train_loss": epoch_loss / max(1, n_batches),
                    "val_auc": val_metric})
        if val_metric > best_metric:
            best_metric = val_metric
            best_params = {k: v.copy() for k, v in net.params.items()}
            since_best = 0
        else:
            since_best += 1
            if patience is not None and since_best > patience:
                break
    if best_params is not None:
        net.params = best_params
    return log


def _validation_auc(net: NeuralNetwork, X_val: np.ndarray, Y_val: np.ndarray) -> float:
    if len(X_val) == 0:
        return 0.0
    scores = net.predict_proba(X_val)
    aucs = []
    for j in range(Y_val.shape[1]):
        try:
            aucs.append(roc_auc(scores[:, j], Y_val[:, j]))
        except UndefinedMetricError:
            continue
    return float(np.mean(aucs)) if aucs else 0.0

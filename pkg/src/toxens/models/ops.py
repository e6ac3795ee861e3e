"""Recurrent cells, pooling, and convolution with hand-written backward passes.

Conventions:
  - batch-first arrays: X is (B, T, d_in), hidden sequences are (B, T, H);
  - masks are float arrays (B, T) with 1.0 at real tokens and 0.0 at padding;
  - masked timesteps carry the previous state through unchanged, so trailing
    padding never alters the state at the last real token;
  - LSTM gate order is [input, forget, output, candidate]; GRU gate order is
    [update, reset, candidate] with h = z*h_prev + (1-z)*n and the reset gate
    applied to the recurrent term of the candidate.

Every forward returns a cache consumed by the matching backward.  The
backward passes are certified against central finite differences by the
gradient-check harness.
"""
from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# single-step cells (the vector-level contract; sequence code reuses the math)
# ---------------------------------------------------------------------------

def lstm_cell(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              params: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step. params: W (d_x,4H), U (H,4H), b (4H,)."""
    H = h_prev.shape[-1]
    a = x @ params["W"] + h_prev @ params["U"] + params["b"]
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    o = sigmoid(a[..., 2 * H:3 * H])
    g = np.tanh(a[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def gru_cell(x: np.ndarray, h_prev: np.ndarray,
             params: dict[str, np.ndarray]) -> np.ndarray:
    """One GRU step. params: W (d_x,3H), U (H,3H), b (3H,)."""
    H = h_prev.shape[-1]
    W, U, b = params["W"], params["U"], params["b"]
    zr = x @ W[:, :2 * H] + h_prev @ U[:, :2 * H] + b[:2 * H]
    z = sigmoid(zr[..., :H])
    r = sigmoid(zr[..., H:])
    n = np.tanh(x @ W[:, 2 * H:] + r * (h_prev @ U[:, 2 * H:]) + b[2 * H:])
    return z * h_prev + (1.0 - z) * n


# ---------------------------------------------------------------------------
# sequence-level LSTM
# ---------------------------------------------------------------------------

def lstm_seq_forward(X: np.ndarray, mask: np.ndarray,
                     params: dict[str, np.ndarray]) -> tuple[np.ndarray, dict]:
    B, T, _ = X.shape
    H = params["U"].shape[0]
    dtype = X.dtype
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    Hs = np.zeros((B, T, H), dtype=dtype)
    cache = {"X": X, "mask": mask, "params": params, "steps": []}
    for t in range(T):
        a = X[:, t] @ params["W"] + h @ params["U"] + params["b"]
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        o = sigmoid(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c_hat = f * c + i * g
        tc = np.tanh(c_hat)
        h_hat = o * tc
        m = mask[:, t:t + 1]
        h_new = m * h_hat + (1 - m) * h
        c_new = m * c_hat + (1 - m) * c
        cache["steps"].append({"i": i, "f": f, "o": o, "g": g, "c_prev": c,
                               "h_prev": h, "tc": tc, "m": m})
        h, c = h_new, c_new
        Hs[:, t] = h
    return Hs, cache


def lstm_seq_backward(dHs: np.ndarray, cache: dict) -> tuple[dict[str, np.ndarray], np.ndarray]:
    X, mask, params = cache["X"], cache["mask"], cache["params"]
    B, T, _ = X.shape
    H = params["U"].shape[0]
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dX = np.zeros_like(X)
    dh = np.zeros((B, H), dtype=X.dtype)
    dc = np.zeros((B, H), dtype=X.dtype)
    for t in reversed(range(T)):
        s = cache["steps"][t]
        m = s["m"]
        dh_total = dHs[:, t] + dh
        dh_hat = m * dh_total
        dh_carry = (1 - m) * dh_total
        dc_hat = m * dc + dh_hat * s["o"] * (1 - s["tc"] ** 2)
        dc_carry = (1 - m) * dc
        do = dh_hat * s["tc"]
        di = dc_hat * s["g"]
        df = dc_hat * s["c_prev"]
        dg = dc_hat * s["i"]
        da = np.concatenate([
            di * s["i"] * (1 - s["i"]),
            df * s["f"] * (1 - s["f"]),
            do * s["o"] * (1 - s["o"]),
            dg * (1 - s["g"] ** 2),
        ], axis=1)
        grads["W"] += X[:, t].T @ da
        grads["U"] += s["h_prev"].T @ da
        grads["b"] += da.sum(axis=0)
        dX[:, t] = da @ params["W"].T
        dh = dh_carry + da @ params["U"].T
        dc = dc_carry + dc_hat * s["f"]
    return grads, dX


# ---------------------------------------------------------------------------
# sequence-level GRU
# ---------------------------------------------------------------------------

def gru_seq_forward(X: np.ndarray, mask: np.ndarray,
                    params: dict[str, np.ndarray]) -> tuple[np.ndarray, dict]:
    B, T, _ = X.shape
    H = params["U"].shape[0]
    W, U, b = params["W"], params["U"], params["b"]
    h = np.zeros((B, H), dtype=X.dtype)
    Hs = np.zeros((B, T, H), dtype=X.dtype)
    cache = {"X": X, "mask": mask, "params": params, "steps": []}
    for t in range(T):
        x = X[:, t]
        zr = x @ W[:, :2 * H] + h @ U[:, :2 * H] + b[:2 * H]
        z = sigmoid(zr[:, :H])
        r = sigmoid(zr[:, H:])
        hUn = h @ U[:, 2 * H:]
        n = np.tanh(x @ W[:, 2 * H:] + r * hUn + b[2 * H:])
        h_hat = z * h + (1 - z) * n
        m = mask[:, t:t + 1]
        h_new = m * h_hat + (1 - m) * h
        cache["steps"].append({"z": z, "r": r, "n": n, "hUn": hUn, "h_prev": h, "m": m})
        h = h_new
        Hs[:, t] = h
    return Hs, cache


def gru_seq_backward(dHs: np.ndarray, cache: dict) -> tuple[dict[str, np.ndarray], np.ndarray]:
    X, params = cache["X"], cache["params"]
    B, T, _ = X.shape
    H = params["U"].shape[0]
    W, U = params["W"], params["U"]
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dX = np.zeros_like(X)
    dh = np.zeros((B, H), dtype=X.dtype)
    for t in reversed(range(T)):
        s = cache["steps"][t]
        m = s["m"]
        dh_total = dHs[:, t] + dh
        dh_hat = m * dh_total
        dh_prev = (1 - m) * dh_total + dh_hat * s["z"]
        dz = dh_hat * (s["h_prev"] - s["n"])
        dn = dh_hat * (1 - s["z"])
        dn_pre = dn * (1 - s["n"] ** 2)
        dr = dn_pre * s["hUn"]
        dzr = np.concatenate([dz * s["z"] * (1 - s["z"]), dr * s["r"] * (1 - s["r"])], axis=1)
        grads["W"][:, :2 * H] += X[:, t].T @ dzr
        grads["W"][:, 2 * H:] += X[:, t].T @ dn_pre
        grads["U"][:, :2 * H] += s["h_prev"].T @ dzr
        grads["U"][:, 2 * H:] += s["h_prev"].T @ (dn_pre * s["r"])
        grads["b"][:2 * H] += dzr.sum(axis=0)
        grads["b"][2 * H:] += dn_pre.sum(axis=0)
        dX[:, t] = dzr @ W[:, :2 * H].T + dn_pre @ W[:, 2 * H:].T
        dh = dh_prev + dzr @ U[:, :2 * H].T + (dn_pre * s["r"]) @ U[:, 2 * H:].T
    return grads, dX


# ---------------------------------------------------------------------------
# bidirectional combination
# ---------------------------------------------------------------------------

def bidirectional_combine(h_forward: np.ndarray, h_backward: np.ndarray) -> np.ndarray:
    """Elementwise mean of forward and (already realigned) backward sequences."""
    if h_forward.shape != h_backward.shape:
        raise ValueError(
            f"bidirectional shape mismatch: {h_forward.shape} vs {h_backward.shape}"
        )
    return 0.5 * (h_forward + h_backward)


# ---------------------------------------------------------------------------
# attention pooling
# ---------------------------------------------------------------------------

def attention_forward(Hs: np.ndarray, mask: np.ndarray,
                      params: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray, dict]:
    """u_t = tanh(h_t W + b); alpha = masked softmax(u_t . u_ctx); pooled = sum alpha h_t.

    Returns (pooled (B,H), alpha (B,T), cache).
    """
    if (mask.sum(axis=1) == 0).any():
        raise ValueError("attention_pool: a sequence has all positions masked")
    Ut = np.tanh(Hs @ params["W"] + params["b"])
    scores = Ut @ params["u"]
    scores = np.where(mask > 0, scores, -np.inf)
    scores_max = scores.max(axis=1, keepdims=True)
    ex = np.where(mask > 0, np.exp(scores - scores_max), 0.0)
    alpha = ex / ex.sum(axis=1, keepdims=True)
    pooled = np.einsum("bt,bth->bh", alpha, Hs)
    cache = {"Hs": Hs, "Ut": Ut, "alpha": alpha, "params": params}
    return pooled, alpha, cache


def attention_backward(dpooled: np.ndarray, cache: dict) -> tuple[dict[str, np.ndarray], np.ndarray]:
    Hs, Ut, alpha, params = cache["Hs"], cache["Ut"], cache["alpha"], cache["params"]
    dalpha = np.einsum("bh,bth->bt", dpooled, Hs)
    dHs = alpha[:, :, None] * dpooled[:, None, :]
    dscores = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    dUt = dscores[:, :, None] * params["u"][None, None, :]
    du_ctx = np.einsum("bt,bta->a", dscores, Ut)
    dpre = dUt * (1 - Ut ** 2)
    grads = {
        "W": np.einsum("bth,bta->ha", Hs, dpre),
        "b": dpre.sum(axis=(0, 1)),
        "u": du_ctx,
    }
    dHs += dpre @ params["W"].T
    return grads, dHs


def attention_pool(Hs: np.ndarray, mask: np.ndarray,
                   params: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    pooled, alpha, _ = attention_forward(Hs, mask, params)
    return pooled, alpha


# ---------------------------------------------------------------------------
# convolution + max-over-time pooling
# ---------------------------------------------------------------------------

def conv_maxpool_forward(X: np.ndarray, lengths: np.ndarray,
                         filters: dict[int, dict[str, np.ndarray]]) -> tuple[np.ndarray, dict]:
    """Per width w: ReLU(conv_w) then max over valid windows; concat widths.

    filters[w] = {"K": (n_f, w, d_in), "b": (n_f,)}.  A window at position p
    is valid when p + w <= max(length, w); sequences shorter than w see
    zero-padded windows, so every sample has at least one valid window.
    """
    B, T, _ = X.shape
    pieces, cache = [], {"X": X, "lengths": lengths, "filters": filters, "per_width": {}}
    for w in sorted(filters):
        K, b = filters[w]["K"], filters[w]["b"]
        n_f = K.shape[0]
        P = T - w + 1
        if P < 1:
            raise ValueError(f"sequence length {T} shorter than filter width {w}")
        C = np.zeros((B, P, n_f), dtype=X.dtype)
        for j in range(w):
            C += X[:, j:j + P, :] @ K[:, j, :].T
        A = np.maximum(C + b, 0.0)
        valid = np.arange(P)[None, :] < np.maximum(lengths, w)[:, None] - w + 1
        A_masked = np.where(valid[:, :, None], A, -np.inf)
        argmax = A_masked.argmax(axis=1)  # (B, n_f)
        feat = np.take_along_axis(A_masked, argmax[:, None, :], axis=1)[:, 0, :]
        pieces.append(feat)
        cache["per_width"][w] = {"C": C, "argmax": argmax, "valid": valid}
    return np.concatenate(pieces, axis=1), cache


def conv_maxpool_backward(dfeat: np.ndarray, cache: dict) -> tuple[dict, np.ndarray]:
    X, filters = cache["X"], cache["filters"]
    B = X.shape[0]
    grads: dict[int, dict[str, np.ndarray]] = {}
    dX = np.zeros_like(X)
    col = 0
    rows = np.arange(B)
    for w in sorted(filters):
        K, b = filters[w]["K"], filters[w]["b"]
        n_f = K.shape[0]
        per = cache["per_width"][w]
        dpiece = dfeat[:, col:col + n_f]
        col += n_f
        dK = np.zeros_like(K)
        db = np.zeros_like(b)
        for f in range(n_f):
            p = per["argmax"][:, f]
            pre = per["C"][rows, p, f] + b[f]
            dpre = dpiece[:, f] * (pre > 0)
            db[f] = dpre.sum()
            for j in range(w):
                dK[f, j] += dpre @ X[rows, p + j, :]
                np.add.at(dX, (rows, p + j), np.outer(dpre, K[f, j]))
        grads[w] = {"K": dK, "b": db}
    return grads, dX


def conv_maxpool(X: np.ndarray, lengths: np.ndarray,
                 filters: dict[int, dict[str, np.ndarray]]) -> np.ndarray:
    feat, _ = conv_maxpool_forward(X, lengths, filters)
    return feat


# ---------------------------------------------------------------------------
# spatial word dropout (operates on id sequences, before embedding)
# ---------------------------------------------------------------------------

def spatial_word_dropout(ids: np.ndarray, rate: float, rng: np.random.Generator,
                         unk_id: int = 1, pad_id: int = 0,
                         training: bool = True) -> np.ndarray:
    """Randomly replace non-padding ids with the unknown id (training only)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0,1)")
    if not training or rate == 0.0:
        return ids
    drop = (rng.random(ids.shape) < rate) & (ids != pad_id)
    return np.where(drop, unk_id, ids)

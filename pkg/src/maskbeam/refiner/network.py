"""Bidirectional recurrent mask cleaner with exact analytic gradients.

The network maps per-frame inputs [features(F); mask logits(F)] through a
stack of bidirectional LSTM layers (directions merged by averaging), one
inverted-dropout stage, and a dense sigmoid head producing an (F, T) mask.
Everything is plain numpy, time-major batched: activations have shape
(T, B, units). Gradients are exact derivatives of the computed loss under a
fixed dropout realization, which makes them checkable against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class LstmWeights:
    """One direction of one layer. Gate order along the last axis: i, f, g, o."""

    w_in: np.ndarray  # (D, 4H)
    w_rec: np.ndarray  # (H, 4H)
    bias: np.ndarray  # (4H,)

    @property
    def hidden(self):
        return self.w_rec.shape[0]


@dataclass(frozen=True)
class BiLstmLayer:
    fwd: LstmWeights
    bwd: LstmWeights


@dataclass(frozen=True)
class RefinerParams:
    layers: tuple  # of BiLstmLayer
    out_w: np.ndarray  # (H, F)
    out_b: np.ndarray  # (F,)
    dropout_rate: float = 0.5
    l2_coefficient: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be nonnegative")
        d = self.layers[0].fwd.w_in.shape[0]
        for i, layer in enumerate(self.layers):
            for direction in (layer.fwd, layer.bwd):
                h = direction.hidden
                if direction.w_in.shape != (d, 4 * h) or direction.bias.shape != (4 * h,):
                    raise ValueError(f"layer {i} weight shapes do not chain")
            if layer.fwd.hidden != layer.bwd.hidden:
                raise ValueError(f"layer {i} directions must have equal size to merge")
            d = layer.fwd.hidden
        if self.out_w.shape[0] != d:
            raise ValueError("output layer does not match the last recurrent layer")

    @property
    def freq_count(self):
        return self.out_w.shape[1]

    @property
    def input_dim(self):
        return self.layers[0].fwd.w_in.shape[0]

    def tensors(self):
        """Ordered name -> array mapping of every trainable tensor."""
        out = {}
        for i, layer in enumerate(self.layers):
            for tag, direction in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                out[f"layer{i}.{tag}.w_in"] = direction.w_in
                out[f"layer{i}.{tag}.w_rec"] = direction.w_rec
                out[f"layer{i}.{tag}.bias"] = direction.bias
        out["out.w"] = self.out_w
        out["out.b"] = self.out_b
        return out

    def with_tensors(self, tensors) -> "RefinerParams":
        """Rebuild params from a name -> array mapping (same structure)."""
        layers = []
        for i in range(len(self.layers)):
            directions = {}
            for tag in ("fwd", "bwd"):
                directions[tag] = LstmWeights(
                    w_in=tensors[f"layer{i}.{tag}.w_in"],
                    w_rec=tensors[f"layer{i}.{tag}.w_rec"],
                    bias=tensors[f"layer{i}.{tag}.bias"],
                )
            layers.append(BiLstmLayer(fwd=directions["fwd"], bwd=directions["bwd"]))
        return replace(self, layers=tuple(layers), out_w=tensors["out.w"], out_b=tensors["out.b"])


def init_params(freq_count, hidden=64, n_layers=2, dropout_rate=0.5,
                l2_coefficient=0.0, rng=None) -> RefinerParams:
    """Small uniform init scaled by fan-in; forget-gate bias starts at 1."""
    if rng is None:
        rng = np.random.default_rng(0)

    def direction(d, h):
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0
        return LstmWeights(
            w_in=rng.uniform(-1, 1, (d, 4 * h)) / np.sqrt(d),
            w_rec=rng.uniform(-1, 1, (h, 4 * h)) / np.sqrt(h),
            bias=bias,
        )

    layers = []
    d = 2 * freq_count
    for _ in range(n_layers):
        layers.append(BiLstmLayer(fwd=direction(d, hidden), bwd=direction(d, hidden)))
        d = hidden
    out_w = rng.uniform(-1, 1, (hidden, freq_count)) / np.sqrt(hidden)
    return RefinerParams(
        layers=tuple(layers),
        out_w=out_w,
        out_b=np.zeros(freq_count),
        dropout_rate=dropout_rate,
        l2_coefficient=l2_coefficient,
    )


# ---------------------------------------------------------------------------
# Forward / backward passes
# ---------------------------------------------------------------------------


def _lstm_forward(x, w: LstmWeights):
    """Run one direction over time-major input (T, B, D).

    Returns the hidden sequence (T, B, H) and the cache needed for backprop.
    """
    t_len, batch, _ = x.shape
    h = w.hidden
    hs = np.zeros((t_len, batch, h))
    cache = {
        "x": x,
        "gates": np.zeros((t_len, batch, 4 * h)),
        "c": np.zeros((t_len, batch, h)),
        "tanh_c": np.zeros((t_len, batch, h)),
        "h_prev": np.zeros((t_len, batch, h)),
        "c_prev": np.zeros((t_len, batch, h)),
    }
    h_t = np.zeros((batch, h))
    c_t = np.zeros((batch, h))
    for t in range(t_len):
        cache["h_prev"][t] = h_t
        cache["c_prev"][t] = c_t
        pre = x[t] @ w.w_in + h_t @ w.w_rec + w.bias
        i = _sigmoid(pre[:, :h])
        f = _sigmoid(pre[:, h : 2 * h])
        g = np.tanh(pre[:, 2 * h : 3 * h])
        o = _sigmoid(pre[:, 3 * h :])
        c_t = f * c_t + i * g
        tc = np.tanh(c_t)
        h_t = o * tc
        gates = cache["gates"][t]
        gates[:, :h] = i
        gates[:, h : 2 * h] = f
        gates[:, 2 * h : 3 * h] = g
        gates[:, 3 * h :] = o
        cache["c"][t] = c_t
        cache["tanh_c"][t] = tc
        hs[t] = h_t
    return hs, cache


def _lstm_backward(dh_seq, w: LstmWeights, cache):
    """Backprop one direction. Returns (dx, dw_in, dw_rec, dbias)."""
    x = cache["x"]
    t_len, batch, d = x.shape
    h = w.hidden
    dw_in = np.zeros_like(w.w_in)
    dw_rec = np.zeros_like(w.w_rec)
    dbias = np.zeros_like(w.bias)
    dx = np.zeros_like(x)
    dh_next = np.zeros((batch, h))
    dc_next = np.zeros((batch, h))
    for t in range(t_len - 1, -1, -1):
        gates = cache["gates"][t]
        i = gates[:, :h]
        f = gates[:, h : 2 * h]
        g = gates[:, 2 * h : 3 * h]
        o = gates[:, 3 * h :]
        tc = cache["tanh_c"][t]
        dh = dh_seq[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc**2) + dc_next
        di = dc * g
        df = dc * cache["c_prev"][t]
        dg = dc * i
        dc_next = dc * f
        dpre = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g**2),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dw_in += x[t].T @ dpre
        dw_rec += cache["h_prev"][t].T @ dpre
        dbias += dpre.sum(axis=0)
        dx[t] = dpre @ w.w_in.T
        dh_next = dpre @ w.w_rec.T
    return dx, dw_in, dw_rec, dbias


def _stack_inputs(features, logit_mask):
    """Concatenate (B?, F, T) feature/logit planes into time-major (T, B, 2F)."""
    features = np.asarray(features, dtype=np.float64)
    logit_mask = np.asarray(logit_mask, dtype=np.float64)
    if features.shape != logit_mask.shape:
        raise ValueError(
            f"shape mismatch: features {features.shape}, logit mask {logit_mask.shape}"
        )
    batched = features.ndim == 3
    if not batched:
        features = features[None]
        logit_mask = logit_mask[None]
    stacked = np.concatenate([features, logit_mask], axis=1)  # (B, 2F, T)
    return stacked.transpose(2, 0, 1), batched


def _dropout_mask(shape, rate, rng):
    if rate == 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


def _forward_pass(features, logit_mask, params: RefinerParams, mode, rng):
    """Shared forward machinery; returns (pre-sigmoid output, caches)."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng (or seed) for dropout")
    x, batched = _stack_inputs(features, logit_mask)
    if x.shape[2] != params.input_dim:
        raise ValueError(
            f"input dim {x.shape[2]} does not match network input {params.input_dim}"
        )
    caches = []
    for layer in params.layers:
        h_fwd, cache_fwd = _lstm_forward(x, layer.fwd)
        h_bwd_rev, cache_bwd = _lstm_forward(x[::-1], layer.bwd)
        x = 0.5 * (h_fwd + h_bwd_rev[::-1])
        caches.append((cache_fwd, cache_bwd))
    if mode == "train":
        dmask = _dropout_mask(x.shape, params.dropout_rate, rng)
    else:
        dmask = None
    dropped = x * dmask if dmask is not None else x
    z = dropped @ params.out_w + params.out_b  # (T, B, F)
    return z, {"caches": caches, "dropped": dropped, "dmask": dmask, "batched": batched}


def _as_rng(rng_or_seed):
    if rng_or_seed is None or isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return np.random.default_rng(rng_or_seed)


def forward(features, logit_mask, params: RefinerParams, mode="infer", rng=None,
            return_preactivation=False):
    """Predict a mask for (F, T) inputs, or a batch of (B, F, T) inputs.

    infer mode is deterministic; train mode applies inverted dropout drawn
    from `rng` (a seed or Generator). Outputs are strictly inside (0, 1).
    """
    z, state = _forward_pass(features, logit_mask, params, mode, _as_rng(rng))
    out = _sigmoid(z) if not return_preactivation else z
    out = out.transpose(1, 2, 0)  # (B, F, T)
    return out if state["batched"] else out[0]


def loss(pred, target, params: RefinerParams):
    """Mean binary cross-entropy plus L2 on the dense output weights."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}")
    clipped = np.clip(pred, 1e-12, 1.0 - 1e-12)
    bce = -np.mean(target * np.log(clipped) + (1.0 - target) * np.log(1.0 - clipped))
    return float(bce + params.l2_coefficient * np.sum(params.out_w**2))


def gradients(features, logit_mask, target, params: RefinerParams, rng=None,
              mode="train", loss_scale=1.0):
    """Exact gradients of loss(forward(...), target) for a fixed dropout draw.

    Returns (loss value, dict of gradients keyed like params.tensors()).
    """
    rng = _as_rng(rng)
    z, state = _forward_pass(features, logit_mask, params, mode, rng)
    pred = _sigmoid(z)
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 2:
        target = target[None]
    target_tm = target.transpose(2, 0, 1)  # (T, B, F)
    if target_tm.shape != pred.shape:
        raise ValueError(f"target shape {target.shape} does not match prediction")

    value = loss(pred, target_tm, params) * loss_scale
    n_bins = pred.size
    dz = loss_scale * (pred - target_tm) / n_bins  # (T, B, F)

    grads = {}
    t_len, batch, _ = dz.shape
    dropped_flat = state["dropped"].reshape(t_len * batch, -1)
    dz_flat = dz.reshape(t_len * batch, -1)
    grads["out.w"] = dropped_flat.T @ dz_flat + loss_scale * 2.0 * params.l2_coefficient * params.out_w
    grads["out.b"] = dz_flat.sum(axis=0)
    dx = dz @ params.out_w.T  # (T, B, H)
    if state["dmask"] is not None:
        dx = dx * state["dmask"]
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        cache_fwd, cache_bwd = state["caches"][i]
        dmerged = 0.5 * dx
        dx_fwd, dwi_f, dwr_f, db_f = _lstm_backward(dmerged, layer.fwd, cache_fwd)
        dx_bwd, dwi_b, dwr_b, db_b = _lstm_backward(dmerged[::-1], layer.bwd, cache_bwd)
        grads[f"layer{i}.fwd.w_in"] = dwi_f
        grads[f"layer{i}.fwd.w_rec"] = dwr_f
        grads[f"layer{i}.fwd.bias"] = db_f
        grads[f"layer{i}.bwd.w_in"] = dwi_b
        grads[f"layer{i}.bwd.w_rec"] = dwr_b
        grads[f"layer{i}.bwd.bias"] = db_b
        dx = dx_fwd + dx_bwd[::-1]
    return value, grads

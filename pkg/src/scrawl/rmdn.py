"""Recurrent mixture-density network, implemented from scratch in numpy.

Stacked LSTM layers (input/forget/output gates, optional peepholes) feed a
bivariate-GMM output head; the loss is the closed-form negative log likelihood
of 2-D targets (optionally plus a Bernoulli pen bit).  Reverse-mode gradients
are derived analytically and checked against finite differences in the test
suite.  Training uses truncated backpropagation through time over overlapping
segments, Adam, and global-norm gradient clipping.

The model is head-agnostic: the same machinery serves dynamic-parameter
prediction (2-D targets) and virtual-target prediction (2-D targets plus a
pen bit, ``pen_head=True``).

All reference-path arithmetic is 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# configuration and containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    layers: int = 2
    hidden_dim: int = 400
    num_gaussians: int = 20
    dropout_keep: float = 0.9
    peepholes: bool = False
    pen_head: bool = False
    seq_len: int = 15
    overlap: float = 0.5
    clip_norm: float = 5.0
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not 1 <= self.layers <= 3:
            raise ValueError("layers must be in [1, 3]")
        if not 1 <= self.hidden_dim <= 1024:
            raise ValueError("hidden_dim must be in [1, 1024]")
        if not 1 <= self.num_gaussians <= 64:
            raise ValueError("num_gaussians must be in [1, 64]")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must be in [0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    @property
    def output_dim(self) -> int:
        return 6 * self.num_gaussians + (1 if self.pen_head else 0)


@dataclass
class GmmStepParams:
    weights: np.ndarray        # (K,) simplex
    means: np.ndarray          # (K, 2)
    deviations: np.ndarray     # (K, 2) positive
    correlations: np.ndarray   # (K,) in (-1, 1)
    pen: Optional[float] = None


@dataclass
class LstmState:
    c: list[np.ndarray]
    h: list[np.ndarray]

    def copy(self) -> "LstmState":
        return LstmState([v.copy() for v in self.c], [v.copy() for v in self.h])


@dataclass
class ModelCheckpoint:
    format_version: int
    model_kind: str                    # "DPP" | "VTP"
    config: NetworkConfig
    weights: dict[str, np.ndarray]
    norm_stats: object
    training_meta: dict

    def __post_init__(self):
        if self.model_kind not in ("DPP", "VTP"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        expected = {name: shape for name, shape in weight_manifest(self.config)}
        got = {name: w.shape for name, w in self.weights.items()}
        if got != expected:
            raise ValueError("weight shapes do not match the config manifest")


CHECKPOINT_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def weight_manifest(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Deterministic (name, shape) listing of every parameter tensor."""
    h = cfg.hidden_dim
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for layer in range(cfg.layers):
        in_dim = cfg.input_dim if layer == 0 else h
        manifest.append((f"l{layer}.W_x", (in_dim, 4 * h)))
        manifest.append((f"l{layer}.W_h", (h, 4 * h)))
        manifest.append((f"l{layer}.b", (4 * h,)))
        if cfg.peepholes:
            for gate in ("p_i", "p_f", "p_o"):
                manifest.append((f"l{layer}.{gate}", (h,)))
    manifest.append(("out.W", (h, cfg.output_dim)))
    manifest.append(("out.b", (cfg.output_dim,)))
    return manifest


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_weights(cfg: NetworkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Scaled-uniform input weights, orthogonal recurrent, forget bias +1."""
    h = cfg.hidden_dim
    weights: dict[str, np.ndarray] = {}
    for layer in range(cfg.layers):
        in_dim = cfg.input_dim if layer == 0 else h
        limit = math.sqrt(6.0 / (in_dim + 4 * h))
        weights[f"l{layer}.W_x"] = rng.uniform(-limit, limit, (in_dim, 4 * h))
        weights[f"l{layer}.W_h"] = np.hstack([_orthogonal(rng, h) for _ in range(4)])
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget-gate bias
        weights[f"l{layer}.b"] = b
        if cfg.peepholes:
            for gate in ("p_i", "p_f", "p_o"):
                weights[f"l{layer}.{gate}"] = np.zeros(h)
    limit = math.sqrt(6.0 / (h + cfg.output_dim))
    weights["out.W"] = rng.uniform(-limit, limit, (h, cfg.output_dim))
    weights["out.b"] = np.zeros(cfg.output_dim)
    return weights


def flatten_weights(cfg: NetworkConfig, weights: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([weights[name].ravel() for name, _ in weight_manifest(cfg)])


def unflatten_weights(cfg: NetworkConfig, flat: np.ndarray) -> dict[str, np.ndarray]:
    weights = {}
    offset = 0
    for name, shape in weight_manifest(cfg):
        size = int(np.prod(shape))
        weights[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise ValueError("flat weight vector size does not match the manifest")
    return weights


def zero_state(cfg: NetworkConfig) -> LstmState:
    return LstmState(
        [np.zeros(cfg.hidden_dim) for _ in range(cfg.layers)],
        [np.zeros(cfg.hidden_dim) for _ in range(cfg.layers)],
    )


# ---------------------------------------------------------------------------
# forward / transforms
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def raw_to_params(cfg: NetworkConfig, raw: np.ndarray) -> GmmStepParams:
    """Apply the output transforms to one raw 6K(+1) vector."""
    k = cfg.num_gaussians
    pi_hat = raw[:k]
    pi = np.exp(pi_hat - pi_hat.max())
    pi /= pi.sum()
    means = raw[k : 3 * k].reshape(k, 2)
    deviations = np.exp(raw[3 * k : 5 * k].reshape(k, 2))
    correlations = np.tanh(raw[5 * k : 6 * k])
    pen = float(_sigmoid(raw[6 * k : 6 * k + 1])[0]) if cfg.pen_head else None
    return GmmStepParams(pi, means, deviations, correlations, pen)


def forward(
    cfg: NetworkConfig,
    weights: dict[str, np.ndarray],
    x_seq: np.ndarray,
    state: Optional[LstmState] = None,
    mode: str = "infer",
    dropout_draw: Optional[np.random.Generator] = None,
):
    """Run the network over a sequence.

    Returns (params, new_state, cache) where params is a list of
    GmmStepParams (one per step).  In train mode, dropout masks are drawn
    from ``dropout_draw``, applied to every non-recurrent inter-layer
    connection (each layer's output on its way up), scaled by 1/keep, and
    recorded in the cache so backward can replay them.
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[1] != cfg.input_dim:
        raise ValueError(
            f"expected input shape (T, {cfg.input_dim}), got {x_seq.shape}"
        )
    if state is None:
        state = zero_state(cfg)
    for v in state.c + state.h:
        if v.shape != (cfg.hidden_dim,):
            raise ValueError("state dimensions do not match the config")
    if mode == "train" and cfg.dropout_keep < 1.0 and dropout_draw is None:
        raise ValueError("train mode with dropout requires an RNG")

    n_steps = len(x_seq)
    h_dim = cfg.hidden_dim
    use_dropout = mode == "train" and cfg.dropout_keep < 1.0

    c = [v.copy() for v in state.c]
    h = [v.copy() for v in state.h]
    cache = {
        "cfg": cfg,
        "x_seq": x_seq,
        "mode": mode,
        "init_state": state.copy(),
        # per layer, per step
        "x_in": [[] for _ in range(cfg.layers)],
        "gates": [[] for _ in range(cfg.layers)],   # (i, f, g, o)
        "c": [[] for _ in range(cfg.layers)],
        "c_prev": [[] for _ in range(cfg.layers)],
        "tanh_c": [[] for _ in range(cfg.layers)],
        "h_prev": [[] for _ in range(cfg.layers)],
        "mask": [[] for _ in range(cfg.layers)],
        "h_dropped": [[] for _ in range(cfg.layers)],
        "states": [],
        "raw": np.empty((n_steps, cfg.output_dim)),
    }

    for t in range(n_steps):
        upward = x_seq[t]
        for layer in range(cfg.layers):
            w_x = weights[f"l{layer}.W_x"]
            w_h = weights[f"l{layer}.W_h"]
            b = weights[f"l{layer}.b"]
            c_prev = c[layer]
            h_prev = h[layer]
            z = upward @ w_x + h_prev @ w_h + b
            zi, zf, zg, zo = (z[:h_dim], z[h_dim : 2 * h_dim],
                              z[2 * h_dim : 3 * h_dim], z[3 * h_dim :])
            if cfg.peepholes:
                zi = zi + weights[f"l{layer}.p_i"] * c_prev
                zf = zf + weights[f"l{layer}.p_f"] * c_prev
            gi = _sigmoid(zi)
            gf = _sigmoid(zf)
            gg = np.tanh(zg)
            c_new = gf * c_prev + gi * gg
            if cfg.peepholes:
                zo = zo + weights[f"l{layer}.p_o"] * c_new
            go = _sigmoid(zo)
            tanh_c = np.tanh(c_new)
            h_new = go * tanh_c

            if use_dropout:
                mask = (
                    dropout_draw.random(h_dim) < cfg.dropout_keep
                ).astype(np.float64) / cfg.dropout_keep
            else:
                mask = None
            h_dropped = h_new if mask is None else h_new * mask

            cache["x_in"][layer].append(upward)
            cache["gates"][layer].append((gi, gf, gg, go))
            cache["c"][layer].append(c_new)
            cache["c_prev"][layer].append(c_prev)
            cache["tanh_c"][layer].append(tanh_c)
            cache["h_prev"][layer].append(h_prev)
            cache["mask"][layer].append(mask)
            cache["h_dropped"][layer].append(h_dropped)

            c[layer] = c_new
            h[layer] = h_new
            upward = h_dropped

        cache["raw"][t] = upward @ weights["out.W"] + weights["out.b"]
        cache["states"].append(LstmState([v.copy() for v in c], [v.copy() for v in h]))

    params = [raw_to_params(cfg, cache["raw"][t]) for t in range(n_steps)]
    return params, LstmState(c, h), cache


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def bivariate_pdf(y, mu, sigma, rho) -> float:
    """Closed-form bivariate normal density (no matrix inversion)."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    d1 = (y[0] - mu[0]) / sigma[0]
    d2 = (y[1] - mu[1]) / sigma[1]
    one_m_r2 = 1.0 - rho * rho
    z = d1 * d1 + d2 * d2 - 2.0 * rho * d1 * d2
    return math.exp(-z / (2.0 * one_m_r2)) / (
        2.0 * math.pi * sigma[0] * sigma[1] * math.sqrt(one_m_r2)
    )


def _log_components(params: GmmStepParams, y: np.ndarray):
    """log(pi_k) + log N_k(y) for every component, plus intermediates."""
    d1 = (y[0] - params.means[:, 0]) / params.deviations[:, 0]
    d2 = (y[1] - params.means[:, 1]) / params.deviations[:, 1]
    rho = params.correlations
    one_m_r2 = 1.0 - rho * rho
    with np.errstate(over="ignore"):
        z = d1 * d1 + d2 * d2 - 2.0 * rho * d1 * d2
    log_n = (
        -LOG_2PI
        - np.log(params.deviations[:, 0])
        - np.log(params.deviations[:, 1])
        - 0.5 * np.log(one_m_r2)
        - z / (2.0 * one_m_r2)
    )
    with np.errstate(divide="ignore"):
        log_comp = np.log(params.weights) + log_n
    return log_comp, d1, d2, z, one_m_r2


def nll_loss(params_seq: list[GmmStepParams], targets: np.ndarray) -> float:
    """Negative log likelihood of 2-D targets (+ optional pen bit column)."""
    targets = np.asarray(targets, dtype=np.float64)
    if len(params_seq) != len(targets):
        raise ValueError("params/targets length mismatch")
    total = 0.0
    for params, y in zip(params_seq, targets):
        log_comp, *_ = _log_components(params, y)
        m = log_comp.max()
        if not np.isfinite(m):
            return math.inf  # all component densities underflowed
        total -= m + math.log(np.exp(log_comp - m).sum())
        if params.pen is not None:
            e = float(np.clip(params.pen, 1e-12, 1.0 - 1e-12))
            pen_bit = y[2]
            total -= pen_bit * math.log(e) + (1.0 - pen_bit) * math.log(1.0 - e)
    return total


def nll_raw_grad(cfg: NetworkConfig, raw: np.ndarray, targets: np.ndarray):
    """Loss and its exact gradient w.r.t. the raw (pre-transform) outputs."""
    targets = np.asarray(targets, dtype=np.float64)
    k = cfg.num_gaussians
    n_steps = len(raw)
    grad = np.zeros_like(raw)
    total = 0.0
    for t in range(n_steps):
        params = raw_to_params(cfg, raw[t])
        y = targets[t]
        log_comp, d1, d2, z, one_m_r2 = _log_components(params, y)
        m = log_comp.max()
        if not np.isfinite(m):
            return math.inf, grad
        lse = m + math.log(np.exp(log_comp - m).sum())
        total -= lse
        gamma = np.exp(log_comp - lse)

        sig = params.deviations
        rho = params.correlations
        grad[t, :k] = params.weights - gamma
        grad[t, k : 3 * k : 2] = -gamma * (d1 - rho * d2) / (sig[:, 0] * one_m_r2)
        grad[t, k + 1 : 3 * k : 2] = -gamma * (d2 - rho * d1) / (sig[:, 1] * one_m_r2)
        grad[t, 3 * k : 5 * k : 2] = gamma * (1.0 - d1 * (d1 - rho * d2) / one_m_r2)
        grad[t, 3 * k + 1 : 5 * k : 2] = gamma * (1.0 - d2 * (d2 - rho * d1) / one_m_r2)
        grad[t, 5 * k : 6 * k] = -gamma * (rho + d1 * d2 - rho * z / one_m_r2)
        if cfg.pen_head:
            e = params.pen
            pen_bit = y[2]
            e_c = float(np.clip(e, 1e-12, 1.0 - 1e-12))
            total -= pen_bit * math.log(e_c) + (1.0 - pen_bit) * math.log(1.0 - e_c)
            grad[t, 6 * k] = e - pen_bit
    return total, grad


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(cache: dict, d_raw: np.ndarray, weights: dict[str, np.ndarray]):
    """Exact reverse-mode gradients of the loss w.r.t. every weight.

    ``d_raw`` is the gradient at the raw network outputs (from nll_raw_grad);
    dropout masks recorded during the train-mode forward are replayed.
    """
    cfg: NetworkConfig = cache["cfg"]
    h_dim = cfg.hidden_dim
    n_steps = len(d_raw)
    grads = {name: np.zeros(shape) for name, shape in weight_manifest(cfg)}
    if n_steps == 0:
        return grads

    # output head
    w_out = weights["out.W"]
    d_h_top = np.empty((n_steps, h_dim))
    for t in range(n_steps):
        grads["out.W"] += np.outer(cache["h_dropped"][cfg.layers - 1][t], d_raw[t])
        grads["out.b"] += d_raw[t]
        d_h_top[t] = w_out @ d_raw[t]

    # dh_up[t] = gradient flowing into layer `layer`'s dropped output at step t
    dh_up = d_h_top
    for layer in range(cfg.layers - 1, -1, -1):
        w_x = weights[f"l{layer}.W_x"]
        w_h = weights[f"l{layer}.W_h"]
        p_i = weights.get(f"l{layer}.p_i")
        p_f = weights.get(f"l{layer}.p_f")
        p_o = weights.get(f"l{layer}.p_o")
        dh_next = np.zeros(h_dim)   # recurrent gradient from step t+1
        dc_next = np.zeros(h_dim)
        dx_below = np.empty((n_steps, h_dim if layer > 0 else cfg.input_dim))
        for t in range(n_steps - 1, -1, -1):
            gi, gf, gg, go = cache["gates"][layer][t]
            c_new = cache["c"][layer][t]
            c_prev = cache["c_prev"][layer][t]
            tanh_c = cache["tanh_c"][layer][t]
            mask = cache["mask"][layer][t]

            dh = dh_next + (dh_up[t] if mask is None else dh_up[t] * mask)
            dzo = dh * tanh_c * go * (1.0 - go)
            dc = dh * go * (1.0 - tanh_c * tanh_c) + dc_next
            if p_o is not None:
                dc = dc + dzo * p_o
            dzi = dc * gg * gi * (1.0 - gi)
            dzf = dc * c_prev * gf * (1.0 - gf)
            dzg = dc * gi * (1.0 - gg * gg)

            dz = np.concatenate([dzi, dzf, dzg, dzo])
            grads[f"l{layer}.W_x"] += np.outer(cache["x_in"][layer][t], dz)
            grads[f"l{layer}.W_h"] += np.outer(cache["h_prev"][layer][t], dz)
            grads[f"l{layer}.b"] += dz
            if p_i is not None:
                grads[f"l{layer}.p_i"] += dzi * c_prev
                grads[f"l{layer}.p_f"] += dzf * c_prev
                grads[f"l{layer}.p_o"] += dzo * c_new

            dx_below[t] = w_x @ dz
            dh_next = w_h @ dz
            dc_next = dc * gf
            if p_i is not None:
                dc_next = dc_next + dzi * p_i + dzf * p_f
        dh_up = dx_below
    return grads


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= clip_norm or total == 0.0:
        return grads
    scale = clip_norm / total
    return {name: g * scale for name, g in grads.items()}


def adam_init(cfg: NetworkConfig) -> dict:
    return {
        "m": {name: np.zeros(shape) for name, shape in weight_manifest(cfg)},
        "v": {name: np.zeros(shape) for name, shape in weight_manifest(cfg)},
    }


def adam_step(
    weights: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    moments: dict,
    t: int,
    adam: AdamConfig,
) -> None:
    """Standard Adam update with bias correction; mutates weights and moments."""
    bc1 = 1.0 - adam.beta1 ** t
    bc2 = 1.0 - adam.beta2 ** t
    for name, g in grads.items():
        m = moments["m"][name]
        v = moments["v"][name]
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        weights[name] -= adam.lr * (m / bc1) / (np.sqrt(v / bc2) + adam.eps)


def make_segments(length: int, seg_len: int, overlap: float) -> list[tuple[int, int]]:
    """(start, end) windows at stride ceil(L*(1-overlap)), plus a tail cover."""
    if seg_len < 2:
        raise ValueError("segment length must be >= 2")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    if length <= seg_len:
        return [(0, length)]
    stride = max(1, math.ceil(seg_len * (1.0 - overlap)))
    starts = list(range(0, length - seg_len + 1, stride))
    if starts[-1] + seg_len < length:
        starts.append(length - seg_len)
    return [(s, s + seg_len) for s in starts]


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_gmm(params: GmmStepParams, draw: np.random.Generator):
    """Draw one point from the GMM (Cholesky construction); pen bit if present."""
    k = int(np.searchsorted(np.cumsum(params.weights), draw.random()))
    k = min(k, len(params.weights) - 1)
    z1, z2 = draw.standard_normal(2)
    mu = params.means[k]
    sig = params.deviations[k]
    rho = params.correlations[k]
    y = np.array(
        [
            mu[0] + sig[0] * z1,
            mu[1] + sig[1] * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2),
        ]
    )
    if params.pen is None:
        return y
    return y, bool(draw.random() < params.pen)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train(
    cfg: NetworkConfig,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    seed: int,
    *,
    epochs: int = 20,
    batch_size: int = 32,
    model_kind: str = "DPP",
    norm_stats: object = None,
) -> ModelCheckpoint:
    """Truncated-BPTT training loop; deterministic given the seed.

    ``dataset`` holds (input sequence, target sequence) pairs whose
    normalisation is the caller's responsibility.  Sequences are shuffled
    each epoch; within a sequence the recurrent state carries across
    overlapping segments and is reset between sequences.  Weight updates are
    applied per ``batch_size`` segments (summed gradients, global-norm clip,
    Adam).
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    for x_seq, y_seq in dataset:
        if len(x_seq) != len(y_seq) or len(x_seq) == 0:
            raise ValueError("each sample needs matching non-empty input/target")

    rng = np.random.default_rng(seed)
    weights = init_weights(cfg, rng)
    moments = adam_init(cfg)
    adam_t = 0
    loss_curve: list[float] = []

    acc_grads = None
    acc_count = 0

    def flush():
        nonlocal acc_grads, acc_count, adam_t
        if acc_count == 0:
            return
        clipped = clip_gradients(acc_grads, cfg.clip_norm)
        adam_t += 1
        adam_step(weights, clipped, moments, adam_t, cfg.adam)
        acc_grads = None
        acc_count = 0

    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        epoch_steps = 0
        for idx in order:
            x_seq = np.asarray(dataset[idx][0], dtype=np.float64)
            y_seq = np.asarray(dataset[idx][1], dtype=np.float64)
            segments = make_segments(len(x_seq), cfg.seq_len, cfg.overlap)
            state = zero_state(cfg)
            prev_start = None
            prev_cache = None
            for start, end in segments:
                if prev_start is not None:
                    # state entering this segment = state after `start` steps,
                    # read from the previous (overlapping) segment's cache
                    state = prev_cache["states"][start - prev_start - 1].copy()
                _, _, cache = forward(
                    cfg, weights, x_seq[start:end], state, "train", rng
                )
                loss, d_raw = nll_raw_grad(cfg, cache["raw"], y_seq[start:end])
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged (non-finite loss) at epoch {epoch}, "
                        f"sequence {idx}, segment [{start}, {end})"
                    )
                grads = backward(cache, d_raw, weights)
                if acc_grads is None:
                    acc_grads = grads
                else:
                    for name in acc_grads:
                        acc_grads[name] += grads[name]
                acc_count += 1
                epoch_loss += loss
                epoch_steps += end - start
                if acc_count >= batch_size:
                    flush()
                prev_start = start
                prev_cache = cache
        flush()
        loss_curve.append(epoch_loss / epoch_steps)

    return ModelCheckpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        model_kind=model_kind,
        config=cfg,
        weights=weights,
        norm_stats=norm_stats,
        training_meta={
            "epochs": epochs,
            "final_loss": loss_curve[-1],
            "seed": seed,
            "loss_curve": loss_curve,
        },
    )

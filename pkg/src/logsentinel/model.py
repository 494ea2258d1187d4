"""Transformer encoder in plain numpy with hand-written backpropagation.

Shapes follow ``(batch, time, width)``.  The forward pass keeps what the
backward pass needs in a cache; :func:`backward` returns gradients for every
trainable tensor.  The sinusoidal position table is not trainable and is not
stored with the parameters.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

LN_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 50          # key embedding width
    d_o: int = 256       # hidden width of every transformer layer
    d_ff: int = 256      # feed-forward inner width
    n_heads: int = 4
    n_layers: int = 2
    max_len: int = 512
    dtype: str = "float32"

    def __post_init__(self):
        if self.d % 2:
            raise ValueError("embedding width d must be even for the sinusoid table")
        if self.d_o % self.n_heads:
            raise ValueError("d_o must be divisible by n_heads")

    @property
    def d_v(self) -> int:
        return self.d_o // self.n_heads

    @property
    def projects_input(self) -> bool:
        return self.d != self.d_o

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Named trainable tensors plus the config that shapes them."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self.tensors = tensors
        self._pos = positional_encoding(config.max_len, config.d).astype(config.dtype)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def positions(self) -> np.ndarray:
        return self._pos

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype: str) -> "ModelParams":
        cfg = ModelConfig(**{**self.config.to_dict(), "dtype": dtype})
        return ModelParams(cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def validate(self) -> None:
        expected = param_shapes(self.config)
        if set(expected) != set(self.tensors):
            raise ValueError(f"tensor names differ from config: {sorted(set(expected) ^ set(self.tensors))}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValueError(f"{name}: non-finite values")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"embedding": (cfg.vocab_size, cfg.d)}
    if cfg.projects_input:
        shapes["input_proj.weight"] = (cfg.d, cfg.d_o)
        shapes["input_proj.bias"] = (cfg.d_o,)
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        for name in ("query", "key", "value"):
            shapes[p + name] = (cfg.n_heads, cfg.d_o, cfg.d_v)
        shapes[p + "output"] = (cfg.n_heads * cfg.d_v, cfg.d_o)
        shapes[p + "ffn1"] = (cfg.d_o, cfg.d_ff)
        shapes[p + "ffn2"] = (cfg.d_ff, cfg.d_o)
        for ln in ("ln1", "ln2"):
            shapes[p + ln + ".gain"] = (cfg.d_o,)
            shapes[p + ln + ".bias"] = (cfg.d_o,)
    shapes["head.weight"] = (cfg.vocab_size, cfg.d_o)
    shapes["head.bias"] = (cfg.vocab_size,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    return shape[-2] if name.endswith(("query", "key", "value")) else shape[0] if len(shape) == 2 else shape[-1]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); embeddings ~ N(0, 1);
    layer-norm gains 1 and biases 0."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name == "embedding":
            w = rng.standard_normal(shape)
        elif name.endswith(".gain"):
            w = np.ones(shape)
        elif name.endswith(".bias") and ".ln" in name:
            w = np.zeros(shape)
        elif name == "head.weight":
            bound = 1.0 / np.sqrt(cfg.d_o)
            w = rng.uniform(-bound, bound, shape)
        elif name in ("head.bias", "input_proj.bias"):
            bound = 1.0 / np.sqrt(cfg.d_o if name == "head.bias" else cfg.d)
            w = rng.uniform(-bound, bound, shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shape))
            w = rng.uniform(-bound, bound, shape)
        tensors[name] = w.astype(cfg.dtype)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def positional_encoding(max_len: int, d: int) -> np.ndarray:
    """``T[pos, 2i] = sin(pos / 10000**(2i/d))``, ``T[pos, 2i+1] = cos(...)``."""
    if d % 2:
        raise ValueError("positional encoding needs an even width")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    rates = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((max_len, d))
    table[:, 0::2] = np.sin(pos / rates)
    table[:, 1::2] = np.cos(pos / rates)
    return table


def input_representation(ids: np.ndarray, embedding: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """``X[t] = E[ids[t]] + T[t]`` for ids of shape ``(..., L)``."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= embedding.shape[0]):
        raise IndexError("token id outside the vocabulary")
    L = ids.shape[-1]
    if L > positions.shape[0]:
        raise ValueError(f"sequence length {L} exceeds the position table ({positions.shape[0]})")
    return embedding[ids] + positions[:L]


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _key_bias(attn_mask: np.ndarray | None, dtype) -> np.ndarray | None:
    if attn_mask is None:
        return None
    attn_mask = np.asarray(attn_mask, dtype=bool)
    if not attn_mask.any(axis=-1).all():
        raise ValueError("every key position is masked for some query")
    return np.where(attn_mask, 0.0, -np.inf).astype(dtype)


def attention(Q, K, V, attn_mask=None, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_v)) V`` with masked key positions at -inf.

    ``attn_mask`` is a boolean array over key positions (True = real token),
    broadcast against the leading dims of Q.
    """
    Q, K, V = np.asarray(Q), np.asarray(K), np.asarray(V)
    if K.shape[-2] != V.shape[-2]:
        raise ValueError("K and V must have the same number of rows")
    d_v = Q.shape[-1]
    scores = Q @ np.swapaxes(K, -1, -2) / math.sqrt(d_v)
    bias = _key_bias(attn_mask, scores.dtype)
    if bias is not None:
        scores = scores + bias[..., None, :]
    weights = softmax(scores)
    out = weights @ V
    return (out, weights) if return_weights else out


def _flat_weight(W: np.ndarray) -> np.ndarray:
    # (H, D, dv) -> (D, H*dv), head-major columns
    H, D, dv = W.shape
    return W.transpose(1, 0, 2).reshape(D, H * dv)


def _split_heads(Y: np.ndarray, H: int) -> np.ndarray:
    # (..., T, H*dv) -> (..., H, T, dv)
    Y = Y.reshape(*Y.shape[:-1], H, Y.shape[-1] // H)
    return np.swapaxes(Y, -3, -2)


def _heads(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    # (..., T, D) x (H, D, dv) -> (..., H, T, dv)
    return _split_heads(X @ _flat_weight(W), W.shape[0])


def _merge_heads(O: np.ndarray) -> np.ndarray:
    # (..., H, T, dv) -> (..., T, H*dv)
    O = np.swapaxes(O, -3, -2)
    return O.reshape(*O.shape[:-2], O.shape[-2] * O.shape[-1])


def multi_head(X, Wq, Wk, Wv, Wo, attn_mask=None):
    """``Concat(head_1..head_H) W_O`` where ``head_l = attention(X Wq_l, X Wk_l, X Wv_l)``."""
    H, D, dv = Wq.shape
    if Wk.shape != Wq.shape or Wv.shape != Wq.shape:
        raise ValueError("query/key/value weights must share a shape")
    if Wo.shape[0] != H * dv:
        raise ValueError(f"output projection expects {Wo.shape[0]} inputs, heads give {H * dv}")
    if X.shape[-1] != D:
        raise ValueError("input width does not match the projection weights")
    mask = None if attn_mask is None else np.asarray(attn_mask)[..., None, :]
    O = attention(_heads(X, Wq), _heads(X, Wk), _heads(X, Wv), mask)
    return _merge_heads(O) @ Wo


def layer_norm(x, gain, bias, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv)


def _layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def _layer_forward(X, p: dict, prefix: str, attn_mask, n_heads: int):
    Wq, Wk, Wv, Wo = (p[prefix + n] for n in ("query", "key", "value", "output"))
    Q, K, V = _heads(X, Wq), _heads(X, Wk), _heads(X, Wv)
    mask = None if attn_mask is None else attn_mask[..., None, :]
    O, P = attention(Q, K, V, mask, return_weights=True)
    Oc = _merge_heads(O)
    R1 = X + Oc @ Wo
    Y1, ln1 = layer_norm(R1, p[prefix + "ln1.gain"], p[prefix + "ln1.bias"])
    U = Y1 @ p[prefix + "ffn1"]
    Rl = np.maximum(U, 0.0)
    R2 = Y1 + Rl @ p[prefix + "ffn2"]
    out, ln2 = layer_norm(R2, p[prefix + "ln2.gain"], p[prefix + "ln2.bias"])
    cache = (X, Q, K, V, P, Oc, Y1, ln1, U, Rl, ln2)
    return out, cache


def _layer_backward(dout, p: dict, prefix: str, cache, grads: dict):
    X, Q, K, V, P, Oc, Y1, ln1, U, Rl, ln2 = cache
    dR2, grads[prefix + "ln2.gain"], grads[prefix + "ln2.bias"] = _layer_norm_backward(
        dout, p[prefix + "ln2.gain"], ln2)
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    grads[prefix + "ffn2"] = flat(Rl).T @ flat(dR2)
    dU = (dR2 @ p[prefix + "ffn2"].T) * (U > 0)
    grads[prefix + "ffn1"] = flat(Y1).T @ flat(dU)
    dY1 = dR2 + dU @ p[prefix + "ffn1"].T
    dR1, grads[prefix + "ln1.gain"], grads[prefix + "ln1.bias"] = _layer_norm_backward(
        dY1, p[prefix + "ln1.gain"], ln1)
    Wo = p[prefix + "output"]
    grads[prefix + "output"] = flat(Oc).T @ flat(dR1)
    dOc = dR1 @ Wo.T
    H, _, dv = p[prefix + "query"].shape
    dO = np.swapaxes(dOc.reshape(*dOc.shape[:-1], H, dv), -3, -2)
    dP = dO @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(P, -1, -2) @ dO
    dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) / math.sqrt(dv)
    dQ = dS @ K
    dK = np.swapaxes(dS, -1, -2) @ Q
    dX = dR1.copy()
    Xf = flat(X)
    for name, dproj in (("query", dQ), ("key", dK), ("value", dV)):
        W = p[prefix + name]
        dY = _merge_heads(dproj)
        grads[prefix + name] = (Xf.T @ flat(dY)).reshape(W.shape[1], H, dv).transpose(1, 0, 2)
        dX += dY @ _flat_weight(W).T
    return dX


def transformer_layer(X, params: ModelParams | dict, layer: int = 0, attn_mask=None):
    """Post-norm layer: ``A = LN(X + MHA(X))``, ``out = LN(A + ReLU(A W1) W2)``."""
    p = params.tensors if isinstance(params, ModelParams) else params
    n_heads = p[f"layers.{layer}.query"].shape[0]
    out, _ = _layer_forward(X, p, f"layers.{layer}.", attn_mask, n_heads)
    return out


# ---------------------------------------------------------------------------
# full encoder
# ---------------------------------------------------------------------------


def forward(params: ModelParams, ids: np.ndarray, attn_mask: np.ndarray | None = None,
            keep_cache: bool = False):
    """Contextual embeddings ``(B, L, d_o)`` for ids ``(B, L)``; row 0 is h_DIST.

    Returns ``(H, cache)`` when ``keep_cache`` is set.
    """
    cfg = params.config
    p = params.tensors
    ids = np.asarray(ids)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None]
        attn_mask = None if attn_mask is None else np.asarray(attn_mask)[None]
    if attn_mask is not None:
        attn_mask = np.asarray(attn_mask, dtype=bool)
        _key_bias(attn_mask, p["embedding"].dtype)
    X0 = input_representation(ids, p["embedding"], params.positions)
    Z = X0 @ p["input_proj.weight"] + p["input_proj.bias"] if cfg.projects_input else X0
    layer_caches = []
    for l in range(cfg.n_layers):
        Z, c = _layer_forward(Z, p, f"layers.{l}.", attn_mask, cfg.n_heads)
        layer_caches.append(c)
    out = Z[0] if squeeze else Z
    if keep_cache:
        return out, {"ids": ids, "X0": X0, "layers": layer_caches, "squeeze": squeeze}
    return out


def encode(enc, params: ModelParams) -> np.ndarray:
    """Contextual embeddings for one :class:`EncodedSequence` (trimmed to its length)."""
    L = enc.length
    return forward(params, enc.ids[:L], enc.attn_mask[:L])


def backward(params: ModelParams, cache: dict, dH: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dH = dLoss/dH`` from :func:`forward`."""
    cfg = params.config
    p = params.tensors
    grads: dict[str, np.ndarray] = {}
    dZ = dH[None] if cache["squeeze"] else dH
    for l in reversed(range(cfg.n_layers)):
        dZ = _layer_backward(dZ, p, f"layers.{l}.", cache["layers"][l], grads)
    X0 = cache["X0"]
    if cfg.projects_input:
        grads["input_proj.weight"] = X0.reshape(-1, cfg.d).T @ dZ.reshape(-1, cfg.d_o)
        grads["input_proj.bias"] = dZ.reshape(-1, cfg.d_o).sum(axis=0)
        dX0 = dZ @ p["input_proj.weight"].T
    else:
        dX0 = dZ
    dE = np.zeros_like(p["embedding"])
    np.add.at(dE, cache["ids"].reshape(-1), dX0.reshape(-1, cfg.d))
    grads["embedding"] = dE
    return grads


def mlkp_logits(h: np.ndarray, params: ModelParams) -> np.ndarray:
    """Raw scores ``W_C h + b_C`` over the vocabulary."""
    return h @ params["head.weight"].T + params["head.bias"]


def mlkp_probs(h: np.ndarray, params: ModelParams) -> np.ndarray:
    """``softmax(W_C h + b_C)``: a distribution over the vocabulary per row."""
    return softmax(mlkp_logits(h, params))

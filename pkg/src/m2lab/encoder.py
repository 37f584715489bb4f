"""Bidirectional long-convolution encoder with Monarch dimension mixing.

Each layer does

    X <- X * mask                                  (pads carry zero state)
    U = X W_u,  G = sigmoid(X W_g)
    C = circconv(U, K) + shortconv(U)              (per channel, along length)
    X <- LN(X + (G * C) W_o)
    X <- LN(X + M2 gelu(M1 x_i))                   (per position)

Inputs are right-padded. The long kernel ``K`` has one row of length ``S``
per channel, indexed by signed offset modulo ``S``. A sequence of ``n`` real
tokens is run at the shortest power-of-two length ``P >= 2n`` (capped at
``S``); offsets ``|o| < n`` then never alias, so the result matches running
at the full length ``S`` while costing ``O(P log P)``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from . import tokenizer as tok
from .errors import ConfigurationError, EmptyInputError, ExtensionError, LengthError, VocabularyError
from .monarch import MonarchMatrix, monarch_apply, monarch_init
from .numeric import DiffArray


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = tok.VOCAB_SIZE
    d_model: int = 64
    n_layers: int = 2
    max_seq_len: int = 2048
    short_conv_width: int = 3
    monarch_b: int = 8
    mlm_mask_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        S = self.max_seq_len
        if not nm.is_power_of_two(S) or S < 16:
            raise ConfigurationError(f"max_seq_len must be a power of two >= 16, got {S}")
        if self.monarch_b ** 2 != self.d_model or not nm.is_power_of_two(self.monarch_b):
            raise ConfigurationError(
                f"d_model must equal monarch_b**2 with monarch_b a power of two "
                f"(d_model={self.d_model}, monarch_b={self.monarch_b})")
        if self.short_conv_width < 1 or self.short_conv_width % 2 == 0:
            raise ConfigurationError("short_conv_width must be a positive odd number")
        if self.vocab_size < 1 or self.n_layers < 1:
            raise ConfigurationError("vocab_size and n_layers must be positive")
        if not 0.0 < self.mlm_mask_prob < 1.0:
            raise ConfigurationError("mlm_mask_prob must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return EncoderConfig(**d)


@dataclass
class PositionalTable:
    table: np.ndarray  # (S, d)

    @property
    def length(self):
        return self.table.shape[0]


def extend_positions(table, new_S):
    """Tile ``table`` periodically: row ``i`` of the result is row ``i mod S``."""
    S = table.length
    if new_S < S or new_S % S:
        raise ExtensionError(f"new length {new_S} is not a multiple of {S}")
    return PositionalTable(np.tile(table.table, (new_S // S, 1)))


def extend_kernel(kernel, new_S):
    """Re-index per-channel kernels to a longer circular length, keeping signed offsets.

    Offsets in ``[-S/2, S/2)`` keep their weights; the newly reachable offsets start at zero.
    """
    d, S = kernel.shape
    if new_S < S or new_S % S:
        raise ExtensionError(f"new length {new_S} is not a multiple of {S}")
    out = np.zeros((d, new_S))
    half = S // 2
    out[:, :half] = kernel[:, :half]
    out[:, new_S - half:] = kernel[:, half:]
    return out


def _layer_names(i):
    p = f"layers.{i}."
    return [p + s for s in ("w_u", "w_g", "w_o", "kernel", "short", "ln1.gamma", "ln1.beta",
                            "m1.left", "m1.right", "m2.left", "m2.right", "ln2.gamma", "ln2.beta")]


def _param_shapes(cfg):
    V, d, S, b, w = cfg.vocab_size, cfg.d_model, cfg.max_seq_len, cfg.monarch_b, cfg.short_conv_width
    shapes = {"tok_emb": (V, d), "pos_emb": (S, d)}
    for i in range(cfg.n_layers):
        shapes.update(zip(_layer_names(i), [
            (d, d), (d, d), (d, d), (d, S), (d, w), (d,), (d,),
            (b, b, b), (b, b, b), (b, b, b), (b, b, b), (d,), (d,)]))
    shapes["head.w"] = (d, V)
    shapes["head.b"] = (V,)
    return shapes


def init_long_kernel(rng, d, S):
    """Random per-channel kernels with exponential decay in |offset|, unit L2 norm per channel."""
    offsets = np.arange(S)
    dist = np.minimum(offsets, S - offsets)
    taus = np.geomspace(1.0, max(S / 8.0, 1.0), d)
    k = rng.standard_normal((d, S)) * np.exp(-dist[None, :] / taus[:, None])
    return k / np.linalg.norm(k, axis=1, keepdims=True)


class EncoderModel:
    """Parameter container; forward computation lives in :func:`encode`."""

    def __init__(self, config, params):
        self.config = config
        expected = _param_shapes(config)
        if list(params) != list(expected):
            raise ConfigurationError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = params

    @classmethod
    def initialize(cls, config):
        rng = np.random.default_rng(config.seed)
        d, V, S, b = config.d_model, config.vocab_size, config.max_seq_len, config.monarch_b
        values = {"tok_emb": rng.standard_normal((V, d)),
                  "pos_emb": 0.1 * rng.standard_normal((S, d))}
        for i in range(config.n_layers):
            p = f"layers.{i}."
            for w in ("w_u", "w_g", "w_o"):
                values[p + w] = rng.standard_normal((d, d)) / np.sqrt(d)
            values[p + "kernel"] = init_long_kernel(rng, d, S)
            values[p + "short"] = 0.3 * rng.standard_normal((d, config.short_conv_width))
            values[p + "ln1.gamma"] = np.ones(d)
            values[p + "ln1.beta"] = np.zeros(d)
            for m in ("m1", "m2"):
                M = monarch_init(b, 1.0 / b, rng)
                values[p + m + ".left"] = M.left.values
                values[p + m + ".right"] = M.right.values
            values[p + "ln2.gamma"] = np.ones(d)
            values[p + "ln2.beta"] = np.zeros(d)
        values["head.w"] = rng.standard_normal((d, V)) / np.sqrt(d)
        values["head.b"] = np.zeros(V)
        return cls.from_arrays(config, values)

    @classmethod
    def from_arrays(cls, config, arrays):
        order = _param_shapes(config)
        params = {name: DiffArray(np.array(arrays[name], dtype=float), trainable=True, name=name)
                  for name in order}
        return cls(config, params)

    def arrays(self):
        return {k: v.values for k, v in self.params.items()}

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def copy(self):
        return EncoderModel.from_arrays(self.config, {k: v.copy() for k, v in self.arrays().items()})

    def __getitem__(self, name):
        return self.params[name]

    @property
    def max_seq_len(self):
        return self.config.max_seq_len

    def positional_table(self):
        return PositionalTable(self.params["pos_emb"].values.copy())

    def monarch(self, layer, which):
        p = f"layers.{layer}.{which}"
        return MonarchMatrix(self.params[p + ".left"], self.params[p + ".right"])


def count_params(model):
    return int(sum(p.size for p in model.parameters()))


def extend_model(model, new_S):
    """Warm-start copy of ``model`` at a longer maximum length.

    Positional rows are tiled with period ``S``; long kernels keep their
    signed-offset weights. Everything else is copied unchanged.
    """
    cfg = model.config.replace(max_seq_len=new_S)
    arrays = {k: v.copy() for k, v in model.arrays().items()}
    arrays["pos_emb"] = extend_positions(model.positional_table(), new_S).table
    for i in range(cfg.n_layers):
        name = f"layers.{i}.kernel"
        arrays[name] = extend_kernel(arrays[name], new_S)
    return EncoderModel.from_arrays(cfg, arrays)


def working_length(n, S):
    """Power-of-two length used to run ``n`` real tokens under maximum length ``S``."""
    if 2 * n >= S:
        return S
    P = 1
    while P < 2 * n:
        P *= 2
    return max(P, 2)


def _kernel_index(P, S):
    if P == S:
        return None
    half = P // 2
    return np.concatenate((np.arange(half), np.arange(S - half, S)))


def _prepare(model, token_ids, pad_mask):
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    if pad_mask is None:
        n = ids.size
    else:
        mask = np.asarray(pad_mask, dtype=bool).reshape(-1)
        if mask.size != ids.size:
            raise LengthError("pad_mask and token_ids differ in length")
        n = int(mask.sum())
        if not mask[:n].all():
            raise LengthError("inputs must be right-padded")
        ids = ids[:n]
    if n > model.max_seq_len:
        raise LengthError(f"sequence of {n} tokens exceeds max_seq_len={model.max_seq_len}")
    if n and (ids.min() < 0 or ids.max() >= model.config.vocab_size):
        raise VocabularyError(f"token id outside [0, {model.config.vocab_size})")
    return ids, n


def encode(model, token_ids, pad_mask=None, length=None):
    """Final hidden states, shape (P, d).

    ``token_ids`` holds the real tokens, optionally followed by padding marked
    ``False`` in ``pad_mask`` (whatever ids sit at pad positions are ignored).
    Rows at index ``>= n`` are padding. ``length`` forces the run length
    (``max_seq_len`` for the plain full-length path).
    """
    ids, n = _prepare(model, token_ids, pad_mask)
    cfg = model.config
    S = cfg.max_seq_len
    P = working_length(n, S) if length is None else int(length)
    if P < n or P > S or not nm.is_power_of_two(P) or (P < S and P < 2 * n):
        raise LengthError(f"cannot run {n} tokens at length {P} (max {S})")
    padded = np.zeros(P, dtype=np.int64)
    padded[:n] = ids
    mask = np.zeros((P, 1))
    mask[:n] = 1.0
    kidx = _kernel_index(P, S)

    x = nm.take(model["tok_emb"], padded) + nm.take(model["pos_emb"], np.arange(P))
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        x = x * mask
        u = x @ model[p + "w_u"]
        gate = nm.sigmoid(x @ model[p + "w_g"])
        kernel = model[p + "kernel"] if kidx is None else nm.take(model[p + "kernel"], kidx, axis=1)
        long_part = nm.swapaxes(nm.circular_conv_fft(nm.swapaxes(u, 0, 1), kernel), 0, 1)
        mixed = long_part + nm.depthwise_conv(u, model[p + "short"])
        y = (gate * mixed) @ model[p + "w_o"]
        x = nm.layer_norm(x + y, model[p + "ln1.gamma"], model[p + "ln1.beta"])
        h = monarch_apply(model.monarch(i, "m2"), nm.gelu(monarch_apply(model.monarch(i, "m1"), x)))
        x = nm.layer_norm(x + h, model[p + "ln2.gamma"], model[p + "ln2.beta"])
    return x


def masked_sum(states, n):
    """Sum of the first ``n`` rows (the real positions)."""
    weights = np.zeros((1, states.shape[0]))
    weights[0, :n] = 1.0
    return nm.reshape(nm.DiffArray(weights) @ states, (states.shape[1],))


def mean_pool(states, n):
    if n <= 0:
        raise EmptyInputError("nothing to pool")
    return masked_sum(states, n) * (1.0 / n)


def embed_ids(model, ids, normalize=True):
    """Mean-pooled (and by default L2-normalized) embedding of one token sequence."""
    if len(ids) == 0:
        raise EmptyInputError("empty token sequence")
    pooled = mean_pool(encode(model, ids), len(ids))
    return nm.l2_normalize(pooled) if normalize else pooled


def embed_text(model, text):
    """Unit-norm embedding of ``text`` truncated to the model's maximum length."""
    if not tok.text_bytes(text):
        raise EmptyInputError("text is empty after tokenization")
    return embed_ids(model, tok.tokenize(text, model.max_seq_len))


def mlm_logits(model, states):
    return states @ model["head.w"] + model["head.b"]

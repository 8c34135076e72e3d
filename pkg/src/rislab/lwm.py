"""Miniature masked-channel-modeling encoder.

Pipeline: a complex channel matrix is split into real/imaginary patches,
a learned CLS patch is prepended, a fraction of patches is masked, and a
small pre-layernorm transformer encodes the sequence. Training minimizes
the reconstruction error of the masked patches through a linear decoder.
The CLS row of the encoder output is the channel embedding used as agent
observation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .nn_core import (ConfigError, Dense, DimensionError, LayerNorm,
                      MultiHeadSelfAttention, NumericError, OptimState,
                      Params, assign_params, load_checkpoint,
                      optimizer_step, save_checkpoint, uniform_init)

MASK_RATIO = 0.15
MASK_TOKEN, RANDOM_NOISE, UNCHANGED = 0, 1, 2
REPLACEMENT_PROBS = (0.8, 0.1, 0.1)


# -- patching ---------------------------------------------------------------

def patch_length(X: int, Y: int, P: int) -> int:
    if P < 2 or P % 2:
        raise ConfigError(f"patch count must be even and >= 2, got {P}")
    if (2 * X * Y) % P:
        raise ConfigError(f"2*{X}*{Y} is not divisible by P={P}")
    return 2 * X * Y // P


def default_patch_count(X: int, Y: int, target: int = 32) -> int:
    """Largest even divisor of ``2XY`` that does not exceed ``target``."""
    n = 2 * X * Y
    for P in range(min(target, n), 1, -1):
        if P % 2 == 0 and n % P == 0:
            return P
    return 2


def patchify(H, P: int) -> np.ndarray:
    """Split ``H`` (X x Y complex) into a (P, L) array of real patches.

    The first P/2 patches hold the row-major real part (``vec(Re(H)^T)``),
    the last P/2 the imaginary part.
    """
    H = np.asarray(H)
    if H.ndim != 2:
        raise DimensionError("patchify expects a 2-D channel matrix")
    X, Y = H.shape
    L = patch_length(X, Y, P)
    flat = np.concatenate([H.real.ravel(), H.imag.ravel()])
    return flat.astype(np.float64).reshape(P, L)


def unpatchify(patches, X: int, Y: int) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.size != 2 * X * Y:
        raise DimensionError(
            f"{patches.shape} patches cannot form a {X}x{Y} complex matrix")
    flat = patches.ravel()
    n = X * Y
    return (flat[:n] + 1j * flat[n:]).reshape(X, Y)


def with_cls(patches, cls) -> np.ndarray:
    """Prepend the CLS patch; works on (P, L) or batched (B, P, L)."""
    patches = np.asarray(patches, dtype=np.float64)
    cls = np.asarray(cls, dtype=np.float64)
    if patches.ndim == 2:
        return np.vstack([cls[None, :], patches])
    head = np.broadcast_to(cls, (patches.shape[0], 1, cls.size))
    return np.concatenate([head, patches], axis=1)


def mask_count(P: int) -> int:
    return max(1, int(np.floor(MASK_RATIO * P + 0.5)))


@dataclass
class MaskRecord:
    """Which sequence positions were masked and how.

    ``indices`` are positions in the CLS-prefixed sequence (1..P);
    ``modes`` holds one of MASK_TOKEN / RANDOM_NOISE / UNCHANGED per index;
    ``originals`` the true patches at those positions.
    """

    indices: np.ndarray
    modes: np.ndarray
    originals: np.ndarray


def mask_patches(tokens, rng: np.random.Generator, mask_token):
    """Mask a CLS-prefixed (P+1, L) sequence. CLS (row 0) is never chosen.

    Returns ``(masked_tokens, MaskRecord)``.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    P = tokens.shape[0] - 1
    if P < 1:
        raise ConfigError("need at least one patch to mask")
    m = mask_count(P)
    idx = rng.choice(P, size=m, replace=False) + 1
    u = rng.random(m)
    modes = np.where(u < REPLACEMENT_PROBS[0], MASK_TOKEN,
                     np.where(u < REPLACEMENT_PROBS[0] + REPLACEMENT_PROBS[1],
                              RANDOM_NOISE, UNCHANGED))
    out = tokens.copy()
    L = tokens.shape[1]
    for i, mode in zip(idx, modes):
        if mode == MASK_TOKEN:
            out[i] = mask_token
        elif mode == RANDOM_NOISE:
            out[i] = rng.standard_normal(L)
    return out, MaskRecord(idx, modes, tokens[idx].copy())


# -- encoder ----------------------------------------------------------------

class TransformerBlock:
    """Pre-layernorm block: ``x + attn(ln1 x)`` then ``x + ffn(ln2 x)``."""

    def __init__(self, dim, heads, ffn_dim, rng):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Dense(dim, ffn_dim, "relu", rng)
        self.ff2 = Dense(ffn_dim, dim, "identity", rng)

    def _parts(self):
        return {"ln1": self.ln1, "attn": self.attn, "ln2": self.ln2,
                "ff1": self.ff1, "ff2": self.ff2}

    def forward(self, x):
        x = x + self.attn.forward(self.ln1.forward(x))
        return x + self.ff2.forward(self.ff1.forward(self.ln2.forward(x)))

    def backward(self, dx):
        _, _, dh = self.ff2.backward(dx)
        _, _, dh = self.ff1.backward(dh)
        dx = dx + self.ln2.backward(dh)
        dx = dx + self.ln1.backward(self.attn.backward(dx))
        return dx

    def params(self) -> Params:
        return {f"{p}.{k}": v for p, part in self._parts().items()
                for k, v in part.params().items()}

    def grads(self) -> Params:
        return {f"{p}.{k}": v for p, part in self._parts().items()
                for k, v in part.grads().items()}


class ChannelEncoder:
    """Tiny transformer encoder for one channel shape (X x Y).

    Parameters
    ----------
    X, Y : int
        Shape of the complex matrices this encoder consumes.
    P : int, optional
        Number of patches; defaults to :func:`default_patch_count`.
    dim : int
        Model width D.
    blocks, heads : int
        Transformer depth and number of attention heads.
    ffn_dim : int, optional
        Feed-forward width; 4*D if omitted.
    """

    def __init__(self, X: int, Y: int, P: Optional[int] = None,
                 dim: int = 16, blocks: int = 2, heads: int = 2,
                 ffn_dim: Optional[int] = None, seed: int = 0):
        if dim % heads:
            raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
        self.X, self.Y = X, Y
        self.P = default_patch_count(X, Y) if P is None else P
        self.L = patch_length(X, Y, self.P)
        self.dim, self.heads = dim, heads
        self.ffn_dim = 4 * dim if ffn_dim is None else ffn_dim
        self.input_scale = 1.0
        rng = np.random.default_rng(seed)
        self.cls = rng.standard_normal(self.L)
        self.mask_token = rng.standard_normal(self.L)
        self.proj = Dense(self.L, dim, "identity", rng)
        self.pos = rng.standard_normal((self.P + 1, dim))
        self.blocks = [TransformerBlock(dim, heads, self.ffn_dim, rng)
                       for _ in range(blocks)]
        self.W_dec = uniform_init(rng, (self.L, dim), dim)
        self._zero_grads()
        self._tokens_shape = None

    @property
    def hparams(self) -> dict:
        return {"X": self.X, "Y": self.Y, "P": self.P, "L": self.L,
                "D": self.dim, "blocks": len(self.blocks),
                "heads": self.heads, "ffn_dim": self.ffn_dim,
                "input_scale": self.input_scale}

    def _zero_grads(self):
        self.grad_cls = np.zeros_like(self.cls)
        self.grad_mask_token = np.zeros_like(self.mask_token)
        self.grad_pos = np.zeros_like(self.pos)
        self.grad_W_dec = np.zeros_like(self.W_dec)

    def params(self) -> Params:
        out = {"cls": self.cls, "mask_token": self.mask_token,
               "proj.W": self.proj.W, "proj.b": self.proj.b, "pos": self.pos}
        for i, blk in enumerate(self.blocks):
            out.update({f"blocks.{i}.{k}": v for k, v in blk.params().items()})
        out["W_dec"] = self.W_dec
        return out

    def grads(self) -> Params:
        out = {"cls": self.grad_cls, "mask_token": self.grad_mask_token,
               "proj.W": self.proj.grad_W, "proj.b": self.proj.grad_b,
               "pos": self.grad_pos}
        for i, blk in enumerate(self.blocks):
            out.update({f"blocks.{i}.{k}": v for k, v in blk.grads().items()})
        out["W_dec"] = self.grad_W_dec
        return out

    def last_layer_names(self) -> List[str]:
        """Tensors left trainable by last-layer-only fine-tuning."""
        last = len(self.blocks) - 1
        return [n for n in self.params()
                if n == "W_dec" or n.startswith(f"blocks.{last}.")]

    # sequence construction

    def tokens(self, H) -> np.ndarray:
        """CLS-prefixed (P+1, L) token array for one matrix."""
        H = np.asarray(H)
        if H.shape != (self.X, self.Y):
            raise DimensionError(
                f"encoder expects {self.X}x{self.Y} matrices, got {H.shape}")
        return with_cls(patchify(H * self.input_scale, self.P), self.cls)

    # forward / backward

    def forward(self, tokens) -> np.ndarray:
        """Encode (P+1, L) or (B, P+1, L) tokens into (.., P+1, D)."""
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.shape[-2:] != (self.P + 1, self.L):
            raise DimensionError(
                f"expected token shape ({self.P + 1}, {self.L}), "
                f"got {tokens.shape[-2:]}")
        self._tokens_shape = tokens.shape
        x = self.proj.forward(tokens) + self.pos
        for blk in self.blocks:
            x = blk.forward(x)
        return x

    def backward(self, dE, records: Optional[Sequence[MaskRecord]] = None):
        """Accumulate encoder gradients from ``dE`` (same shape as output).

        ``records`` routes token gradients back into the mask token.
        Returns the gradient w.r.t. the (masked) input tokens.
        """
        dx = np.asarray(dE, dtype=np.float64)
        for blk in reversed(self.blocks):
            dx = blk.backward(dx)
        batched = dx.ndim == 3
        self.grad_pos = dx.sum(axis=0) if batched else dx.copy()
        _, _, dtok = self.proj.backward(dx)
        self.grad_cls = dtok[:, 0].sum(axis=0) if batched else dtok[0].copy()
        self.grad_mask_token = np.zeros_like(self.mask_token)
        if records is not None:
            dt = dtok if batched else dtok[None]
            for b, rec in enumerate(records):
                for i, mode in zip(rec.indices, rec.modes):
                    if mode == MASK_TOKEN:
                        self.grad_mask_token += dt[b, i]
        return dtok

    def embed(self, H) -> np.ndarray:
        """CLS embedding (length D) of one unmasked matrix."""
        return self.forward(self.tokens(H))[0]

    def embed_many(self, Hs) -> np.ndarray:
        """CLS embeddings (n, D) for a stack of matrices."""
        toks = np.stack([self.tokens(H) for H in Hs])
        return self.forward(toks)[:, 0, :]


def encoder_forward(tokens, params: ChannelEncoder) -> np.ndarray:
    return params.forward(tokens)


# -- masked reconstruction objective ----------------------------------------

def masked_loss(E, W_dec, records):
    """Mean masked reconstruction error and its gradients.

    ``E`` is (P+1, D) with one record, or (B, P+1, D) with a list of
    records. The loss is the per-sample average over masked patches of
    ``||W_dec e_i - p_i||^2``, averaged over the batch.

    Returns ``(loss, dE, dW_dec)``.
    """
    single = isinstance(records, MaskRecord)
    if single:
        E, records = np.asarray(E)[None], [records]
    if any(len(r.indices) == 0 for r in records):
        raise ValueError("masked_loss needs a nonempty mask set")
    B = len(records)
    dE = np.zeros_like(E)
    dW = np.zeros_like(W_dec)
    loss = 0.0
    for b, rec in enumerate(records):
        e = E[b, rec.indices]
        diff = e @ W_dec.T - rec.originals
        n = len(rec.indices)
        loss += float(np.sum(diff * diff)) / n / B
        g = 2.0 * diff / (n * B)
        dW += g.T @ e
        dE[b, rec.indices] += g @ W_dec
    return loss, (dE[0] if single else dE), dW


def mask_batch(encoder: ChannelEncoder, Hs, rng):
    toks, records = [], []
    for H in Hs:
        t, rec = mask_patches(encoder.tokens(H), rng, encoder.mask_token)
        toks.append(t)
        records.append(rec)
    return np.stack(toks), records


def loss_and_grads(encoder: ChannelEncoder, masked_tokens, records) -> float:
    E = encoder.forward(masked_tokens)
    loss, dE, dW = masked_loss(E, encoder.W_dec, records)
    encoder.backward(dE, records)
    encoder.grad_W_dec = dW
    return loss


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch: int = 64
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    last_layer_only: bool = False
    fit_scale: bool = True
    seed: int = 0


def fit_input_scale(encoder: ChannelEncoder, Hs) -> float:
    """Set ``input_scale`` so scaled real/imag entries have unit RMS."""
    stack = np.stack([np.asarray(H) for H in Hs])
    rms = np.sqrt(np.mean(stack.real ** 2 + stack.imag ** 2) / 2.0)
    encoder.input_scale = 1.0 / rms if rms > 0 else 1.0
    return encoder.input_scale


def finetune(dataset, encoder: ChannelEncoder,
             cfg: Optional[FinetuneConfig] = None, **overrides):
    """Train ``encoder`` on masked reconstruction over ``dataset``.

    Uses AdamW. Returns ``(encoder, trace)`` where ``trace`` lists the mean
    training loss of each epoch.
    """
    cfg = FinetuneConfig(**overrides) if cfg is None else cfg
    Hs = list(dataset)
    if not Hs:
        raise ValueError("finetune needs a nonempty dataset")
    if cfg.epochs == 0:
        return encoder, []
    if cfg.fit_scale:
        fit_input_scale(encoder, Hs)
    state = OptimState("adamw", cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                       cfg.weight_decay)
    names = encoder.last_layer_names() if cfg.last_layer_only else None
    rng = np.random.default_rng(cfg.seed)
    params = encoder.params()
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(Hs))
        total, count = 0.0, 0
        for start in range(0, len(Hs), cfg.batch):
            idx = order[start:start + cfg.batch]
            toks, records = mask_batch(encoder, [Hs[i] for i in idx], rng)
            loss = loss_and_grads(encoder, toks, records)
            if not np.isfinite(loss):
                raise NumericError("masked loss became non-finite")
            optimizer_step(params, encoder.grads(), state, names)
            total += loss * len(idx)
            count += len(idx)
        trace.append(total / count)
    return encoder, trace


def evaluate_masked_loss(encoder: ChannelEncoder, dataset, seed: int = 0,
                         batch: int = 64) -> float:
    """Mean masked loss over ``dataset`` without updating anything."""
    rng = np.random.default_rng(seed)
    Hs = list(dataset)
    total = 0.0
    for start in range(0, len(Hs), batch):
        chunk = Hs[start:start + batch]
        toks, records = mask_batch(encoder, chunk, rng)
        loss, _, _ = masked_loss(encoder.forward(toks), encoder.W_dec,
                                 records)
        total += loss * len(chunk)
    return total / len(Hs)


# -- embedder for full channel sets -----------------------------------------

KINDS = ("direct", "bs_ris", "ris_user")


class ChannelEmbedder:
    """One :class:`ChannelEncoder` per link type of a ChannelSet.

    The three link types have different shapes, so each gets its own patch
    layout and weights; all share the model width D.
    """

    def __init__(self, N_t: int, N_r: int, M: int, dim: int = 16,
                 blocks: int = 2, heads: int = 2, seed: int = 0,
                 patches: Optional[Dict[str, int]] = None):
        patches = patches or {}
        shapes = {"direct": (N_r, N_t), "bs_ris": (M, N_t),
                  "ris_user": (N_r, M)}
        self.dim = dim
        self.encoders = {
            kind: ChannelEncoder(*shapes[kind], P=patches.get(kind), dim=dim,
                                 blocks=blocks, heads=heads, seed=seed + i)
            for i, kind in enumerate(KINDS)}

    @staticmethod
    def matrices_by_kind(channel_sets) -> Dict[str, list]:
        out = {k: [] for k in KINDS}
        for ch in channel_sets:
            out["direct"].extend(ch.direct)
            out["bs_ris"].append(ch.bs_ris)
            out["ris_user"].extend(ch.ris_user)
        return out

    def finetune(self, channel_sets, cfg: Optional[FinetuneConfig] = None,
                 **overrides):
        """Fine-tune every encoder on its matrices; returns traces by kind."""
        cfg = FinetuneConfig(**overrides) if cfg is None else cfg
        traces = {}
        for kind, Hs in self.matrices_by_kind(channel_sets).items():
            _, traces[kind] = finetune(Hs, self.encoders[kind], cfg)
        return traces

    def embed_state(self, ch) -> np.ndarray:
        """Concatenated CLS embeddings, order direct users, BS-RIS,
        RIS-user users; length (2K+1)*D."""
        enc = self.encoders
        d = enc["direct"].embed_many(ch.direct)
        r = enc["bs_ris"].embed(ch.bs_ris)[None]
        u = enc["ris_user"].embed_many(ch.ris_user)
        return np.concatenate([d, r, u]).ravel()

    def save(self, path) -> None:
        """RBL1 checkpoint at ``path`` plus a ``.json`` hyperparameter
        sidecar next to it."""
        tensors = {f"{kind}.{k}": v for kind, e in self.encoders.items()
                   for k, v in e.params().items()}
        save_checkpoint(path, tensors)
        meta = {"D": self.dim,
                "encoders": {k: e.hparams for k, e in self.encoders.items()}}
        sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ChannelEmbedder":
        meta = json.loads(sidecar(path).read_text())
        obj = object.__new__(cls)
        obj.dim = meta["D"]
        obj.encoders = {}
        for kind, hp in meta["encoders"].items():
            enc = ChannelEncoder(hp["X"], hp["Y"], P=hp["P"], dim=hp["D"],
                                 blocks=hp["blocks"], heads=hp["heads"],
                                 ffn_dim=hp["ffn_dim"])
            enc.input_scale = hp["input_scale"]
            obj.encoders[kind] = enc
        loaded = load_checkpoint(path)
        for kind, enc in obj.encoders.items():
            sub = {k[len(kind) + 1:]: v for k, v in loaded.items()
                   if k.startswith(kind + ".")}
            assign_params(enc.params(), sub)
        return obj


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def embed_state(ch, embedder: ChannelEmbedder) -> np.ndarray:
    return embedder.embed_state(ch)

"""Tiny pre-norm causal transformer over bytes, with optional low-rank adapters."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .container import read_container, write_container
from .numerics import Tensor
from .numerics.rng import stream

N_SPECIAL = 3
BOS, EOS, PAD = 256, 257, 258
VOCAB_SIZE = 256 + N_SPECIAL

ADAPTER_TARGETS = ("Q", "K", "V", "O", "MLP_up", "MLP_down")
_TARGET_PARAM = {"Q": "attn.q", "K": "attn.k", "V": "attn.v", "O": "attn.o",
                 "MLP_up": "mlp.up", "MLP_down": "mlp.down"}


@dataclass(frozen=True)
class TinyLMConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    seq_len: int = 256
    tie_embeddings: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 8
    alpha_adapter: float | None = None  # defaults to rank, i.e. unit scaling
    target_matrices: tuple[str, ...] = ADAPTER_TARGETS

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("adapter rank must be >= 1")
        bad = set(self.target_matrices) - set(ADAPTER_TARGETS)
        if bad:
            raise ValueError(f"unknown adapter targets {sorted(bad)}")
        object.__setattr__(self, "target_matrices", tuple(sorted(set(self.target_matrices), key=ADAPTER_TARGETS.index)))

    @property
    def scaling(self) -> float:
        alpha = self.rank if self.alpha_adapter is None else self.alpha_adapter
        return float(alpha) / self.rank


def _param_shapes(cfg: TinyLMConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {"tok_emb": (cfg.vocab_size, d), "pos_emb": (cfg.seq_len, d)}
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.q": (d, d), p + "attn.k": (d, d), p + "attn.v": (d, d), p + "attn.o": (d, d),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.up": (d, f), p + "mlp.down": (f, d),
        })
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    if not cfg.tie_embeddings:
        shapes["head"] = (d, cfg.vocab_size)
    return shapes


class TinyLM:
    """Parameters live in ``self.params`` (name -> Tensor).

    Adapter factors are stored as ``<matrix>.lora_A`` (d_in x r) and
    ``<matrix>.lora_B`` (r x d_out); the effective weight is
    ``W + scaling * A @ B``.
    """

    def __init__(self, cfg: TinyLMConfig, params: dict[str, Tensor],
                 adapter: AdapterConfig | None = None, frozen: bool = False):
        self.cfg = cfg
        self.params = params
        self.adapter = adapter
        self.frozen = frozen
        self._set_trainable()

    def _set_trainable(self):
        for name, t in self.params.items():
            if self.frozen:
                t.requires_grad = False
            elif self.adapter is not None:
                t.requires_grad = ".lora_" in name
            else:
                t.requires_grad = True

    def trainable(self) -> dict[str, Tensor]:
        """The parameter registry: tensors that receive gradients and optimizer state."""
        return {k: t for k, t in self.params.items() if t.requires_grad}

    def __call__(self, tokens) -> Tensor:
        return self.forward(tokens)

    def _linear(self, x: Tensor, name: str) -> Tensor:
        y = x @ self.params[name]
        a = self.params.get(name + ".lora_A")
        if a is not None:
            y = y + ((x @ a) @ self.params[name + ".lora_B"]) * self.adapter.scaling
        return y

    def forward(self, tokens) -> Tensor:
        ids = np.asarray(tokens)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
            raise ValueError("tokens must be an integer array [batch, seq]")
        cfg = self.cfg
        b, t = ids.shape
        if t > cfg.seq_len:
            raise ValueError(f"sequence length {t} exceeds {cfg.seq_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise ValueError("token id out of range")
        P = self.params
        h_, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        x = nx.embedding(P["tok_emb"], ids) + nx.embedding(P["pos_emb"], np.arange(t))
        inv = 1.0 / np.sqrt(dh)
        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            h = nx.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
            q, k, v = (self._linear(h, p + "attn." + m).reshape(b, t, h_, dh).transpose(0, 2, 1, 3)
                       for m in "qkv")
            att = nx.softmax((q @ k.transpose(0, 1, 3, 2)) * inv, causal=True)
            y = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
            x = x + self._linear(y, p + "attn.o")
            h = nx.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            x = x + self._linear(nx.gelu(self._linear(h, p + "mlp.up")), p + "mlp.down")
        x = nx.layer_norm(x, P["ln_f.g"], P["ln_f.b"])
        head = P["tok_emb"].transpose(1, 0) if cfg.tie_embeddings else P["head"]
        return x @ head


def init_model(cfg: TinyLMConfig, seed: int) -> TinyLM:
    rng = stream(seed, "init", "model")
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith(".g"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.endswith(".b"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = (rng.standard_normal(shape) * 0.02).astype(np.float32)
        params[name] = Tensor(arr, name=name)
    return TinyLM(cfg, params)


def _copy_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(t.data.copy(), name=k) for k, t in params.items()}


def clone_frozen(model: TinyLM) -> TinyLM:
    """Deep copy used as a teacher: no trainable parameters."""
    return TinyLM(model.cfg, _copy_params(model.params), model.adapter, frozen=True)


def clone(model: TinyLM) -> TinyLM:
    return TinyLM(model.cfg, _copy_params(model.params), model.adapter)


def attach_adapter(model: TinyLM, acfg: AdapterConfig, seed: int) -> TinyLM:
    """Copy of ``model`` with low-rank factors on every targeted matrix.

    B starts at zero, so the adapted model computes exactly what the base
    model computes until B is trained.
    """
    if model.adapter is not None:
        raise ValueError("model already carries an adapter")
    params = _copy_params(model.params)
    rng = stream(seed, "init", "adapter")
    for i in range(model.cfg.n_layers):
        for target in acfg.target_matrices:
            name = f"layers.{i}.{_TARGET_PARAM[target]}"
            d_in, d_out = params[name].shape
            if acfg.rank > min(d_in, d_out):
                raise ValueError(f"rank {acfg.rank} exceeds min dimension of {name} {params[name].shape}")
            a = (rng.standard_normal((d_in, acfg.rank)) / np.sqrt(d_in)).astype(np.float32)
            params[name + ".lora_A"] = Tensor(a, name=name + ".lora_A")
            params[name + ".lora_B"] = Tensor(np.zeros((acfg.rank, d_out), dtype=np.float32),
                                              name=name + ".lora_B")
    return TinyLM(model.cfg, params, acfg)


def count_params(model: TinyLM) -> tuple[int, int]:
    total = sum(t.data.size for t in model.params.values())
    trainable = sum(t.data.size for t in model.trainable().values())
    return total, trainable


def param_hash(model: TinyLM) -> str:
    h = hashlib.sha256()
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name].data)
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(model: TinyLM, path) -> Path:
    meta = {
        "config": asdict(model.cfg),
        "adapter": None if model.adapter is None else
        {**asdict(model.adapter), "target_matrices": list(model.adapter.target_matrices)},
    }
    blocks = [(name, model.params[name].data) for name in sorted(model.params)]
    return write_container(path, "model", meta, blocks)


def load_checkpoint(path) -> TinyLM:
    meta, blocks = read_container(path, kind="model")
    cfg = TinyLMConfig(**meta["config"])
    acfg = None
    if meta.get("adapter") is not None:
        a = dict(meta["adapter"])
        a["target_matrices"] = tuple(a["target_matrices"])
        acfg = AdapterConfig(**a)
    expected = set(_param_shapes(cfg))
    missing = expected - set(blocks)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
    params = {k: Tensor(v.astype(np.float32, copy=False), name=k) for k, v in blocks.items()}
    return TinyLM(cfg, params, acfg)

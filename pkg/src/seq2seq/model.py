"""
Encoder-decoder transformer with a freezable backbone and adapter slots.

Layout (pre-norm):
    embed * sqrt(h) -> [embedding adapter] -> + sinusoidal positions -> dropout
    N x (self-attn, [adapter before_ff], feed-forward, [adapter after_ff])
    final layer norm
The decoder adds cross-attention after self-attention. Output logits reuse
the token embedding matrix.
"""

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from numcore import Parameter, Tensor
from numcore import functional as F

from .adapter import AdapterConfig, AdapterLayer, adapter_init
from .errors import ConfigError, CoverageError, SequenceLengthError

logger = logging.getLogger(__name__)

NEG_INF = -1e9
PAD_ID = 0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    model_dim: int = 32
    ff_dim: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    max_len: int = 64
    dropout: float = 0.1
    attention_dropout: float = 0.1
    adapter_placement: str = "after_ff"
    use_embedding_adapters: bool = True
    train_new_embedding_rows: bool = False

    def validate(self) -> None:
        violations = []
        for field_name in ("vocab_size", "model_dim", "ff_dim", "heads", "max_len"):
            if getattr(self, field_name) < 1:
                violations.append(f"{field_name} must be >= 1 (got {getattr(self, field_name)})")
        for field_name in ("enc_layers", "dec_layers"):
            if getattr(self, field_name) < 0:
                violations.append(f"{field_name} must be >= 0 (got {getattr(self, field_name)})")
        if self.heads >= 1 and self.model_dim % self.heads != 0:
            violations.append(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            violations.append(f"dropout must be in [0, 1) (got {self.dropout})")
        if not 0.0 <= self.attention_dropout < 1.0:
            violations.append(f"attention_dropout must be in [0, 1) (got {self.attention_dropout})")
        if self.adapter_placement not in ("after_ff", "before_ff"):
            violations.append(f"adapter_placement must be after_ff or before_ff (got {self.adapter_placement!r})")
        if violations:
            raise ConfigError(violations)

    def to_dict(self) -> Dict:
        return asdict(self)

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


def adapter_slots(cfg: ModelConfig) -> List[str]:
    """Slot names an AdapterSet must cover for this configuration."""
    slots = []
    if cfg.use_embedding_adapters:
        slots.append("encoder.embedding")
    slots.extend(f"encoder.layers.{i}" for i in range(cfg.enc_layers))
    if cfg.use_embedding_adapters:
        slots.append("decoder.embedding")
    slots.extend(f"decoder.layers.{i}" for i in range(cfg.dec_layers))
    return slots


class AdapterSet:
    """A named group of adapters, one per model slot."""

    def __init__(self, set_id: str, adapters: Dict[str, AdapterLayer]):
        self.set_id = set_id
        self.adapters = dict(adapters)

    @classmethod
    def create(
        cls,
        set_id: str,
        model_cfg: ModelConfig,
        adapter_cfg: AdapterConfig,
        rng: np.random.Generator,
    ) -> "AdapterSet":
        if adapter_cfg.model_dim != model_cfg.model_dim:
            raise ConfigError([
                f"adapter model_dim {adapter_cfg.model_dim} != model model_dim {model_cfg.model_dim}"
            ])
        adapters = {
            slot: adapter_init(adapter_cfg, rng, name=f"adapters.{slot}")
            for slot in adapter_slots(model_cfg)
        }
        return cls(set_id, adapters)

    def __contains__(self, slot: str) -> bool:
        return slot in self.adapters

    def __getitem__(self, slot: str) -> AdapterLayer:
        return self.adapters[slot]

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for slot in sorted(self.adapters):
            params.extend(self.adapters[slot].parameters())
        return params

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.data[...] = state[p.name]


# ---------------------------------------------------------------------------
# Backbone building blocks
# ---------------------------------------------------------------------------

class Linear:
    def __init__(self, name: str, fan_in: int, fan_out: int, bound: float, rng: np.random.Generator):
        self.weight = Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), f"{name}.weight")
        self.bias = Parameter(np.zeros(fan_out), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(F.matmul(x, self.weight), self.bias)

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]


class LayerNorm:
    def __init__(self, name: str, dim: int):
        self.scale = Parameter(np.ones(dim), f"{name}.scale")
        self.offset = Parameter(np.zeros(dim), f"{name}.offset")

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.scale, self.offset)

    def parameters(self) -> List[Parameter]:
        return [self.scale, self.offset]


class MultiHeadAttention:
    def __init__(self, name: str, cfg: ModelConfig, bound: float, rng: np.random.Generator):
        h = cfg.model_dim
        self.heads = cfg.heads
        self.head_dim = h // cfg.heads
        self.q = Linear(f"{name}.q", h, h, bound, rng)
        self.k = Linear(f"{name}.k", h, h, bound, rng)
        self.v = Linear(f"{name}.v", h, h, bound, rng)
        self.o = Linear(f"{name}.o", h, h, bound, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return F.transpose(F.reshape(x, (b, t, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(
        self,
        query: Tensor,
        memory: Tensor,
        mask: np.ndarray,
        attention_dropout: float,
        train: bool,
        rng: Optional[np.random.Generator],
    ) -> Tensor:
        q = self._split(self.q(query))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.head_dim))
        probs = F.softmax(F.add(scores, mask))
        probs = F.dropout(probs, attention_dropout, rng, train)
        context = F.transpose(F.matmul(probs, v), (0, 2, 1, 3))
        b, t = context.shape[0], context.shape[1]
        return self.o(F.reshape(context, (b, t, self.heads * self.head_dim)))

    def parameters(self) -> List[Parameter]:
        return self.q.parameters() + self.k.parameters() + self.v.parameters() + self.o.parameters()


class FeedForward:
    def __init__(self, name: str, cfg: ModelConfig, bound: float, rng: np.random.Generator):
        self.fc1 = Linear(f"{name}.fc1", cfg.model_dim, cfg.ff_dim, bound, rng)
        self.fc2 = Linear(f"{name}.fc2", cfg.ff_dim, cfg.model_dim, bound, rng)

    def __call__(self, x: Tensor, dropout: float, train: bool, rng) -> Tensor:
        return self.fc2(F.dropout(F.relu(self.fc1(x)), dropout, rng, train))

    def parameters(self) -> List[Parameter]:
        return self.fc1.parameters() + self.fc2.parameters()


class EncoderLayer:
    def __init__(self, name: str, cfg: ModelConfig, bound: float, rng: np.random.Generator):
        self.cfg = cfg
        self.self_attn_ln = LayerNorm(f"{name}.self_attn_ln", cfg.model_dim)
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", cfg, bound, rng)
        self.ff_ln = LayerNorm(f"{name}.ff_ln", cfg.model_dim)
        self.ff = FeedForward(f"{name}.ff", cfg, bound, rng)

    def _feed_forward_block(self, x: Tensor, adapter: Optional[AdapterLayer], train: bool, rng) -> Tensor:
        cfg = self.cfg
        if adapter is not None and cfg.adapter_placement == "before_ff":
            x = adapter(x)
        h = self.ff(self.ff_ln(x), cfg.dropout, train, rng)
        x = F.add(x, F.dropout(h, cfg.dropout, rng, train))
        if adapter is not None and cfg.adapter_placement == "after_ff":
            x = adapter(x)
        return x

    def __call__(self, x: Tensor, mask: np.ndarray, adapter: Optional[AdapterLayer], train: bool, rng) -> Tensor:
        cfg = self.cfg
        normed = self.self_attn_ln(x)
        h = self.self_attn(normed, normed, mask, cfg.attention_dropout, train, rng)
        x = F.add(x, F.dropout(h, cfg.dropout, rng, train))
        return self._feed_forward_block(x, adapter, train, rng)

    def parameters(self) -> List[Parameter]:
        return (
            self.self_attn_ln.parameters() + self.self_attn.parameters()
            + self.ff_ln.parameters() + self.ff.parameters()
        )


class DecoderLayer(EncoderLayer):
    def __init__(self, name: str, cfg: ModelConfig, bound: float, rng: np.random.Generator):
        super().__init__(name, cfg, bound, rng)
        self.cross_attn_ln = LayerNorm(f"{name}.cross_attn_ln", cfg.model_dim)
        self.cross_attn = MultiHeadAttention(f"{name}.cross_attn", cfg, bound, rng)

    def __call__(
        self,
        x: Tensor,
        self_mask: np.ndarray,
        memory: Tensor,
        memory_mask: np.ndarray,
        adapter: Optional[AdapterLayer],
        train: bool,
        rng,
    ) -> Tensor:
        cfg = self.cfg
        normed = self.self_attn_ln(x)
        h = self.self_attn(normed, normed, self_mask, cfg.attention_dropout, train, rng)
        x = F.add(x, F.dropout(h, cfg.dropout, rng, train))
        h = self.cross_attn(self.cross_attn_ln(x), memory, memory_mask, cfg.attention_dropout, train, rng)
        x = F.add(x, F.dropout(h, cfg.dropout, rng, train))
        return self._feed_forward_block(x, adapter, train, rng)

    def parameters(self) -> List[Parameter]:
        return super().parameters() + self.cross_attn_ln.parameters() + self.cross_attn.parameters()


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    positions = np.arange(max_len)[:, None]
    rates = np.exp(-np.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)
    angles = positions * rates[None, :]
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


def pad_sequences(seqs: Sequence[Sequence[int]], pad_id: int = PAD_ID) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad to a [B, T] id matrix; returns (ids, is_pad)."""
    width = max((len(s) for s in seqs), default=0)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    is_pad = np.ones((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        is_pad[i, :len(s)] = False
    return ids, is_pad


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------

class Seq2SeqModel:
    """Transformer backbone plus at most one active AdapterSet."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        h = cfg.model_dim
        bound = 1.0 / np.sqrt(h)
        self.embed = Parameter(rng.uniform(-bound, bound, size=(cfg.vocab_size, h)), "embed.weight")
        self.encoder_layers = [EncoderLayer(f"encoder.layers.{i}", cfg, bound, rng) for i in range(cfg.enc_layers)]
        self.encoder_ln = LayerNorm("encoder.final_ln", h)
        self.decoder_layers = [DecoderLayer(f"decoder.layers.{i}", cfg, bound, rng) for i in range(cfg.dec_layers)]
        self.decoder_ln = LayerNorm("decoder.final_ln", h)
        self.positions = sinusoidal_positions(cfg.max_len, h)
        self.embed_scale = float(np.sqrt(h))
        self.active_adapters: Optional[AdapterSet] = None

    # -- parameters ---------------------------------------------------------

    def backbone_parameters(self) -> List[Parameter]:
        params = [self.embed]
        for layer in self.encoder_layers:
            params.extend(layer.parameters())
        params.extend(self.encoder_ln.parameters())
        for layer in self.decoder_layers:
            params.extend(layer.parameters())
        params.extend(self.decoder_ln.parameters())
        return params

    def parameters(self) -> List[Parameter]:
        params = self.backbone_parameters()
        if self.active_adapters is not None:
            params.extend(self.active_adapters.parameters())
        return params

    def trainable_parameters(self) -> List[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for p in self.parameters():
            yield p.name, p

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.backbone_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for p in self.backbone_parameters():
            if p.name not in state:
                raise KeyError(f"state is missing backbone parameter '{p.name}'")
            if state[p.name].shape != p.shape:
                raise ConfigError([f"{p.name}: shape {state[p.name].shape} != {p.shape}"])
            p.data[...] = state[p.name]

    def backbone_hash(self) -> str:
        digest = hashlib.sha256()
        for p in self.backbone_parameters():
            digest.update(p.name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()

    def view(self, private_embedding: bool = False) -> "Seq2SeqModel":
        """Shallow copy sharing the backbone, with its own active-adapter slot.

        With private_embedding the copy owns a separate embedding matrix, so
        training its rows never touches the shared backbone.
        """
        clone = copy.copy(self)
        clone.active_adapters = None
        if private_embedding:
            clone.embed = Parameter(self.embed.data, self.embed.name, frozen=self.embed.frozen)
        return clone

    def _adapter(self, slot: str) -> Optional[AdapterLayer]:
        if self.active_adapters is None:
            return None
        return self.active_adapters.adapters.get(slot)

    # -- forward passes ------------------------------------------------------

    def _embed(self, ids: np.ndarray, slot: str, train: bool, rng) -> Tensor:
        x = F.mul(F.embedding_lookup(self.embed, ids), self.embed_scale)
        adapter = self._adapter(slot) if self.cfg.use_embedding_adapters else None
        if adapter is not None:
            x = adapter(x)
        x = F.add(x, self.positions[: ids.shape[1]])
        return F.dropout(x, self.cfg.dropout, rng, train)

    def _check_length(self, seqs: Sequence[Sequence[int]]) -> None:
        for s in seqs:
            if len(s) > self.cfg.max_len:
                raise SequenceLengthError(len(s), self.cfg.max_len)

    def encode_batch(
        self,
        src: Sequence[Sequence[int]],
        tags: Sequence[int],
        train_mode: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, np.ndarray]:
        """Encode tag-prefixed sources; returns states [B, T, h] and the pad mask."""
        seqs = [[int(tag)] + [int(t) for t in s] for s, tag in zip(src, tags)]
        self._check_length(seqs)
        ids, is_pad = pad_sequences(seqs)
        mask = np.where(is_pad, NEG_INF, 0.0)[:, None, None, :]
        x = self._embed(ids, "encoder.embedding", train_mode, rng)
        for i, layer in enumerate(self.encoder_layers):
            x = layer(x, mask, self._adapter(f"encoder.layers.{i}"), train_mode, rng)
        return self.encoder_ln(x), is_pad

    def decode_batch(
        self,
        memory: Tensor,
        memory_pad: np.ndarray,
        dec_inputs: Sequence[Sequence[int]],
        train_mode: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Causal decoder over explicit decoder inputs; returns logits [B, T, V]."""
        self._check_length(dec_inputs)
        ids, _ = pad_sequences(dec_inputs)
        t = ids.shape[1]
        causal = np.triu(np.full((t, t), NEG_INF), k=1)[None, None, :, :]
        memory_mask = np.where(memory_pad, NEG_INF, 0.0)[:, None, None, :]
        x = self._embed(ids, "decoder.embedding", train_mode, rng)
        for i, layer in enumerate(self.decoder_layers):
            x = layer(x, causal, memory, memory_mask, self._adapter(f"decoder.layers.{i}"), train_mode, rng)
        x = self.decoder_ln(x)
        return F.matmul(x, F.transpose(self.embed, (1, 0)))

    def forward_batch(
        self,
        src: Sequence[Sequence[int]],
        tgt: Sequence[Sequence[int]],
        tags: Sequence[int],
        train_mode: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Teacher-forced logits [B, T, V] predicting each tgt token."""
        memory, memory_pad = self.encode_batch(src, tags, train_mode, rng)
        dec_inputs = [[int(tag)] + [int(x) for x in t[:-1]] for t, tag in zip(tgt, tags)]
        return self.decode_batch(memory, memory_pad, dec_inputs, train_mode, rng)

    def next_token_logprobs(
        self,
        memory: Tensor,
        memory_pad: np.ndarray,
        prefixes: Sequence[Sequence[int]],
    ) -> np.ndarray:
        """Log-probabilities [n, V] of the next token after equal-length prefixes."""
        logits = self.decode_batch(memory, memory_pad, prefixes)
        last = logits.data[:, -1, :]
        shifted = last - np.max(last, axis=-1, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))

    def encode(
        self,
        src_ids: Sequence[int],
        lang_tag: int,
        train_mode: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        states, _ = self.encode_batch([src_ids], [lang_tag], train_mode, rng)
        return F.reshape(states, states.shape[1:])

    def decode_teacher_forced(
        self,
        enc_out: Tensor,
        tgt_ids: Sequence[int],
        lang_tag: int,
        train_mode: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        memory = F.reshape(enc_out, (1,) + enc_out.shape)
        memory_pad = np.zeros((1, enc_out.shape[0]), dtype=bool)
        dec_inputs = [[int(lang_tag)] + [int(x) for x in list(tgt_ids)[:-1]]]
        logits = self.decode_batch(memory, memory_pad, dec_inputs, train_mode, rng)
        return F.reshape(logits, logits.shape[1:])


def build_model(cfg: ModelConfig, rng: np.random.Generator) -> Seq2SeqModel:
    """Randomly initialized backbone: projections and embeddings ~ U(-1/sqrt(h), 1/sqrt(h))."""
    model = Seq2SeqModel(cfg, rng)
    logger.info(
        f"Built model: h={cfg.model_dim}, layers={cfg.enc_layers}+{cfg.dec_layers}, "
        f"V={cfg.vocab_size}, backbone params={sum(p.size for p in model.backbone_parameters()):,}"
    )
    return model


def freeze_backbone(model: Seq2SeqModel, new_rows: Optional[Sequence[int]] = None) -> None:
    """Freeze every backbone parameter; adapters stay trainable.

    With cfg.train_new_embedding_rows and `new_rows` given, the embedding
    stays trainable but only those rows are ever updated.
    """
    for p in model.backbone_parameters():
        p.frozen = True
        p.update_mask = None
    if model.cfg.train_new_embedding_rows and new_rows:
        mask = np.zeros(model.cfg.vocab_size, dtype=bool)
        mask[list(new_rows)] = True
        model.embed.frozen = False
        model.embed.update_mask = mask
    if model.active_adapters is not None:
        for p in model.active_adapters.parameters():
            p.frozen = False


def unfreeze_backbone(model: Seq2SeqModel) -> None:
    """Full fine-tuning: every backbone parameter trainable."""
    for p in model.backbone_parameters():
        p.frozen = False
        p.update_mask = None


def attach_adapter_set(model: Seq2SeqModel, adapter_set: AdapterSet) -> Optional[AdapterSet]:
    """Make `adapter_set` the active set; returns the previously active one."""
    for slot in adapter_slots(model.cfg):
        if slot not in adapter_set:
            raise CoverageError(slot, adapter_set.set_id)
    previous = model.active_adapters
    model.active_adapters = adapter_set
    return previous


def detach_adapters(model: Seq2SeqModel) -> Optional[AdapterSet]:
    previous = model.active_adapters
    model.active_adapters = None
    return previous

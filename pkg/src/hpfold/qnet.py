"""Transformer encoder with a dueling head, mapping a fold observation to 5 Q-values.

The encoder layer is written out explicitly (post-norm, ReLU FFN, no
dropout) so attention weights and layer-norm inputs can be inspected.
Gradients come from torch autograd.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .lattice import N_ACTIONS

CHECKPOINT_MAGIC = b"HPFOLDQN"
CHECKPOINT_VERSION = 1
LAYER_NORM_EPS = 1e-5


@dataclass
class NetworkConfig:
    d_model: int = 64
    n_layers: int = 1
    n_heads: int = 4
    d_ff: Optional[int] = None  # defaults to 4 * d_model
    d_type: int = 8
    action_count: int = N_ACTIONS

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "d_type", "action_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the sinusoidal encoding")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, frequency 10000^(-2k/d)."""
    if length < 1 or d_model < 2 or d_model % 2:
        raise ValueError("need length >= 1 and an even d_model >= 2")
    i = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = i / np.power(10000.0, 2 * k / d_model)
    pe = np.empty((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def _init_linear(layer: nn.Linear) -> None:
    bound = 1.0 / math.sqrt(layer.in_features)
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.zeros_(layer.bias)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.d_k = cfg.d_k
        self.w_q = nn.Linear(cfg.d_model, cfg.d_model)
        self.w_k = nn.Linear(cfg.d_model, cfg.d_model)
        self.w_v = nn.Linear(cfg.d_model, cfg.d_model)
        self.w_o = nn.Linear(cfg.d_model, cfg.d_model)
        self.norm1 = nn.LayerNorm(cfg.d_model, eps=LAYER_NORM_EPS)
        self.ffn1 = nn.Linear(cfg.d_model, cfg.d_ff)
        self.ffn2 = nn.Linear(cfg.d_ff, cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model, eps=LAYER_NORM_EPS)
        for lin in (self.w_q, self.w_k, self.w_v, self.w_o, self.ffn1, self.ffn2):
            _init_linear(lin)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_k).transpose(1, 2)

    def attention(self, h: torch.Tensor):
        """Multi-head self-attention output (before W_O) and the weights (B, H, T, T)."""
        q, k, v = self._split(self.w_q(h)), self._split(self.w_k(h)), self._split(self.w_v(h))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(h.shape)
        return out, weights

    def forward(self, h: torch.Tensor, return_attention: bool = False):
        heads, weights = self.attention(h)
        x_att = self.norm1(h + self.w_o(heads))
        x_ffn = self.ffn2(F.relu(self.ffn1(x_att)))
        out = self.norm2(x_att + x_ffn)
        if return_attention:
            return out, weights
        return out


class DuelingTransformerQNet(nn.Module):
    """Q(s, .) = V(s) + A(s, .) - mean A(s, .), read off the CLS token."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.type_embedding = nn.Embedding(2, cfg.d_type)
        self.input_proj = nn.Linear(4 + cfg.d_type, cfg.d_model)
        self.cls_token = nn.Parameter(torch.empty(cfg.d_model))
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.value_head = nn.Linear(cfg.d_model, 1)
        self.advantage_head = nn.Linear(cfg.d_model, cfg.action_count)
        nn.init.normal_(self.type_embedding.weight, std=0.02)
        nn.init.normal_(self.cls_token, std=0.02)
        for lin in (self.input_proj, self.value_head, self.advantage_head):
            _init_linear(lin)
        self._pe_cache: dict = {}

    def _pe(self, length: int, like: torch.Tensor) -> torch.Tensor:
        key = (length, like.dtype)
        if key not in self._pe_cache:
            self._pe_cache[key] = torch.as_tensor(
                positional_encoding(length, self.cfg.d_model), dtype=like.dtype)
        return self._pe_cache[key]

    def _as_batch(self, obs) -> torch.Tensor:
        dtype = self.cls_token.dtype
        x = torch.as_tensor(obs, dtype=dtype)
        if x.dim() == 1:
            x = x.unsqueeze(0)
        if x.dim() != 2 or x.shape[1] % 5 or x.shape[1] < 10:
            raise ValueError(
                f"observation must be a flat vector of length L*5 with L >= 2, got shape {tuple(x.shape)}")
        return x

    def embed(self, obs) -> torch.Tensor:
        """Token sequence (B, L+1, d_model): CLS then projected residues plus positional encoding."""
        x = self._as_batch(obs)
        b = x.shape[0]
        res = x.view(b, -1, 5)
        length = res.shape[1]
        types = res[:, :, 3].round().long().clamp(0, 1)
        tokens = torch.cat([res[:, :, 0:3], self.type_embedding(types), res[:, :, 4:5]], dim=-1)
        h = self.input_proj(tokens) + self._pe(length, x)
        cls = self.cls_token.expand(b, 1, -1)
        return torch.cat([cls, h], dim=1)

    def encode(self, obs) -> torch.Tensor:
        h = self.embed(obs)
        for layer in self.layers:
            h = layer(h)
        return h[:, 0]

    def heads(self, obs) -> tuple[torch.Tensor, torch.Tensor]:
        """State value (B,) and raw advantages (B, 5)."""
        cls = self.encode(obs)
        return self.value_head(cls).squeeze(-1), self.advantage_head(cls)

    def forward(self, obs) -> torch.Tensor:
        value, adv = self.heads(obs)
        q = dueling_combine(value, adv)
        if not torch.isfinite(q).all():
            bad = (~torch.isfinite(q)).any(dim=-1).nonzero().flatten().tolist()
            raise FloatingPointError(f"non-finite Q-values for batch rows {bad[:10]}")
        return q


def dueling_combine(value: torch.Tensor, advantage: torch.Tensor) -> torch.Tensor:
    return value.unsqueeze(-1) + advantage - advantage.mean(dim=-1, keepdim=True)


def masked_argmax(q_values, mask) -> int:
    """Best allowed action; ties go to the lowest action code."""
    q = np.asarray(q_values, dtype=np.float64).reshape(-1)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if not m.any():
        raise ValueError("every action is masked; the episode should already be over")
    return int(np.argmax(np.where(m, q, -np.inf)))


def weighted_td_loss(q_taken: torch.Tensor, targets: torch.Tensor,
                     weights: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Sum of w_j * delta_j^2 and the TD errors delta_j = y_j - Q(s_j, a_j)."""
    delta = targets - q_taken
    return (weights * delta.pow(2)).sum(), delta


def build_network(cfg: NetworkConfig, seed: Optional[int] = None) -> DuelingTransformerQNet:
    if seed is not None:
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            return DuelingTransformerQNet(cfg)
        finally:
            torch.random.set_rng_state(gen_state)
    return DuelingTransformerQNet(cfg)


# -- checkpoint format -------------------------------------------------------
# magic(8) | version u32 | header_len u32 | header JSON | n_blocks u32 |
# blocks: name_len u16, name, ndim u8, dims u32 * ndim, float32 LE payload


def write_blocks(path, header: dict, blocks: dict[str, np.ndarray]) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_blocks(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, head_len = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(data[pos:pos + head_len].decode("utf-8"))
    pos += head_len
    (n_blocks,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
        pos += 4 * count
    return header, blocks


def network_blocks(net: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}


def load_network_blocks(net: nn.Module, blocks: dict[str, np.ndarray], prefix: str = "") -> None:
    own = net.state_dict()
    missing = [k for k in own if prefix + k not in blocks]
    if missing:
        raise ValueError(f"checkpoint lacks parameters {missing[:5]}")
    state = {}
    for k, v in own.items():
        arr = blocks[prefix + k]
        if tuple(arr.shape) != tuple(v.shape):
            raise ValueError(f"shape mismatch for {k}: checkpoint {arr.shape} vs network {tuple(v.shape)}")
        state[k] = torch.from_numpy(arr).to(v.dtype)
    net.load_state_dict(state)


def save_network(net: DuelingTransformerQNet, path, metadata: Optional[dict] = None) -> None:
    header = {"network": asdict(net.cfg), "metadata": metadata or {}}
    write_blocks(path, header, network_blocks(net))


def load_network(path) -> tuple[DuelingTransformerQNet, dict]:
    header, blocks = read_blocks(path)
    net = DuelingTransformerQNet(NetworkConfig(**header["network"]))
    prefix = "policy." if any(k.startswith("policy.") for k in blocks) else ""
    load_network_blocks(net, blocks, prefix)
    return net, header.get("metadata", {})

"""Dual-stream network: spatial-temporal pose encoder with a <POSE> class
token, BERT-style text encoder, alignment pooling heads and a 3D regression
head."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.dropout = dropout

    def forward(self, x, keep=None):
        # x: (N, L, C); keep: optional (N, L) bool, False marks padding keys
        N, L, C = x.shape
        q, k, v = self.qkv(x).reshape(N, L, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        mask = keep[:, None, None, :] if keep is not None else None
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask,
                                             dropout_p=self.dropout if self.training else 0.0)
        return self.proj(out.transpose(1, 2).reshape(N, L, C))


def mlp(dim: int, ratio: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, ratio * dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(ratio * dim, dim))


class STBlock(nn.Module):
    """Spatial attention (joints within a frame), then temporal attention
    (frames of one joint), then feed-forward; pre-norm residuals."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, dropout: float):
        super().__init__()
        self.norm_s = nn.LayerNorm(dim)
        self.attn_s = Attention(dim, heads, dropout)
        self.norm_t = nn.LayerNorm(dim)
        self.attn_t = Attention(dim, heads, dropout)
        self.norm_f = nn.LayerNorm(dim)
        self.mlp = mlp(dim, mlp_ratio, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        B, T, J, C = x.shape
        h = self.attn_s(self.norm_s(x).reshape(B * T, J, C)).reshape(B, T, J, C)
        x = x + self.drop(h)
        h = self.norm_t(x).transpose(1, 2).reshape(B * J, T, C)
        h = self.attn_t(h).reshape(B, J, T, C).transpose(1, 2)
        x = x + self.drop(h)
        return x + self.drop(self.mlp(self.norm_f(x)))


class PoseEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        C = cfg.C_f
        self.lift = nn.Linear(cfg.C_in, C)
        self.pose_token = nn.Parameter(torch.zeros(cfg.J, C))
        self.temporal_pos = nn.Parameter(torch.zeros(cfg.T_max + 1, C))
        self.joint_pos = nn.Parameter(torch.zeros(cfg.J, C))
        self.blocks = nn.ModuleList(STBlock(C, cfg.heads, cfg.mlp_ratio, cfg.dropout)
                                    for _ in range(cfg.l1 + cfg.l2))
        self.norm_out = nn.LayerNorm(C)
        self.use_temporal_pos = True
        for p in (self.pose_token, self.temporal_pos, self.joint_pos):
            nn.init.trunc_normal_(p, std=0.02)

    def forward(self, x):
        """x: (B, T, J, C_in) -> (features after block l1, final features),
        each (B, T+1, J, C_f) with the <POSE> token at temporal index 0."""
        cfg = self.cfg
        if x.dim() != 4 or x.shape[2] != cfg.J or x.shape[3] != cfg.C_in:
            raise ValueError(f"expected (B, T, {cfg.J}, {cfg.C_in}) input, got {tuple(x.shape)}")
        B, T = x.shape[:2]
        if T > cfg.T_max:
            raise ValueError(f"sequence length {T} exceeds T_max={cfg.T_max}")
        h = self.lift(x)
        tok = self.pose_token.expand(B, 1, cfg.J, cfg.C_f)
        h = torch.cat([tok, h], dim=1) + self.joint_pos
        if self.use_temporal_pos:
            h = h + self.temporal_pos[: T + 1, None, :]
        tap = None
        for i, blk in enumerate(self.blocks):
            h = blk(h)
            if i + 1 == cfg.l1:
                tap = h
        return tap, self.norm_out(h)


class TextBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = mlp(dim, mlp_ratio, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, keep):
        x = x + self.drop(self.attn(self.norm1(x), keep))
        return x + self.drop(self.mlp(self.norm2(x)))


class TextEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        C = cfg.C_f
        self.tok_emb = nn.Embedding(cfg.vocab_size, C)
        self.pos_emb = nn.Parameter(torch.zeros(cfg.text_max_len, C))
        self.emb_norm = nn.LayerNorm(C)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(TextBlock(C, cfg.heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.l3))
        self.norm_out = nn.LayerNorm(C)
        nn.init.trunc_normal_(self.tok_emb.weight, std=0.02)
        nn.init.trunc_normal_(self.pos_emb, std=0.02)

    def forward(self, ids, keep=None):
        """ids: (B, N) token ids (padding = 0) -> (B, N, C_f) features."""
        if ids.shape[1] > self.cfg.text_max_len:
            raise ValueError(f"text length {ids.shape[1]} exceeds text_max_len={self.cfg.text_max_len}")
        if keep is None:
            keep = ids != 0
        h = self.drop(self.emb_norm(self.tok_emb(ids) + self.pos_emb[: ids.shape[1]]))
        for blk in self.blocks:
            h = blk(h, keep)
        return self.norm_out(h)


def _hidden_stack(dim: int, n: int, dropout: float) -> nn.Sequential:
    layers = []
    for _ in range(n):
        layers += [nn.Linear(dim, dim), nn.GELU(), nn.LayerNorm(dim)]
        if dropout:
            layers.append(nn.Dropout(dropout))
    return nn.Sequential(*layers)


class PosePool(nn.Module):
    """<POSE> token (J x C_f) -> per-joint MLP -> softmax-weighted joint sum
    -> linear to align_dim -> unit norm."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.hidden = _hidden_stack(cfg.C_f, cfg.pool_layers, 0.0)
        self.joint_logits = nn.Parameter(torch.zeros(cfg.J))
        self.out = nn.Linear(cfg.C_f, cfg.align_dim)

    def reduce(self, tok):
        w = torch.softmax(self.joint_logits, dim=0)
        return torch.einsum("bjc,j->bc", tok, w)

    def forward(self, feats_l1):
        tok = self.hidden(feats_l1[:, 0])
        return F.normalize(self.out(self.reduce(tok)), dim=-1)


class TextPool(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.hidden = _hidden_stack(cfg.C_f, cfg.pool_layers, cfg.dropout)
        self.out = nn.Linear(cfg.C_f, cfg.align_dim)

    def forward(self, feats):
        return F.normalize(self.out(self.hidden(feats[:, 0])), dim=-1)


class RegressionHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.linear = nn.Linear(cfg.C_f, 3)

    def forward(self, feats_final):
        return self.linear(feats_final[:, 1:])


class ActionPose(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.pose_encoder = PoseEncoder(cfg)
        self.text_encoder = TextEncoder(cfg)
        self.pose_pool = PosePool(cfg)
        self.text_pool = TextPool(cfg)
        self.head = RegressionHead(cfg)

    def pose_encode(self, x):
        return self.pose_encoder(x)

    def text_encode(self, ids):
        return self.text_encoder(ids)

    def embed_pose(self, x):
        return self.pose_pool(self.pose_encoder(x)[0])

    def embed_text(self, ids):
        return self.text_pool(self.text_encoder(ids))

    def regress(self, x):
        return self.head(self.pose_encoder(x)[1])

    def forward(self, x, ids=None):
        """Returns (h_P, h_W or None, 3D prediction). ``ids`` is (B, K+1, N)."""
        tap, final = self.pose_encoder(x)
        h_p = self.pose_pool(tap)
        h_w = None
        if ids is not None:
            B, K1, N = ids.shape
            h_w = self.embed_text(ids.reshape(B * K1, N)).reshape(B, K1, -1)
        return h_p, h_w, self.head(final)


# parameter groups updated during fine-tuning
FINETUNE_PREFIXES = ("pose_encoder.", "head.")


def finetune_parameter_names(model: nn.Module) -> list[str]:
    return [n for n, _ in model.named_parameters() if n.startswith(FINETUNE_PREFIXES)]


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form count of trainable parameters for ``cfg``."""
    C, r = cfg.C_f, cfg.mlp_ratio
    ln = 2 * C
    attn = (3 * C * C + 3 * C) + (C * C + C)
    ff = (C * r * C + r * C) + (r * C * C + C)
    st_block = 3 * ln + 2 * attn + ff
    text_block = 2 * ln + attn + ff
    pose_enc = (cfg.C_in * C + C) + cfg.J * C + (cfg.T_max + 1) * C + cfg.J * C + (cfg.l1 + cfg.l2) * st_block + ln
    text_enc = cfg.vocab_size * C + cfg.text_max_len * C + ln + cfg.l3 * text_block + ln
    hidden = cfg.pool_layers * (C * C + C + ln)
    pool_pose = hidden + cfg.J + (C * cfg.align_dim + cfg.align_dim)
    pool_text = hidden + (C * cfg.align_dim + cfg.align_dim)
    head = C * 3 + 3
    return pose_enc + text_enc + pool_pose + pool_text + head

"""Small decoder-only language model for smoke-scale training.

Pure torch, built from a config dict so runs are fully reproducible without
any pretrained download. Projection names follow the common q/k/v/o and
up/down convention so adapter target-module patterns carry over to real
checkpoint architectures.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

TOY_CONFIG = {
    "vocab_size": None,  # filled from the tokenizer
    "d_model": 128,
    "n_layers": 2,
    "n_heads": 4,
    "d_ff": 256,
    "max_len": 512,
}


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model, bias=False)
        self.k_proj = nn.Linear(d_model, d_model, bias=False)
        self.v_proj = nn.Linear(d_model, d_model, bias=False)
        self.o_proj = nn.Linear(d_model, d_model, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        shape = (b, t, self.n_heads, self.head_dim)
        q = self.q_proj(x).view(shape).transpose(1, 2)
        k = self.k_proj(x).view(shape).transpose(1, 2)
        v = self.v_proj(x).view(shape).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.o_proj(out.transpose(1, 2).reshape(b, t, d))


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.up_proj = nn.Linear(d_model, d_ff, bias=False)
        self.down_proj = nn.Linear(d_ff, d_model, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.down_proj(F.gelu(self.up_proj(self.ln2(x))))


class ToyCausalLM(nn.Module):
    def __init__(self, config: dict):
        super().__init__()
        self.config = dict(config)
        d_model = config["d_model"]
        self.tok_embed = nn.Embedding(config["vocab_size"], d_model)
        self.pos_embed = nn.Embedding(config["max_len"], d_model)
        self.blocks = nn.ModuleList(
            [Block(d_model, config["n_heads"], config["d_ff"]) for _ in range(config["n_layers"])]
        )
        self.ln_f = nn.LayerNorm(d_model)
        self.lm_head = nn.Linear(d_model, config["vocab_size"], bias=False)
        self.apply(self._init)

    @staticmethod
    def _init(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, std=0.04)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        t = input_ids.shape[1]
        if t > self.config["max_len"]:
            raise ValueError(f"sequence length {t} exceeds max_len {self.config['max_len']}")
        positions = torch.arange(t, device=input_ids.device)
        x = self.tok_embed(input_ids) + self.pos_embed(positions)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_f(x))

    @torch.no_grad()
    def greedy_decode(self, input_ids: torch.Tensor, max_new_tokens: int, eos_id: int) -> list[int]:
        self.eval()
        ids = input_ids
        generated: list[int] = []
        for _ in range(max_new_tokens):
            if ids.shape[1] >= self.config["max_len"]:
                break
            logits = self.forward(ids)
            next_id = int(torch.argmax(logits[0, -1]))
            if next_id == eos_id:
                break
            generated.append(next_id)
            ids = torch.cat([ids, torch.tensor([[next_id]], device=ids.device)], dim=1)
        return generated


def build_base_model(base: str, vocab_size: int):
    """Instantiate the base model: 'toy' builds the in-package decoder.

    Any other identifier is treated as a hosted checkpoint name and loaded
    through the transformers library (requires the `hf` extra and local
    availability of the weights).
    """
    if base == "toy":
        config = dict(TOY_CONFIG, vocab_size=vocab_size)
        return ToyCausalLM(config)
    from transformers import AutoModelForCausalLM  # deferred heavy import

    return AutoModelForCausalLM.from_pretrained(base)


"""Hand-rolled low-rank adapters.

Every targeted nn.Linear is wrapped as frozen_base(x) + B(A(x)) * (alpha/r)
with A gaussian-initialized and B zero-initialized, so training starts from
the base function exactly. Only A/B matrices (plus any modules explicitly
marked trainable, e.g. embeddings over a fresh vocabulary) receive
gradients.
"""

from __future__ import annotations

import torch
from torch import nn

DEFAULT_TARGET_MODULES = ("q_proj", "k_proj", "v_proj", "o_proj")


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: int):
        super().__init__()
        if rank < 1:
            raise ValueError(f"adapter rank must be >= 1, got {rank}")
        self.base = base
        self.lora_a = nn.Linear(base.in_features, rank, bias=False)
        self.lora_b = nn.Linear(rank, base.out_features, bias=False)
        self.scaling = alpha / rank
        nn.init.normal_(self.lora_a.weight, std=0.02)
        nn.init.zeros_(self.lora_b.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.lora_b(self.lora_a(x)) * self.scaling


def apply_lora(
    model: nn.Module,
    rank: int,
    alpha: int,
    target_modules: tuple[str, ...] = DEFAULT_TARGET_MODULES,
    modules_to_save: tuple[str, ...] = (),
) -> list[str]:
    """Freeze the model and graft adapters onto the targeted linears.

    Returns the qualified names that were wrapped. modules_to_save names
    submodules left fully trainable (by name suffix match).
    """
    for p in model.parameters():
        p.requires_grad = False

    wrapped: list[str] = []
    for parent_name, parent in list(model.named_modules()):
        for child_name, child in list(parent.named_children()):
            qualified = f"{parent_name}.{child_name}" if parent_name else child_name
            if isinstance(child, nn.Linear) and any(child_name == t for t in target_modules):
                setattr(parent, child_name, LoraLinear(child, rank, alpha))
                wrapped.append(qualified)
    if not wrapped:
        raise ValueError(f"no target modules {target_modules} found in model")

    for name, module in model.named_modules():
        if any(name == m or name.endswith(f".{m}") for m in modules_to_save):
            for p in module.parameters():
                p.requires_grad = True
    return wrapped


def adapter_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    """All trainable tensors: adapter matrices plus fully-trained modules."""
    return {
        name: p.detach().clone() for name, p in model.named_parameters() if p.requires_grad
    }


def load_adapter_state(model: nn.Module, state: dict[str, torch.Tensor]) -> None:
    missing = model.load_state_dict(state, strict=False).unexpected_keys
    if missing:
        raise ValueError(f"adapter state holds unknown tensors: {missing[:3]}")

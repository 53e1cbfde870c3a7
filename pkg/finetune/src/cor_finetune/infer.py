"""Greedy inference from a trained adapter directory."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .data import TrainError
from .lora import apply_lora, load_adapter_state
from .model import ToyCausalLM
from .tokenizer import WordTokenizer
from .train import ADAPTER_CONFIG, ADAPTER_WEIGHTS, BASE_WEIGHTS, TOKENIZER_FILE


def load_adapter(adapter_dir: str | Path, base: str | None = None):
    """Rebuild the tuned model and tokenizer from an adapter directory.

    base, when given, must match the base the adapter was trained on.
    """
    adapter_dir = Path(adapter_dir)
    config_path = adapter_dir / ADAPTER_CONFIG
    if not config_path.exists():
        raise TrainError(f"{adapter_dir} is not an adapter directory (missing {ADAPTER_CONFIG})")
    config = json.loads(config_path.read_text(encoding="utf-8"))
    if base is not None and base != config["base"]:
        raise TrainError(f"adapter was trained on base {config['base']!r}, not {base!r}")

    tokenizer = WordTokenizer.load(adapter_dir / TOKENIZER_FILE)
    if config["base"] == "toy":
        base_path = adapter_dir / BASE_WEIGHTS
        if not base_path.exists():
            raise TrainError(f"toy adapter lacks {BASE_WEIGHTS}")
        model = ToyCausalLM(config["toy_config"])
        model.load_state_dict(torch.load(base_path, weights_only=True))
    else:
        from transformers import AutoModelForCausalLM

        model = AutoModelForCausalLM.from_pretrained(config["base"])
    apply_lora(
        model,
        config["rank"],
        config["scaling"],
        tuple(config["target_modules"]),
        tuple(config["modules_to_save"]),
    )
    load_adapter_state(model, torch.load(adapter_dir / ADAPTER_WEIGHTS, weights_only=True))
    model.eval()
    return model, tokenizer, config


def smoke_infer(
    adapter_dir: str | Path,
    prompt: str,
    max_new_tokens: int | None = None,
    base: str | None = None,
) -> str:
    """One greedy completion from the tuned model."""
    if not prompt.strip():
        raise ValueError("prompt is empty")
    model, tokenizer, config = load_adapter(adapter_dir, base=base)
    budget = max_new_tokens or config.get("max_new_tokens", 64)
    input_ids = torch.tensor([[tokenizer.bos_id] + tokenizer.encode(prompt)], dtype=torch.long)
    generated = model.greedy_decode(input_ids, budget, tokenizer.eos_id)
    return tokenizer.decode(generated)

"""Adapter training loop.

The loss is next-token cross-entropy over the target span only (prompt
tokens masked), optimized with AdamW under a cosine-annealed learning rate.
The adapter directory holds everything needed to reload the tuned model:
adapter_config.json, adapter_weights.pt, the tokenizer, and (for the toy
base) the pristine base weights.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F

from .data import (
    IGNORE_INDEX,
    TrainError,
    build_tokenizer,
    collate,
    encode_record,
    epoch_order,
    load_records,
)
from .lora import DEFAULT_TARGET_MODULES, adapter_state_dict, apply_lora
from .model import build_base_model

ADAPTER_CONFIG = "adapter_config.json"
ADAPTER_WEIGHTS = "adapter_weights.pt"
BASE_WEIGHTS = "base_weights.pt"
TOKENIZER_FILE = "tokenizer.json"
TRAIN_LOG = "train_log.jsonl"


@dataclass
class TrainConfig:
    sft_path: str = ""
    out_dir: str = ""
    base: str = "toy"
    rank: int = 128
    scaling: int = 16
    lr: float = 0.0003
    schedule: str = "cosine"
    batch_size: int = 128
    epochs: int = 1
    seed: int = 0
    target_modules: tuple[str, ...] = DEFAULT_TARGET_MODULES
    # Fully-trained submodules; needed for the toy base, whose vocabulary
    # is built fresh from the SFT file.
    modules_to_save: tuple[str, ...] = ("tok_embed", "lm_head")
    grad_clip: float = 1.0
    max_new_tokens: int = 64

    def __post_init__(self):
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.rank < 1:
            raise ValueError("epochs, batch_size, and rank must all be >= 1")


def compute_masked_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Shifted cross-entropy ignoring masked (prompt/pad) positions."""
    shifted_logits = logits[:, :-1, :].reshape(-1, logits.shape[-1])
    shifted_labels = labels[:, 1:].reshape(-1)
    return F.cross_entropy(shifted_logits, shifted_labels, ignore_index=IGNORE_INDEX)


def check_finite(loss: torch.Tensor, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainError(f"non-finite loss at step {step}")


def _fingerprint(state: dict) -> str:
    digest = hashlib.sha256()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].numpy().tobytes())
    return digest.hexdigest()[:16]


def train(config: TrainConfig) -> Path:
    """Run adapter finetuning; returns the adapter directory."""
    records = load_records(config.sft_path)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    tokenizer = build_tokenizer(records)
    model = build_base_model(config.base, len(tokenizer))

    base_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    modules_to_save = config.modules_to_save if config.base == "toy" else ()
    wrapped = apply_lora(
        model, config.rank, config.scaling, config.target_modules, modules_to_save
    )

    encoded = [encode_record(tokenizer, r) for r in records]
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=config.lr)
    steps_per_epoch = math.ceil(len(encoded) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=total_steps)

    log_path = out_dir / TRAIN_LOG
    first_loss = last_loss = None
    with log_path.open("w", encoding="utf-8") as log:
        header = {"event": "config", "wrapped_modules": wrapped, "vocab_size": len(tokenizer)}
        header.update(dataclasses.asdict(config))
        log.write(json.dumps(header, sort_keys=True) + "\n")

        step = 0
        model.train()
        for epoch in range(config.epochs):
            order = epoch_order(len(encoded), epoch, config.seed)
            for start in range(0, len(order), config.batch_size):
                batch = [encoded[i] for i in order[start : start + config.batch_size]]
                input_ids, labels = collate(batch, tokenizer.pad_id)
                optimizer.zero_grad()
                loss = compute_masked_loss(model(input_ids), labels)
                check_finite(loss, step)
                loss.backward()
                nn.utils.clip_grad_norm_(trainable, config.grad_clip)
                optimizer.step()
                scheduler.step()
                value = float(loss.detach())
                first_loss = value if first_loss is None else first_loss
                last_loss = value
                log.write(
                    json.dumps(
                        {"event": "step", "step": step, "loss": value, "lr": scheduler.get_last_lr()[0]},
                        sort_keys=True,
                    )
                    + "\n"
                )
                step += 1
        log.write(
            json.dumps(
                {
                    "event": "done",
                    "steps": step,
                    "initial_loss": first_loss,
                    "final_loss": last_loss,
                },
                sort_keys=True,
            )
            + "\n"
        )

    tokenizer.save(out_dir / TOKENIZER_FILE)
    torch.save(adapter_state_dict(model), out_dir / ADAPTER_WEIGHTS)
    adapter_config = {
        "base": config.base,
        "rank": config.rank,
        "scaling": config.scaling,
        "target_modules": list(config.target_modules),
        "modules_to_save": list(modules_to_save),
        "vocab_size": len(tokenizer),
        "max_new_tokens": config.max_new_tokens,
    }
    if config.base == "toy":
        torch.save(base_state, out_dir / BASE_WEIGHTS)
        adapter_config["toy_config"] = model.config
        adapter_config["base_fingerprint"] = _fingerprint(base_state)
    (out_dir / ADAPTER_CONFIG).write_text(
        json.dumps(adapter_config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir

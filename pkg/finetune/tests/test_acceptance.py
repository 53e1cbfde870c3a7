"""Driver acceptance: the full smoke gate on one toy training run.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS line.
"""

from __future__ import annotations

import json

import torch

from cor_harness.output_parser import parse_cor
from cor_harness.sft_emitter import load_sft

from cor_finetune.data import IGNORE_INDEX
from cor_finetune.infer import smoke_infer
from cor_finetune.model import ToyCausalLM
from cor_finetune.train import compute_masked_loss


def test_finetune_driver_acceptance(trained_adapter, toy_sft_file):
    records = load_sft(toy_sft_file)
    assert len(records) == 32

    # training completed and the loss went down
    log = [json.loads(l) for l in (trained_adapter / "train_log.jsonl").read_text().splitlines()]
    done = log[-1]
    assert done["event"] == "done" and done["steps"] > 0
    assert done["final_loss"] < done["initial_loss"]

    # prompt-mask zero-gradient check on a single-record batch
    torch.manual_seed(0)
    model = ToyCausalLM(
        {"vocab_size": 64, "d_model": 32, "n_layers": 1, "n_heads": 2, "d_ff": 64, "max_len": 64}
    )
    ids = torch.randint(0, 64, (1, 20))
    labels = ids.clone()
    labels[0, :12] = IGNORE_INDEX
    logits = model(ids)
    logits.retain_grad()
    compute_masked_loss(logits, labels).backward()
    assert torch.all(logits.grad[0, :11, :] == 0)
    assert logits.grad[0, 11:19, :].abs().sum() > 0

    # structured outputs parse with zero flags on >= 80% of 20 toy prompts
    clean = 0
    for record in records[:20]:
        completion = smoke_infer(trained_adapter, record.prompt)
        if not parse_cor(completion, record.context_order).parse_flags:
            clean += 1
    assert clean >= 16, f"only {clean}/20 clean parses"
    print(
        f"ACCEPTANCE finetune-driver: PASS (steps={done['steps']}, "
        f"loss {done['initial_loss']:.3f}->{done['final_loss']:.4f}, clean parses {clean}/20)"
    )

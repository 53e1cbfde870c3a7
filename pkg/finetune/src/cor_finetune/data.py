"""SFT file loading and prompt-masked batch encoding.

Records come verbatim from the harness's line-delimited prompt/completion
schema; this driver never rebuilds prompts. Labels are -100 everywhere
except the target span (first target token onward, plus the end-of-sequence
marker), which is exactly the loss-masking boundary the training objective
requires.
"""

from __future__ import annotations

from pathlib import Path

import torch

from cor_harness.sft_emitter import SftRecord, load_sft

from .tokenizer import WordTokenizer

IGNORE_INDEX = -100


class TrainError(Exception):
    """Raised when training cannot proceed (bad file, non-finite loss)."""


def load_records(path: str | Path) -> list[SftRecord]:
    try:
        records = load_sft(path)
    except (ValueError, OSError) as exc:
        raise TrainError(f"SFT file rejected: {exc}") from exc
    if not records:
        raise TrainError(f"SFT file {path} holds no records")
    return records


def build_tokenizer(records: list[SftRecord]) -> WordTokenizer:
    texts = [r.prompt for r in records] + [r.target for r in records]
    return WordTokenizer.build(texts)


def encode_record(
    tokenizer: WordTokenizer, record: SftRecord
) -> tuple[list[int], list[int]]:
    """Token ids and labels for one record; prompt positions are masked."""
    prompt_ids = [tokenizer.bos_id] + tokenizer.encode(record.prompt)
    target_ids = tokenizer.encode(record.target) + [tokenizer.eos_id]
    input_ids = prompt_ids + target_ids
    labels = [IGNORE_INDEX] * len(prompt_ids) + list(target_ids)
    return input_ids, labels


def collate(
    encoded: list[tuple[list[int], list[int]]], pad_id: int
) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(ids) for ids, _ in encoded)
    batch_ids = torch.full((len(encoded), width), pad_id, dtype=torch.long)
    batch_labels = torch.full((len(encoded), width), IGNORE_INDEX, dtype=torch.long)
    for row, (ids, labels) in enumerate(encoded):
        batch_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        batch_labels[row, : len(labels)] = torch.tensor(labels, dtype=torch.long)
    return batch_ids, batch_labels


def epoch_order(n_records: int, epoch: int, seed: int) -> list[int]:
    """Seed-deterministic shuffle order for one epoch."""
    generator = torch.Generator().manual_seed(seed * 100_003 + epoch)
    return torch.randperm(n_records, generator=generator).tolist()

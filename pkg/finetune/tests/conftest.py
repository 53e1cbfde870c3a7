from __future__ import annotations

import random

import pytest

from cor_harness.corpus import ContextDoc, Example
from cor_harness.prompting import ReasoningMode
from cor_harness.sft_emitter import MixingPolicy, emit, save_sft

COLORS = ["crimson", "amber", "violet", "teal", "indigo", "olive", "coral", "slate"]
ANIMALS = ["heron", "lynx", "otter", "falcon", "badger", "marmot", "puffin", "ibex"]


def toy_examples(n: int, seed: int = 0, n_contexts: int = 3) -> list[Example]:
    rng = random.Random(seed)
    examples = []
    for i in range(n):
        answer = f"{rng.choice(COLORS)} {rng.choice(ANIMALS)}"
        gold = rng.randint(1, n_contexts)
        contexts = [
            ContextDoc(
                doc_id=j,
                title=f"Doc {i}-{j}",
                body=(
                    f"Study {i} concluded that specimen {i} is a {answer}."
                    if j == gold
                    else f"Note {i}-{j} covers station {j} only."
                ),
                is_gold=j == gold,
            )
            for j in range(1, n_contexts + 1)
        ]
        examples.append(
            Example(
                example_id=f"toy-{i:04d}",
                question=f"What is specimen {i}?",
                contexts=contexts,
                gold_ids={gold},
                gold_answers=[answer],
            )
        )
    return examples


@pytest.fixture(scope="session")
def toy_sft_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("sft") / "toy.jsonl"
    records = emit(
        toy_examples(32), ReasoningMode.COR, MixingPolicy(p_golden=1.0, seed=0), k=2
    )
    assert len(records) == 32
    save_sft(records, path)
    return path


@pytest.fixture(scope="session")
def trained_adapter(tmp_path_factory, toy_sft_file):
    from cor_finetune.train import TrainConfig, train

    out_dir = tmp_path_factory.mktemp("adapter") / "run"
    config = TrainConfig(
        sft_path=str(toy_sft_file),
        out_dir=str(out_dir),
        base="toy",
        rank=16,
        scaling=16,
        lr=2e-3,
        batch_size=8,
        epochs=60,
        seed=0,
    )
    return train(config)

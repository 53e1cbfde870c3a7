"""Word-level tokenizer built from an SFT corpus.

Text splits into whitespace-delimited words plus explicit newline tokens;
decoding joins words with single spaces and newlines bare. That exactly
reproduces the harness's line-oriented targets (single-spaced words, no
trailing spaces), so a trained model's greedy decode can round-trip through
the structured-output parser.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

PAD, BOS, EOS, UNK = "[PAD]", "[BOS]", "[EOS]", "[UNK]"
_SPECIALS = [PAD, BOS, EOS, UNK]

_PIECE = re.compile(r"\n|[^\s]+")


def split_pieces(text: str) -> list[str]:
    return _PIECE.findall(text)


class WordTokenizer:
    def __init__(self, tokens: list[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.unk_id = self.index[UNK]

    @classmethod
    def build(cls, texts: list[str]) -> "WordTokenizer":
        seen = dict.fromkeys(_SPECIALS)
        for text in texts:
            for piece in split_pieces(text):
                seen.setdefault(piece)
        return cls(list(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(p, self.unk_id) for p in split_pieces(text)]

    def decode(self, ids: list[int]) -> str:
        out: list[str] = []
        for i in ids:
            piece = self.tokens[i]
            if piece in (PAD, BOS, EOS):
                continue
            if piece == "\n":
                out.append("\n")
            else:
                if out and out[-1] != "\n":
                    out.append(" ")
                out.append(piece)
        return "".join(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"tokens": self.tokens}, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "WordTokenizer":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["tokens"])

"""Low-rank-adapter finetuning driver for chain-of-rank SFT files."""

__version__ = "0.1.0"

#!/usr/bin/env python3
"""Regenerate the golden checkpoint fixture used by the byte-stability tests.

Only run this when the checkpoint format version is bumped; the recorded
SHA-256 in tests/test_checkpoint.py must be updated in the same commit.
"""

import hashlib
import sys
from pathlib import Path

import numpy as np

from swinseg.checkpoint import save_checkpoint
from swinseg.config import toy_config
from swinseg.model import SwinUnet


def main() -> int:
    out = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "golden_toy.ckpt"
    model = SwinUnet(toy_config(), rng=np.random.default_rng(0))
    save_checkpoint(path, model.cfg, model.named_params())
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    print(f"wrote {path} ({path.stat().st_size} bytes)")
    print(f"sha256: {digest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Write a synthetic dataset to disk as .ppm/.pgm pairs for the --data path.

Usage: python scripts/make_dataset.py OUT_DIR [N] [SEED] [IMG_SIZE] [CLASSES]
"""

import sys

from swinseg.data import SynthSpec, save_dataset, synth_dataset


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    out = sys.argv[1]
    n = int(sys.argv[2]) if len(sys.argv) > 2 else 64
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0
    img_size = int(sys.argv[4]) if len(sys.argv) > 4 else 32
    classes = int(sys.argv[5]) if len(sys.argv) > 5 else 3
    spec = SynthSpec(img_size=img_size, num_classes=classes, num_samples=n)
    batch, counts = synth_dataset(spec, seed)
    save_dataset(out, batch)
    fg = counts[:, 1:].sum() / counts.sum()
    print(f"wrote {n} pairs to {out} ({img_size}x{img_size}, {classes} classes, "
          f"{fg:.1%} foreground)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

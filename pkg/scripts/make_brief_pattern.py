"""Regenerate the packaged 256-pair BRIEF sampling pattern."""

import numpy as np

PATCH = 31
SEED = 20240311


def main(path="src/lacmatch/data/brief_pattern_256.txt"):
    rng = np.random.default_rng(SEED)
    half = PATCH // 2
    pairs = []
    while len(pairs) < 256:
        a, b = np.clip(np.rint(rng.normal(0.0, PATCH / 5.0, size=(2, 2))), -half, half).astype(int)
        if (a == b).all():
            continue
        pairs.append((a[0], a[1], b[0], b[1]))
    with open(path, "w") as fh:
        fh.write(f"# ax ay bx by; isotropic gaussian sigma={PATCH}/5, seed={SEED}\n")
        for row in pairs:
            fh.write(" ".join(str(v) for v in row) + "\n")


if __name__ == "__main__":
    main()

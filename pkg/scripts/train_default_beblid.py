"""Regenerate src/lacmatch/data/beblid_synthetic.lacb (the shipped default model)."""

from pathlib import Path

from lacmatch.evaluation import hamming_auc, make_patch_pairs, train_default_model
from lacmatch.features import save_model
from lacmatch.synthetic import synthetic_panorama

OUT = Path(__file__).resolve().parents[1] / "src" / "lacmatch" / "data" / "beblid_synthetic.lacb"

if __name__ == "__main__":
    model = train_default_model()
    save_model(model, OUT)
    held_out = make_patch_pairs([synthetic_panorama(480, 480, seed=5000 + i) for i in range(2)], 600, seed=99)
    print(f"wrote {OUT} (K={model.K}); held-out AUC {hamming_auc(model, held_out):.4f},"
          f" random bits {hamming_auc(None, held_out):.4f}")

"""A look inside the partitioned latent space of a structured IMU model.

Prints mean cosine distances per latent slice for positive pairs (two rotated views of one
window) and negative pairs (different windows), then projects the invariant slice with PCA
and reports how well activities separate.  Writes ``eval_pca.svg``.

    python3 demos/latent_geometry.py --steps 1500 --out /tmp/geometry_demo
"""

import argparse
from pathlib import Path

import numpy as np

from sclab import cli, config
from sclab import evaluate as E
from sclab.synth import sample_pair_batch
from sclab.train import build_datasets, train

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=1500)
parser.add_argument("--out", default="geometry_demo")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

cfg = config.imu_config(**{"run.steps": args.steps, "hp.lam": 0.1, "run.n_per_class": 250})
model = train(cfg, out / "run").model
_, test = build_datasets(cfg)

batches = [sample_pair_batch(test, cfg.transform, 64, 2, np.random.default_rng([5, i])) for i in range(4)]
stats = E.subspace_stats(model, batches)
for name in ("inv", "var"):
    print(f"{name}: positives {stats[name + '_pos']:.3f}  negatives {stats[name + '_neg']:.3f}")

z = model.embed(test.signals)[:, model.partition.inv]
coords, explained = E.pca_project(z)
print("explained variance of first two axes:", np.round(explained, 4))
print(f"silhouette by activity: {E.silhouette_score(coords, test.labels):.3f}")

# the same projection through the command line, with a scatter plot
cli.main(["eval", str(out / "run" / "model.ckpt"), "--metric", "pca", "--svg", "--out", str(out)])

"""How the four training modes cope with arbitrary sensor orientation.

Each mode trains a small 1D CNN on synthetic 3-axis accelerometer windows.  Test windows are
then rotated (per axis and uniformly over SO(3)) and the stress grid adds noise on top.

    python3 demos/imu_rotation.py --steps 1500
"""

import argparse

from sclab import config
from sclab import evaluate as E
from sclab.train import build_datasets, train

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=1500)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--lam", type=float, default=0.1, help="weight of the contrastive term")
args = parser.parse_args()

header = f"{'mode':<22}{'clean':>7}{'X':>7}{'Y':>7}{'Z':>7}{'SO3':>7}{'consist':>9}{'worst cell':>12}"
print(header)
for mode in ("BASELINE", "AUGMENT_ONLY", "STANDARD_CONTRASTIVE", "STRUCTURED"):
    cfg = config.imu_config(**{"run.seed": args.seed, "run.steps": args.steps, "hp.mode": mode,
                               "hp.lam": args.lam, "run.n_per_class": 250})
    model = train(cfg).model
    _, test = build_datasets(cfg)
    clean = E.accuracy(model, test.signals, test.labels)
    axes = E.axis_sweep_accuracy(model, test, seed=args.seed).values()
    cons = E.rotation_consistency(model, test, seed=args.seed)
    worst = E.stress_grid(model, test, seed=args.seed).values().min()
    print(f"{mode:<22}{clean:7.1f}" + "".join(f"{v:7.1f}" for v in axes) + f"{cons:9.1f}{worst:12.1f}")

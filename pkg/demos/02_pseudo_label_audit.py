"""How reliable are the pseudo-labels?

At the start of each incremental session the frozen encoder assigns every
unlabeled row to its nearest prototype. Rows that land on a base prototype are
dropped; the m closest rows per new class are kept. Because the synthetic pool
carries hidden labels we can score that selection.

    python demos/02_pseudo_label_audit.py
"""
import logging

from sprint.experiments import run_single
from sprint.synthetic import DESK_TRAIN, BlobSpec, make_synthetic
from sprint.trainer import TrainConfig

logging.basicConfig(level=logging.ERROR)

for sigma in (0.1, 1.5, 2.5):
    ds, schedule = make_synthetic(BlobSpec(within_sigma=sigma, n_per_class=1000))
    for m in (20, 100, 400):
        cfg = TrainConfig(**{**DESK_TRAIN, "m": m})
        res = run_single("sprint", ds, schedule, cfg, seed=0)
        cells = ", ".join(f"{row['class']}: {row['selected_count']} @ {row['precision']:.3f}" for row in res.audit)
        print(f"sigma={sigma:<4} m={m:<4} final acc {res.accuracies[-1]:.3f}  [{cells}]")

"""Sensitivity of final accuracy to the loss balance beta and the shot count k.

beta = 1 trains on buffer rehearsal only; beta = 0 trains on the mixed
novel+base episode only. The same sweep is available from the command line
with ``sprint sweep --synthetic blobs-hard --axis beta=0,0.25,0.5,0.75,1``.

    python demos/04_beta_and_shots.py
"""
import logging

import numpy as np

from sprint.experiments import run_single
from sprint.synthetic import preset, make_synthetic
from sprint.trainer import TrainConfig

logging.basicConfig(level=logging.ERROR)

spec, overrides = preset("blobs-hard")
ds, schedule = make_synthetic(spec)
base = TrainConfig(**overrides)


def final_and_pd(cfg, seeds=range(3)):
    runs = [run_single("sprint", ds, schedule, cfg, seed=s) for s in seeds]
    return np.mean([r.accuracies[-1] for r in runs]), np.mean([r.pd for r in runs])


print("beta  final   PD")
for beta in (0.0, 0.25, 0.5, 0.75, 1.0):
    acc, pd = final_and_pd(TrainConfig(**{**base.to_dict(), "beta": beta}))
    print(f"{beta:<5} {acc:.4f} {100 * pd:5.2f}")

print("\nk     final   PD")
for k in (1, 5, 10):
    acc, pd = final_and_pd(TrainConfig(**{**base.to_dict(), "k": k}))
    print(f"{k:<5} {acc:.4f} {100 * pd:5.2f}")

"""Sparse episodes versus dense replay as the memory buffer grows.

Dense replay walks over the whole buffer every epoch, so its cost follows the
buffer size. SPRINT draws a few small episodes from the buffer, so its cost
should barely move when the buffer doubles.

    python demos/03_runtime_scaling.py
"""
import logging

from sprint.cli import profile_runtime
from sprint.synthetic import DESK_TRAIN, BlobSpec, make_synthetic
from sprint.trainer import TrainConfig

logging.basicConfig(level=logging.ERROR)

ds, schedule = make_synthetic(BlobSpec(n_per_class=5100))
cfg = TrainConfig(**DESK_TRAIN, test_episodes=20)
rows = profile_runtime(ds, schedule, cfg, epochs=[25, 50], methods=["sprint", "dense_replay"],
                       m0_values=[1000, 2000, 4000], runs=2)
print(f"{'method':<14}{'epochs':>7}{'M0':>7}{'seconds':>10}{'speedup':>9}")
for r in rows:
    print(f"{r['method']:<14}{r['epochs']:>7}{r['M0_per_class']:>7}{r['mean_s']:>10.3f}{r['speedup']:>9}")

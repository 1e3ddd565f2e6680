#!/usr/bin/env python3
"""Stability, convergence and energy-conservation maps.

Writes the grid CSVs behind the stability/convergence/energy figures into
results/maps/ at 101x101 resolution (pass a grid size to override).
"""

import dataclasses
import sys

from boris_sdc.harness import ExperimentConfig, experiment_maps

n = int(sys.argv[1]) if len(sys.argv) > 1 else 101
base = ExperimentConfig(
    out_dir="results/maps",
    grid_a=(-4.0, 4.0, n),
    grid_b=(0.0, 20.0, n),
)

for method, m in [("boris", 2), ("collocation", 3), ("collocation", 5),
                  ("boris-sdc", 3), ("boris-sdc", 5)]:
    cfg = dataclasses.replace(base, method=method, m_nodes=m)
    rec = experiment_maps(cfg, "stability")
    print(f"stability {method} M={m}: stable {rec.summary['stable_count']}, "
          f"unstable outside mask {rec.summary['unstable_outside_mask']}")

for m in (3, 5):
    cfg = dataclasses.replace(base, m_nodes=m)
    rec = experiment_maps(cfg, "convergence")
    print(f"convergence M={m}: convergent points {rec.summary['stable_count']}")
    rec = experiment_maps(cfg, "energy")
    print(f"energy M={m}: conserving points {rec.summary['stable_count']}")

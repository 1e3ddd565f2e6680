#!/usr/bin/env python3
"""Long-term energy behavior at desk scale (one million steps).

Compares the bounded energy error of the classical pusher against an
unconverged and a converged sweep configuration.  Pass --paper-scale to
run the 16.8M-step preset instead (slow).
"""

import dataclasses
import sys

from boris_sdc.harness import ExperimentConfig, experiment_energy

paper = "--paper-scale" in sys.argv
base = ExperimentConfig(
    kind="energy", out_dir="results/energy",
    precision="compensated", n_steps=1_000_000, dt=0.015625,
    paper_scale=paper,
)

for method, m, k in [("boris", 2, None), ("boris-sdc", 3, 4), ("boris-sdc", 3, 8)]:
    cfg = dataclasses.replace(base, method=method, m_nodes=m, iterations=k)
    rec = experiment_energy(cfg)
    print(
        f"{method} M={m} K={k or 1}: max rel energy error "
        f"{rec.summary['max_rel_error']:.3e}, drift={rec.summary['drift']} "
        f"(slope {rec.summary['slope_per_step']:.2e}/step)"
    )

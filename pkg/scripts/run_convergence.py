#!/usr/bin/env python3
"""Order-of-convergence study at desk scale.

Runs the classical pusher and the sweep configurations over the standard
step ladder, prints the fitted slopes and writes one CSV per configuration
into results/convergence/.
"""

import dataclasses

from boris_sdc.harness import ExperimentConfig, experiment_convergence

CONFIGS = [
    ("boris", 2, None),
    ("boris-sdc", 3, 1),
    ("boris-sdc", 3, 2),
    ("boris-sdc", 5, 2),
    ("boris-sdc", 5, 4),
]

base = ExperimentConfig(kind="converge", out_dir="results/convergence")
for method, m, k in CONFIGS:
    cfg = dataclasses.replace(base, method=method, m_nodes=m, iterations=k)
    rec = experiment_convergence(cfg)
    print(f"{method} M={m} K={k or 1}: slope {rec.summary['slope']:.3f} -> {rec.path}")

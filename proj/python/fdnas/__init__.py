# SPDX-License-Identifier: Apache-2.0
"""Federated direct architecture search simulator (python surface).

The heavy lifting lives in the `_fdnas` extension module; this package
re-exports the core operations and the end-to-end pipeline entry point.
"""

try:
    from ._fdnas import (  # noqa: F401  (wheel layout)
        Rng,
        arch_gradient,
        compute_probs,
        cosine_lr,
        expected_layer_latency,
        gen_synthetic_summary,
        run_pipeline,
        sample_active_pair,
        sample_gate,
    )
except ImportError:
    from _fdnas import (  # noqa: F401  (build-tree layout)
        Rng,
        arch_gradient,
        compute_probs,
        cosine_lr,
        expected_layer_latency,
        gen_synthetic_summary,
        run_pipeline,
        sample_active_pair,
        sample_gate,
    )

__all__ = [
    "Rng",
    "arch_gradient",
    "compute_probs",
    "cosine_lr",
    "expected_layer_latency",
    "gen_synthetic_summary",
    "run_pipeline",
    "sample_active_pair",
    "sample_gate",
]

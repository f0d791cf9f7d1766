"""Domain adaptation by low-rate fine-tuning plus parameter averaging.

A seed model is fine-tuned on target-domain data with a much smaller
learning rate, then the seed and the adapted model are averaged
elementwise. The averaged model recovers most of the source-domain
accuracy the fine-tune gave up while keeping most of the target-domain
gain.
"""

from __future__ import annotations

import numpy as np

from .errors import CompatibilityError, ConfigurationError
from .model import ModelParameters
from .training import train

# fine-tuning runs two orders of magnitude below the usual training rate
ADAPT_LR_SCALE = 0.01


def adapt(seed_model, spec, target_data, schedule, metrics_path=None):
    """Fine-tune ``seed_model`` on target-domain data; the seed is untouched."""
    if seed_model.fingerprint != spec.fingerprint():
        raise CompatibilityError("seed model does not match the architecture")
    tuned = train(spec, target_data, schedule, metrics_path=metrics_path,
                  init_model=seed_model)
    tuned.metadata["provenance"] = "adapted"
    tuned.metadata["parent"] = seed_model.checksum()
    return tuned


def average_parameters(a, b, alpha=0.5):
    """Elementwise (1-alpha)*a + alpha*b; endpoints return exact copies."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    a.check_averageable(b)
    meta = {"provenance": "averaged", "alpha": alpha,
            "parents": [a.checksum(), b.checksum()]}
    if alpha == 0.0:
        values = {name: arr.copy() for name, arr in a.values.items()}
    elif alpha == 1.0:
        values = {name: arr.copy() for name, arr in b.values.items()}
    else:
        values = {}
        for name, arr in a.values.items():
            other = b.values[name]
            if np.array_equal(arr, other):
                # exact idempotence: rounding in (1-alpha)*x + alpha*x would
                # otherwise perturb identical parents
                values[name] = arr.copy()
            else:
                values[name] = (1.0 - alpha) * arr + alpha * other
    return ModelParameters(values, a.fingerprint, meta)

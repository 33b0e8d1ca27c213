"""Default network sizes and optimiser settings, versioned.

Bump ``ARCHITECTURE_VERSION`` whenever a default below changes; saved model
manifests record the version they were trained with.
"""

ARCHITECTURE_VERSION = "1.0"

OPTIMIZER = {
    "optimizer": "adam",
    "learning_rate": 1e-4,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "batch_size_per_domain": 128,
    "orth_weight": 0.01,
    "max_epochs": 1000,
    "patience": 10,
    "propensity_clip": 0.01,
}

HTCE = {
    "encoders": {"layers": 1, "units": 100, "activation": "relu"},
    "s": {"stacks": 1, "stack_layers": 5, "subspace_units": 100, "treatment_input": "shared encoder"},
    "t": {"stacks": 2, "stack_layers": 5, "subspace_units": 100, "encoders": "one triple per arm"},
    "dr": {
        "outcome": "as t",
        "propensity": {"stacks": 1, "stack_layers": 5, "subspace_units": 100, "output": "sigmoid"},
        "pseudo_outcome": {"stacks": 1, "stack_layers": 5, "subspace_units": 100},
    },
    "tarnet": {
        "stacks": 2, "stack_layers": 2, "subspace_units": 100,
        "towers": {"layers": 3, "units": 100, "activation": "relu"},
    },
    "subspace_activation": "selu",
}

BASELINE = {
    "s": {"hidden": [200] * 5},
    "t": {"hidden": [200] * 5, "networks": 2},
    "dr": {"hidden": [200] * 5, "networks": ["mu0", "mu1", "pi", "tau"]},
    "tarnet": {"representation": [200] * 3, "heads": [100] * 2},
    "activation": "relu",
}


def describe() -> dict:
    return {
        "version": ARCHITECTURE_VERSION,
        "optimizer": OPTIMIZER,
        "htce": HTCE,
        "baseline": BASELINE,
    }

"""Federated training of stateful-neuron networks under heterogeneous
temporal resolutions: LIF and diagonal-SSM neuron families, resolution
adaptation of their dynamics, and a desk-scale experiment harness."""

__version__ = "0.1.0"

from . import adaptation, cli, data, energy, federation, kernels, network, neurons, training

__all__ = ["adaptation", "cli", "data", "energy", "federation", "kernels",
           "network", "neurons", "training", "__version__"]

"""Operation counts and the fixed per-operation energy model.

Counting conventions (everything else is excluded, in particular
normalization, activations, dropout and optimizer arithmetic):

* dense layer on graded input: fan_in * fan_out multiply-accumulates per
  (step, sample), counted as that many multiplies AND adds;
* dense layer on spiking input: no multiplies; adds scaled by the measured
  input spike rate (a spike selects weight rows), rounded to the nearest
  integer per batch;
* LIF update: 2 multiplies + 2 adds per neuron-step (decay product, input
  product, their sum, threshold subtraction); the reset term adds 1 multiply
  + 1 add only on spiking steps, so it is scaled by the layer's measured
  spike rate;
* SSM update: complex ops decomposed into real ones (complex*complex = 4
  mult + 2 add, complex*real = 2 mult, complex add = 2 adds), giving
  10*N multiplies and 8*N - 1 adds per neuron-step for the diagonal update,
  input drive, state sum, output projection and its Re+Im collapse.

Spike rates are pre-dropout; dropout is a training artifice, not an
operation the deployed network performs.
"""

from dataclasses import dataclass
from typing import Dict, Iterable

from .neurons import LIF, SSM

GRADED = "graded"
SPIKING = "spiking"

PICOJOULE = 1e-12


@dataclass(frozen=True)
class OpCount:
    multiplies: int
    adds: int

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(self.multiplies + other.multiplies, self.adds + other.adds)

    def scaled(self, k: int) -> "OpCount":
        return OpCount(self.multiplies * k, self.adds * k)


ZERO = OpCount(0, 0)


@dataclass(frozen=True)
class EnergyModel:
    e_mult_pj: float = 3.1
    e_add_pj: float = 0.1
    training_multiplier: float = 3.0


DEFAULT_ENERGY_MODEL = EnergyModel()


def count_dense(fan_in: int, fan_out: int, timesteps: int, batch: int,
                input_kind: str, spike_rate: float = None) -> OpCount:
    """MACs of one dense layer applied at every step of every sample."""
    base = fan_in * fan_out * timesteps * batch
    if input_kind == GRADED:
        return OpCount(base, base)
    if input_kind == SPIKING:
        if spike_rate is None:
            raise ValueError("spiking dense count requires a spike rate")
        return OpCount(0, int(round(spike_rate * base)))
    raise ValueError(f"unknown input kind {input_kind!r}")


def count_neuron_updates(family: str, variant: str, width: int, n_states: int,
                         timesteps: int, batch: int) -> OpCount:
    """State-update cost of one layer's neurons (LIF reset term excluded;
    see :func:`count_lif_reset`)."""
    steps = width * timesteps * batch
    if family == LIF:
        return OpCount(2 * steps, 2 * steps)
    if family == SSM:
        return OpCount(10 * n_states * steps, (8 * n_states - 1) * steps)
    raise ValueError(f"unknown family {family!r}")


def count_lif_reset(width: int, timesteps: int, batch: int, spike_rate: float) -> OpCount:
    """Reset-term cost: 1 multiply + 1 add on the spiking fraction of steps."""
    n = int(round(spike_rate * width * timesteps * batch))
    return OpCount(n, n)


def training_energy(forward: OpCount, model: EnergyModel = DEFAULT_ENERGY_MODEL) -> float:
    """Energy in joules of one training step whose forward pass costs ``forward``
    (one forward plus two backward-equivalent passes)."""
    pj = forward.multiplies * model.e_mult_pj + forward.adds * model.e_add_pj
    return model.training_multiplier * pj * PICOJOULE


def forward_energy(counts: OpCount, model: EnergyModel = DEFAULT_ENERGY_MODEL) -> float:
    return (counts.multiplies * model.e_mult_pj + counts.adds * model.e_add_pj) * PICOJOULE


def count_forward_pass(model, trace) -> OpCount:
    """Forward-pass cost of one batch given the model and its activity trace.

    ``model`` is a network ModelParams; ``trace`` a ForwardTrace.  For LIF
    nets the dense layers after the first consume spikes, so their adds are
    scaled by the producing layer's measured rate, as is the readout.
    """
    nt, nb = trace.timesteps, trace.batch_size
    spiking = model.family == LIF
    total = ZERO
    fan_in = model.c_in
    for i, width in enumerate(model.hidden_sizes):
        if spiking and i > 0:
            total = total + count_dense(fan_in, width, nt, nb, SPIKING,
                                        trace.spike_rates[i - 1])
        else:
            total = total + count_dense(fan_in, width, nt, nb, GRADED)
        total = total + count_neuron_updates(model.family, model.variant, width,
                                             model.n_states, nt, nb)
        if spiking:
            total = total + count_lif_reset(width, nt, nb, trace.spike_rates[i])
        fan_in = width
    if spiking:
        total = total + count_dense(fan_in, model.c_out, nt, nb, SPIKING,
                                    trace.spike_rates[-1])
    else:
        total = total + count_dense(fan_in, model.c_out, nt, nb, GRADED)
    return total


@dataclass(frozen=True)
class RunEnergySummary:
    per_client: Dict[int, OpCount]
    total: OpCount
    per_client_energy_j: Dict[int, float]
    total_energy_j: float


def accumulate_run(reports: Iterable,
                   model: EnergyModel = DEFAULT_ENERGY_MODEL) -> RunEnergySummary:
    """Reduce per-round client forward counts over a whole federated run.

    Each report carries the summed forward-pass counts of that round's local
    training (already reflecting each client's own sequence lengths and
    measured spike rates); energy applies the 3x training-step rule.
    """
    per_client: Dict[int, OpCount] = {}
    for report in reports:
        for cid, ops in report.client_ops.items():
            per_client[cid] = per_client.get(cid, ZERO) + ops
    total = ZERO
    for cid in sorted(per_client):
        total = total + per_client[cid]
    per_energy = {cid: training_energy(ops, model) for cid, ops in per_client.items()}
    return RunEnergySummary(per_client=per_client, total=total,
                            per_client_energy_j=per_energy,
                            total_energy_j=training_energy(total, model))

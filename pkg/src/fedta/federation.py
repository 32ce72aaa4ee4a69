"""Federated orchestration: broadcast, local training, aggregation, evaluation.

One communication round is

    (2) adapt the global dynamics to each client's resolution and broadcast,
    (3) every client runs local AdamW on its shard,
    (4) adapt each client's dynamics back to the central resolution and
        average all parameters (uniform 1/K, ascending client id),
    (5) evaluate the global model on the held-out test set.

The plain federated-averaging baseline uses no adaptation at all; the
``*-post`` variants (homogeneous client resolution only) run every round as
plain averaging and apply their rule exactly once after the final
aggregation.  Adaptation only ever touches dynamics parameters, so dense
weights and normalization state are averaged untouched.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .adaptation import DELTA_SHIFT, EULER, INTEGRAL, NONE, ResolutionPair, adapt_model
from .data import FrameSequence
from .energy import OpCount
from .errors import FederationError
from .network import EVAL, ModelParams, accuracy, cross_entropy, forward, replace_arrays, state_arrays
from .seeding import DOMAIN_TRAIN, rng_for
from .training import TrainConfig, train_local

FEDAVG = "fedavg"
FEDTA_INT = "fedta-int"
FEDTA_EUL = "fedta-eul"
FEDTA_DELTA = "fedta-delta"
FEDTA_INT_POST = "fedta-int-post"
FEDTA_EUL_POST = "fedta-eul-post"
FEDTA_DELTA_POST = "fedta-delta-post"

METHODS = (FEDAVG, FEDTA_INT, FEDTA_EUL, FEDTA_DELTA,
           FEDTA_INT_POST, FEDTA_EUL_POST, FEDTA_DELTA_POST)

_RULES = {FEDAVG: NONE,
          FEDTA_INT: INTEGRAL, FEDTA_EUL: EULER, FEDTA_DELTA: DELTA_SHIFT,
          FEDTA_INT_POST: INTEGRAL, FEDTA_EUL_POST: EULER,
          FEDTA_DELTA_POST: DELTA_SHIFT}


def method_rule(method: str) -> str:
    if method not in _RULES:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return _RULES[method]


def is_post(method: str) -> bool:
    return method.endswith("-post")


@dataclass(frozen=True)
class ClientSpec:
    id: int
    resolution: int  # temporal resolution factor T_k
    shard: List[FrameSequence]
    train_overrides: Optional[dict] = None

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")
        if not self.shard:
            raise ValueError(f"client {self.id} has an empty shard")


@dataclass(frozen=True)
class FederationConfig:
    clients: List[ClientSpec]
    t_central: int
    method: str
    rounds: int
    seed: int
    train: TrainConfig
    test_set: List[FrameSequence]
    eval_batch_size: int = 64
    # optional: test sets per client resolution, for diagnostic accuracy at T_k
    client_test_sets: Optional[Dict[int, List[FrameSequence]]] = None

    def __post_init__(self):
        method_rule(self.method)
        if is_post(self.method):
            resolutions = {c.resolution for c in self.clients}
            if len(resolutions) != 1:
                raise ValueError("post-adaptation methods require one shared "
                                 f"client resolution, got {sorted(resolutions)}")


@dataclass
class RoundReport:
    round_index: int
    accuracy: float
    loss: float
    client_losses: Dict[int, float]
    client_spike_rates: Dict[int, List[float]]
    client_ops: Dict[int, OpCount]
    # diagnostic only: per-client test accuracy at the client's own resolution
    client_accuracy: Dict[int, float] = field(default_factory=dict)


def _client_config(base: TrainConfig, spec: ClientSpec) -> TrainConfig:
    if not spec.train_overrides:
        return base
    from dataclasses import replace

    return replace(base, **spec.train_overrides)


def broadcast(theta_c: ModelParams, clients: List[ClientSpec], method: str,
              t_central: int) -> List[ModelParams]:
    """Per-client copies of the global model with dynamics adapted T_c -> T_k
    (raw copies for the no-adaptation methods)."""
    rule = NONE if is_post(method) else method_rule(method)
    out = []
    for spec in clients:
        try:
            pair = ResolutionPair(t_from=t_central, t_to=spec.resolution)
            out.append(adapt_model(theta_c, rule, pair))
        except Exception as exc:
            raise FederationError(f"broadcast to client {spec.id} failed: {exc}") from exc
    return out


def aggregate(models: List[ModelParams], clients: List[ClientSpec], method: str,
              t_central: int) -> ModelParams:
    """Adapt each client model T_k -> T_c per the method's rule, then take the
    unweighted mean of every array, client ids in ascending order.

    The mean is accumulated incrementally (m += (x - m)/k) so aggregating K
    copies of one model returns it bit-for-bit for any K, which plain
    sum-then-divide does not guarantee in floating point.
    """
    if len(models) != len(clients) or not models:
        raise ValueError("one trained model per client is required")
    rule = NONE if is_post(method) else method_rule(method)
    order = np.argsort([c.id for c in clients], kind="stable")
    adapted = []
    for idx in order:
        spec = clients[idx]
        try:
            pair = ResolutionPair(t_from=spec.resolution, t_to=t_central)
            adapted.append(adapt_model(models[idx], rule, pair))
        except Exception as exc:
            raise FederationError(f"aggregation of client {spec.id} failed: {exc}") from exc
    dicts = [state_arrays(m) for m in adapted]
    keys = list(dicts[0])
    for d in dicts[1:]:
        if list(d) != keys:
            raise ValueError("client models are structurally different")
    mean = {}
    for key in keys:
        acc = dicts[0][key].copy()
        for k, d in enumerate(dicts[1:], start=2):
            acc += (d[key] - acc) / k
        mean[key] = acc
    return replace_arrays(adapted[0], mean)


def evaluate(model: ModelParams, test_set: List[FrameSequence],
             batch_size: int = 64) -> Tuple[float, float]:
    """Eval-mode accuracy and mean loss over a test set (side-effect free)."""
    if not test_set:
        raise ValueError("empty test set")
    labels = np.array([s.label for s in test_set])
    logit_blocks = []
    for start in range(0, len(test_set), batch_size):
        logits, _ = forward(test_set[start:start + batch_size], model, EVAL)
        logit_blocks.append(logits)
    logits = np.concatenate(logit_blocks)
    return accuracy(logits, labels), cross_entropy(logits, labels)


def run_federated(config: FederationConfig, theta_init: ModelParams):
    """Full federated run; returns the final global model and round reports."""
    theta_c = theta_init
    reports: List[RoundReport] = []
    n_rounds = config.rounds
    for rnd in range(n_rounds):
        client_models = broadcast(theta_c, config.clients, config.method,
                                  config.t_central)
        results = []
        for spec, model in zip(config.clients, client_models):
            rng = rng_for(config.seed, DOMAIN_TRAIN, rnd, spec.id)
            cfg = _client_config(config.train, spec)
            try:
                results.append(train_local(model, spec.shard, cfg, rng,
                                           epoch_offset=rnd * cfg.epochs))
            except Exception as exc:
                raise FederationError(
                    f"round {rnd}: client {spec.id} training failed: {exc}") from exc
        theta_c = aggregate([r.model for r in results], config.clients,
                            config.method, config.t_central)
        if is_post(config.method) and rnd == n_rounds - 1:
            t_client = config.clients[0].resolution
            pair = ResolutionPair(t_from=t_client, t_to=config.t_central)
            theta_c = adapt_model(theta_c, method_rule(config.method), pair)
        acc, loss = evaluate(theta_c, config.test_set, config.eval_batch_size)
        report = RoundReport(
            round_index=rnd, accuracy=acc, loss=loss,
            client_losses={s.id: r.mean_loss for s, r in zip(config.clients, results)},
            client_spike_rates={s.id: r.spike_rates
                                for s, r in zip(config.clients, results)},
            client_ops={s.id: r.op_count for s, r in zip(config.clients, results)})
        if config.client_test_sets:
            for spec in config.clients:
                tset = config.client_test_sets.get(spec.resolution)
                if tset:
                    pair = ResolutionPair(t_from=config.t_central, t_to=spec.resolution)
                    rule = NONE if is_post(config.method) else method_rule(config.method)
                    local = adapt_model(theta_c, rule, pair)
                    report.client_accuracy[spec.id] = evaluate(
                        local, tset, config.eval_batch_size)[0]
        reports.append(report)
    return theta_c, reports

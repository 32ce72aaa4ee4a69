"""Experiment runner and results comparison.

``fedta run config.yaml`` executes one experiment (one method on one client
scenario) over a list of seeds and writes, under the output directory:

* ``config.yaml``        - the parsed configuration, re-serialized
* ``seed_<s>/metrics.jsonl`` - one JSON object per communication round
* ``seed_<s>/timing.json``   - wall-clock seconds (kept out of metrics so
                               metric files are byte-reproducible)
* ``summary.csv``        - final metrics per seed plus mean/std rows
* ``series.csv``         - per-round accuracy/loss/energy across seeds

``fedta compare <dir>...`` merges summaries into one table keyed by
(scenario, T_c, family, variant, method), marking per-row best methods.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import csv
import json
import math
import statistics
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import yaml

from . import data as data_mod
from .energy import ZERO, accumulate_run, training_energy
from .errors import ConfigError
from .federation import (ClientSpec, FederationConfig, METHODS, evaluate,
                         is_post, method_rule, run_federated)
from .adaptation import DELTA_SHIFT, EULER, INTEGRAL
from .network import init_model
from .neurons import DELTA, LIF, SSM, STANDARD
from .seeding import (DOMAIN_DATASET, DOMAIN_INIT, DOMAIN_PARTITION,
                      DOMAIN_TEST_DATASET, rng_for)
from .training import TrainConfig

SCHEMA_VERSION = 1

SCENARIO_A = "a"
SCENARIO_B = "b"
SCENARIO_HOMOGENEOUS = "homogeneous"
SCENARIOS = (SCENARIO_A, SCENARIO_B, SCENARIO_HOMOGENEOUS)


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    scenario: str = SCENARIO_A
    resolutions: List[int] = field(default_factory=lambda: [1, 2, 4])
    clients_per_resolution: int = 1
    t_central: int = 1
    family: str = SSM
    variant: str = STANDARD
    method: str = "fedavg"
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    rounds: int = 10
    epochs: int = 2
    batch_size: int = 32
    lr: float = 1e-2
    lr_ssm: float = 1e-3
    weight_decay: float = 1e-3
    weight_decay_ssm: float = 1e-3
    dropout: float = 0.1
    clip_norm: float = 10.0
    hidden_layers: int = 2
    hidden_size: int = 64
    ssm_states: int = 4
    # synthetic dataset knobs (ignored when dataset paths are given)
    n_classes: int = 10
    n_channels: int = 32
    duration_s: float = 1.0
    base_window_s: float = 0.01
    train_per_class: int = 100
    test_per_class: int = 40
    base_rate_hz: float = 40.0
    profile_seed: int = 7
    # pre-binned import (columnar files at the base resolution)
    dataset_train_path: Optional[str] = None
    dataset_test_path: Optional[str] = None
    eval_batch_size: int = 64
    log_client_eval: bool = False
    out_dir: str = "runs/experiment"


_FIELD_TYPES = {f.name: f.type for f in ExperimentConfig.__dataclass_fields__.values()}


def parse_config(raw: dict, source: str = "<config>") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: configuration root must be a mapping")
    unknown = set(raw) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    validate_config(cfg, source)
    return cfg


def validate_config(cfg: ExperimentConfig, source: str = "<config>") -> None:
    def fail(field_name, msg):
        raise ConfigError(f"{source}: field '{field_name}': {msg}")

    if cfg.schema_version != SCHEMA_VERSION:
        fail("schema_version", f"expected {SCHEMA_VERSION}")
    if cfg.scenario not in SCENARIOS:
        fail("scenario", f"expected one of {SCENARIOS}")
    if cfg.scenario == SCENARIO_HOMOGENEOUS and len(cfg.resolutions) != 1:
        fail("resolutions", "homogeneous scenario takes exactly one resolution")
    if not cfg.resolutions or any(int(r) < 1 for r in cfg.resolutions):
        fail("resolutions", "must be positive integers")
    if cfg.scenario == SCENARIO_A and cfg.clients_per_resolution != 1:
        fail("clients_per_resolution", "scenario 'a' has one client per resolution")
    if cfg.clients_per_resolution < 1:
        fail("clients_per_resolution", "must be >= 1")
    if cfg.t_central < 1:
        fail("t_central", "must be >= 1")
    if cfg.family not in (LIF, SSM):
        fail("family", f"expected '{LIF}' or '{SSM}'")
    if cfg.variant not in (STANDARD, DELTA):
        fail("variant", f"expected '{STANDARD}' or '{DELTA}'")
    if cfg.method not in METHODS:
        fail("method", f"expected one of {METHODS}")
    rule = method_rule(cfg.method)
    if rule in (INTEGRAL, EULER) and cfg.variant != STANDARD:
        fail("method", f"{cfg.method} requires the standard variant")
    if rule == DELTA_SHIFT and cfg.variant != DELTA:
        fail("method", f"{cfg.method} requires the delta variant")
    if is_post(cfg.method) and len(set(cfg.resolutions)) != 1:
        fail("method", "post-adaptation methods require a single shared resolution")
    if not cfg.seeds:
        fail("seeds", "at least one seed is required")
    if cfg.rounds < 0 or cfg.epochs < 0:
        fail("rounds", "rounds and epochs must be non-negative")
    if bool(cfg.dataset_train_path) != bool(cfg.dataset_test_path):
        fail("dataset_train_path", "train and test paths must be given together")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(raw, source=str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(asdict(cfg), sort_keys=True)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


def _build_datasets(cfg: ExperimentConfig, seed: int):
    """(train, test) FrameSequence lists at the base resolution."""
    if cfg.dataset_train_path:
        return (data_mod.load_frames(cfg.dataset_train_path),
                data_mod.load_frames(cfg.dataset_test_path))
    spec = data_mod.default_spec(
        n_classes=cfg.n_classes, n_channels=cfg.n_channels, duration=cfg.duration_s,
        base_window=cfg.base_window_s, samples_per_class=cfg.train_per_class,
        base_rate=cfg.base_rate_hz, profile_seed=cfg.profile_seed)
    train_streams = data_mod.generate_synthetic(spec, rng_for(seed, DOMAIN_DATASET))
    test_spec = replace(spec, samples_per_class=cfg.test_per_class)
    test_streams = data_mod.generate_synthetic(test_spec, rng_for(seed, DOMAIN_TEST_DATASET))
    train = [data_mod.bin_to_frames(s, cfg.base_window_s) for s in train_streams]
    test = [data_mod.bin_to_frames(s, cfg.base_window_s) for s in test_streams]
    return train, test


def _client_resolutions(cfg: ExperimentConfig) -> List[int]:
    out = []
    for res in cfg.resolutions:
        out.extend([int(res)] * cfg.clients_per_resolution)
    return out


def run_one_seed(cfg: ExperimentConfig, seed: int):
    """One federated run; returns (round reports, run summary dict)."""
    train, test = _build_datasets(cfg, seed)
    resolutions = _client_resolutions(cfg)
    shards = data_mod.partition_iid(train, len(resolutions), rng_for(seed, DOMAIN_PARTITION))

    def at_resolution(seq, res):
        # models consume rate-normalized frames so the input value scale does
        # not depend on the client's resolution
        return data_mod.normalize_rate(data_mod.coarsen(seq, res))

    clients = [ClientSpec(id=k, resolution=res,
                          shard=[at_resolution(s, res) for s in shard])
               for k, (res, shard) in enumerate(zip(resolutions, shards))]
    test_c = [at_resolution(s, cfg.t_central) for s in test]
    client_test_sets = None
    if cfg.log_client_eval:
        client_test_sets = {res: [at_resolution(s, res) for s in test]
                            for res in sorted(set(resolutions))}
    theta = init_model(cfg.family, cfg.variant, c_in=test_c[0].frames.shape[1],
                       c_out=cfg.n_classes if not cfg.dataset_train_path
                       else int(max(s.label for s in train)) + 1,
                       hidden_sizes=[cfg.hidden_size] * cfg.hidden_layers,
                       n_states=cfg.ssm_states, rng=rng_for(seed, DOMAIN_INIT))
    train_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                            rounds=cfg.rounds, lr=cfg.lr, lr_ssm=cfg.lr_ssm,
                            weight_decay=cfg.weight_decay,
                            weight_decay_ssm=cfg.weight_decay_ssm,
                            dropout=cfg.dropout, clip_norm=cfg.clip_norm)
    fed = FederationConfig(clients=clients, t_central=cfg.t_central,
                           method=cfg.method, rounds=cfg.rounds, seed=seed,
                           train=train_cfg, test_set=test_c,
                           eval_batch_size=cfg.eval_batch_size,
                           client_test_sets=client_test_sets)
    theta_final, reports = run_federated(fed, theta)
    if reports:
        final_acc, final_loss = reports[-1].accuracy, reports[-1].loss
    else:
        final_acc, final_loss = evaluate(theta_final, test_c, cfg.eval_batch_size)
    summary = accumulate_run(reports)
    return reports, {
        "seed": seed,
        "final_accuracy": final_acc,
        "final_loss": final_loss,
        "total_multiplies": summary.total.multiplies,
        "total_adds": summary.total.adds,
        "total_energy_j": summary.total_energy_j,
    }


def _round_records(reports) -> List[dict]:
    records = []
    cum = ZERO
    for rep in reports:
        for cid in sorted(rep.client_ops):
            cum = cum + rep.client_ops[cid]
        energy_j = training_energy(cum)
        records.append({
            "round": rep.round_index,
            "accuracy": rep.accuracy,
            "loss": rep.loss,
            "client_losses": {str(k): v for k, v in rep.client_losses.items()},
            "client_spike_rates": {str(k): v for k, v in rep.client_spike_rates.items()},
            "client_ops": {str(k): [v.multiplies, v.adds]
                           for k, v in rep.client_ops.items()},
            "client_accuracy": {str(k): v for k, v in rep.client_accuracy.items()},
            "cumulative_ops": [cum.multiplies, cum.adds],
            "cumulative_energy_j": energy_j,
        })
    return records


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> int:
    """Execute all seeds, write artifacts; returns a process exit code."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(dump_config(cfg))

    def one(seed: int):
        t0 = time.monotonic()
        reports, summary = run_one_seed(cfg, seed)
        elapsed = time.monotonic() - t0
        seed_dir = out_dir / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        with open(seed_dir / "metrics.jsonl", "w") as fh:
            for record in _round_records(reports):
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        (seed_dir / "timing.json").write_text(
            json.dumps({"seconds": elapsed}) + "\n")
        return summary

    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                summaries = list(pool.map(one, cfg.seeds))
        else:
            summaries = [one(seed) for seed in cfg.seeds]
    except Exception:
        (out_dir / "FAILED").write_text(traceback.format_exc())
        print(f"error: run failed; partial outputs in {out_dir}", file=sys.stderr)
        traceback.print_exc()
        return 3
    _write_summary(out_dir / "summary.csv", cfg, summaries)
    _write_series(out_dir / "series.csv", cfg)
    return 0


_SUMMARY_FIELDS = ["scenario", "t_central", "family", "variant", "method", "seed",
                   "final_accuracy", "final_loss", "total_multiplies",
                   "total_adds", "total_energy_j"]


def _write_summary(path, cfg: ExperimentConfig, summaries: List[dict]) -> None:
    rows = []
    for s in summaries:
        rows.append({"scenario": cfg.scenario, "t_central": cfg.t_central,
                     "family": cfg.family, "variant": cfg.variant,
                     "method": cfg.method, **s})
    numeric = ["final_accuracy", "final_loss", "total_multiplies", "total_adds",
               "total_energy_j"]
    for stat in ("mean", "std"):
        row = {"scenario": cfg.scenario, "t_central": cfg.t_central,
               "family": cfg.family, "variant": cfg.variant,
               "method": cfg.method, "seed": stat}
        for col in numeric:
            values = [float(s[col]) for s in summaries]
            if stat == "mean":
                row[col] = statistics.fmean(values)
            else:
                row[col] = statistics.stdev(values) if len(values) > 1 else 0.0
        rows.append(row)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _write_series(path, cfg: ExperimentConfig) -> None:
    """Plot-ready per-round series averaged across seeds (accuracy vs round,
    and accuracy vs cumulative energy)."""
    per_seed = []
    for seed in cfg.seeds:
        metrics = Path(cfg.out_dir) / f"seed_{seed}" / "metrics.jsonl"
        with open(metrics) as fh:
            per_seed.append([json.loads(line) for line in fh])
    n_rounds = min((len(r) for r in per_seed), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "accuracy_mean", "accuracy_std", "loss_mean",
                         "cumulative_energy_j_mean"])
        for r in range(n_rounds):
            accs = [s[r]["accuracy"] for s in per_seed]
            losses = [s[r]["loss"] for s in per_seed]
            energies = [s[r]["cumulative_energy_j"] for s in per_seed]
            writer.writerow([r, statistics.fmean(accs),
                             statistics.stdev(accs) if len(accs) > 1 else 0.0,
                             statistics.fmean(losses), statistics.fmean(energies)])


# ---------------------------------------------------------------------------
# comparison of completed runs
# ---------------------------------------------------------------------------


def _load_run_summary(run_dir: Path):
    cfg_path = run_dir / "config.yaml"
    summary_path = run_dir / "summary.csv"
    if not cfg_path.exists() or not summary_path.exists():
        raise ConfigError(f"{run_dir}: not a completed run directory")
    cfg = parse_config(yaml.safe_load(cfg_path.read_text()), source=str(cfg_path))
    with open(summary_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    mean = next(r for r in rows if r["seed"] == "mean")
    std = next(r for r in rows if r["seed"] == "std")
    return cfg, float(mean["final_accuracy"]), float(std["final_accuracy"])


def compare(run_dirs: List[str], out_path: Optional[str] = None) -> str:
    """Merge run summaries into one table; per-row maxima are starred (ties
    all starred).  Returns the text rendering."""
    entries = {}
    methods = []
    for d in run_dirs:
        cfg, acc_mean, acc_std = _load_run_summary(Path(d))
        key = (cfg.scenario, cfg.t_central, cfg.family, cfg.variant)
        entries.setdefault(key, {})[cfg.method] = (acc_mean, acc_std)
        if cfg.method not in methods:
            methods.append(cfg.method)
    header = ["scenario", "t_central", "family", "variant"] + methods
    lines = ["\t".join(header)]
    csv_rows = []
    for key in sorted(entries):
        row_methods = entries[key]
        best = max(v[0] for v in row_methods.values())
        cells = []
        for m in methods:
            if m not in row_methods:
                cells.append("-")
                continue
            acc_mean, acc_std = row_methods[m]
            cell = f"{100 * acc_mean:.1f}±{100 * acc_std:.1f}"
            if math.isclose(acc_mean, best, rel_tol=0, abs_tol=1e-12):
                cell = f"**{cell}**"
            cells.append(cell)
        lines.append("\t".join([key[0], str(key[1]), key[2], key[3]] + cells))
        for m, (acc_mean, acc_std) in row_methods.items():
            csv_rows.append({"scenario": key[0], "t_central": key[1],
                             "family": key[2], "variant": key[3], "method": m,
                             "accuracy_mean": acc_mean, "accuracy_std": acc_std,
                             "best": math.isclose(acc_mean, best, rel_tol=0,
                                                  abs_tol=1e-12)})
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["scenario", "t_central", "family",
                                                    "variant", "method",
                                                    "accuracy_mean", "accuracy_std",
                                                    "best"])
            writer.writeheader()
            writer.writerows(csv_rows)
    return text


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedta",
                                     description="federated temporal-adaptation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a YAML experiment config")
    p_run.add_argument("--seed-override", default=None,
                       help="comma-separated seeds replacing the config's list")
    p_run.add_argument("--threads", type=int, default=1,
                       help="seeds executed in parallel")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_cmp = sub.add_parser("compare", help="merge summaries of completed runs")
    p_cmp.add_argument("dirs", nargs="+", help="run directories")
    p_cmp.add_argument("--out", default=None, help="write the combined CSV here")
    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            cfg = load_config(args.config)
            if args.seed_override:
                seeds = [int(s) for s in args.seed_override.split(",") if s.strip()]
                cfg = replace(cfg, seeds=seeds)
                validate_config(cfg, source="--seed-override")
            if args.out:
                cfg = replace(cfg, out_dir=args.out)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        return run_experiment(cfg, threads=args.threads)

    try:
        text = compare(args.dirs, out_path=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3
    print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())

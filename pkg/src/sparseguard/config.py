"""Experiment configuration: a JSON document that round-trips losslessly.

The document mirrors RunConfig and adds the dataset descriptor, the target
architecture, and output plumbing. Unknown keys are rejected so typos fail
fast; serialize(parse(text)) is a fixed point.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields

from .models import TargetSpec
from .orchestrator import RunConfig
from .sparse import ALL_PAIRS, StrategyPair

DEFAULT_PAIR_TAGS = tuple(p.tag() for p in ALL_PAIRS)
REQUIRED_FIELDS = ("omega", "dataset", "target")


@dataclass(frozen=True)
class ExperimentConfig:
    omega: float
    dataset: dict
    target: dict
    pairs: tuple = DEFAULT_PAIR_TAGS
    inner_iterations: int = 4000
    batch_size: int = 128
    candidate_finetune_epochs: float = 1.0
    total_epochs: float = 10.0
    variant: str = "none"
    beta: float = 0.1
    lam: float = 1.0
    learning_rate: float = 0.1
    lr_milestones: tuple = (0.5, 0.75)
    lr_decay: float = 0.1
    attacker_mode: str = "blackbox"
    attacker_epochs_first: int = 100
    attacker_epochs_topup: int = 20
    attacker_finetune_epochs: int = 5
    attacker_learning_rate: float = 0.001
    prune_rate_start: float = 0.2
    prune_rate_end: float = 0.02
    tau: float | None = None
    validation_fraction: float = 0.2
    probe_size: int = 512
    early_stop: bool = False
    early_stop_delta: float = 0.005
    early_stop_patience: int = 3
    seed: int = 0
    deterministic: bool = True
    out_dir: str = "runs"


_TUPLE_FIELDS = {"pairs", "lr_milestones"}


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in doc:
        if key not in known:
            raise ValueError(f"unknown field: {key}")
    for key in REQUIRED_FIELDS:
        if key not in doc:
            raise ValueError(f"missing field: {key}")
    values = dict(doc)
    for key in _TUPLE_FIELDS & set(values):
        if not isinstance(values[key], (list, tuple)):
            raise ValueError(f"field {key} must be a list")
        values[key] = tuple(values[key])
    for key in ("dataset", "target"):
        if not isinstance(values[key], dict):
            raise ValueError(f"field {key} must be an object")
    return ExperimentConfig(**values)


def serialize_config(config: ExperimentConfig) -> str:
    doc = {}
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = list(value)
        doc[f.name] = value
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def parse_pair_tag(tag: str) -> StrategyPair:
    parts = tag.split(":")
    if len(parts) != 2:
        raise ValueError(f"strategy tag must look like 'prune:grow', got {tag!r}")
    return StrategyPair(parts[0], parts[1])


def target_spec_from(doc: dict) -> TargetSpec:
    allowed = {"kind", "input_shape", "classes", "hidden", "channels", "kernel"}
    extra = set(doc) - allowed
    if extra:
        raise ValueError(f"unknown target field: {sorted(extra)[0]}")
    for key in ("kind", "input_shape", "classes"):
        if key not in doc:
            raise ValueError(f"missing target field: {key}")
    kwargs = dict(doc)
    kwargs["input_shape"] = tuple(kwargs["input_shape"])
    for key in ("hidden", "channels"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return TargetSpec(**kwargs)


def to_run_config(config: ExperimentConfig) -> RunConfig:
    """Translate the parsed document into the orchestrator's RunConfig."""
    return RunConfig(
        omega=config.omega,
        target=target_spec_from(config.target),
        pairs=tuple(parse_pair_tag(t) for t in config.pairs),
        inner_iterations=config.inner_iterations,
        batch_size=config.batch_size,
        candidate_finetune_epochs=config.candidate_finetune_epochs,
        total_epochs=config.total_epochs,
        variant=config.variant,
        beta=config.beta,
        lam=config.lam,
        learning_rate=config.learning_rate,
        lr_milestones=config.lr_milestones,
        lr_decay=config.lr_decay,
        attacker_mode=config.attacker_mode,
        attacker_epochs_first=config.attacker_epochs_first,
        attacker_epochs_topup=config.attacker_epochs_topup,
        attacker_finetune_epochs=config.attacker_finetune_epochs,
        attacker_learning_rate=config.attacker_learning_rate,
        prune_rate_start=config.prune_rate_start,
        prune_rate_end=config.prune_rate_end,
        tau=config.tau,
        validation_fraction=config.validation_fraction,
        probe_size=config.probe_size,
        early_stop=config.early_stop,
        early_stop_delta=config.early_stop_delta,
        early_stop_patience=config.early_stop_patience,
        seed=config.seed,
        deterministic=config.deterministic,
    )


def with_overrides(config: ExperimentConfig, *, seed=None, deterministic=None,
                   out_dir=None) -> ExperimentConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = int(seed)
    if deterministic is not None:
        updates["deterministic"] = bool(deterministic)
    if out_dir is not None:
        updates["out_dir"] = str(out_dir)
    return dataclasses.replace(config, **updates) if updates else config

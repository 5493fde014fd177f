"""Run configuration for the four training modes.

config_id selects the architecture/aggregation family:

  c41 - per-slice forward with 3x channel repetition, one volume per
        batch, exam probability = max over slices, variable slice count.
  c42 - from-scratch single-channel slices at a fixed count (default 15
        interpolated), slices batched across exams, max aggregation.
  c43 - one network per task over all three planes stacked into 45
        channels (15 slices x 3 planes).
  c44 - as c43 but one multi-label network emitting all three task
        probabilities at once.

Configs load from JSON; unknown keys are rejected at every level.
"""

import json
from dataclasses import dataclass, field, replace

from .augment import AugmentationPolicy
from .errors import ConfigError
from .nn.network import ModelConfig
from .resample import ResampleSpec
from .volume_io import PLANES, TASKS

CONFIG_IDS = ("c41", "c42", "c43", "c44")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    config_id: str
    tasks: tuple
    planes: tuple
    data_root: str
    out_dir: str
    resample: ResampleSpec | None = None
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        _validate(self)


def _derived_model(config_id, base: ModelConfig) -> ModelConfig:
    if config_id == "c41":
        return replace(base, in_channels=3, out_tasks=1, aggregation="max_over_slices")
    if config_id == "c42":
        return replace(base, in_channels=1, out_tasks=1, aggregation="max_over_slices")
    if config_id == "c43":
        return replace(base, in_channels=45, out_tasks=1, aggregation="stacked_channels")
    return replace(base, in_channels=45, out_tasks=3, aggregation="stacked_channels")


def _validate(cfg: RunConfig):
    if cfg.config_id not in CONFIG_IDS:
        raise ConfigError(f"unknown config_id {cfg.config_id!r}")
    for t in cfg.tasks:
        if t not in TASKS:
            raise ConfigError(f"unknown task {t!r}")
    for p in cfg.planes:
        if p not in PLANES:
            raise ConfigError(f"unknown plane {p!r}")
    if len(set(cfg.tasks)) != len(cfg.tasks) or len(set(cfg.planes)) != len(cfg.planes):
        raise ConfigError("tasks and planes must not repeat")
    if cfg.epochs < 0 or cfg.batch_size < 1 or not cfg.tasks or not cfg.planes:
        raise ConfigError("epochs must be >= 0, batch_size >= 1, tasks/planes non-empty")
    if cfg.config_id in ("c41", "c42"):
        if len(cfg.tasks) != 1 or len(cfg.planes) != 1:
            raise ConfigError(f"{cfg.config_id} trains one (task, plane) per model")
    if cfg.config_id == "c41" and cfg.batch_size != 1:
        raise ConfigError("c41 uses a batch of one volume (variable slice counts)")
    if cfg.config_id == "c42" and cfg.resample is None:
        raise ConfigError("c42 needs a resample spec for the fixed slice count")
    if cfg.config_id in ("c43", "c44"):
        if tuple(sorted(cfg.planes)) != tuple(sorted(PLANES)):
            raise ConfigError(f"{cfg.config_id} consumes all three planes")
        if cfg.resample is None or cfg.resample.target_count != 15:
            raise ConfigError(f"{cfg.config_id} needs 15 slices per plane "
                              "(45 stacked channels)")
    if cfg.config_id == "c43" and len(cfg.tasks) != 1:
        raise ConfigError("c43 trains one task per model")
    if cfg.config_id == "c44" and tuple(sorted(cfg.tasks)) != tuple(sorted(TASKS)):
        raise ConfigError("c44 trains all three tasks jointly")
    derived = _derived_model(cfg.config_id, cfg.model)
    if (cfg.model.in_channels, cfg.model.out_tasks, cfg.model.aggregation) != (
            derived.in_channels, derived.out_tasks, derived.aggregation):
        raise ConfigError("model in_channels/out_tasks/aggregation are derived "
                          f"from config_id {cfg.config_id}")


def make_run_config(config_id, tasks, planes, data_root, out_dir, *,
                    resample=None, augmentation=None, model=None,
                    optimizer=None, epochs=10, batch_size=None, seed=0) -> RunConfig:
    """Build a validated RunConfig with the mode-derived model fields.

    batch_size defaults to one volume for c41 and eight exams otherwise;
    an explicit conflicting value fails validation.
    """
    base_model = model or ModelConfig()
    if resample is None and config_id != "c41":
        resample = ResampleSpec(mode="interpolate", target_count=15)
    if augmentation is None:
        channel_mode = "three_channel" if config_id == "c41" else "single_channel"
        augmentation = AugmentationPolicy(channel_mode=channel_mode)
    if batch_size is None:
        batch_size = 1 if config_id == "c41" else 8
    return RunConfig(
        config_id=config_id,
        tasks=tuple(tasks) if not isinstance(tasks, str) else (tasks,),
        planes=tuple(planes) if not isinstance(planes, str) else (planes,),
        data_root=str(data_root),
        out_dir=str(out_dir),
        resample=resample,
        augmentation=augmentation,
        model=_derived_model(config_id, base_model),
        optimizer=optimizer or OptimizerConfig(),
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
    )


def _reject_unknown(doc, allowed, where):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _as_tuple(value):
    return (value,) if isinstance(value, str) else tuple(value)


def run_config_from_dict(doc: dict) -> RunConfig:
    """Parse the RunConfig JSON document; unknown keys are rejected."""
    top = {"config_id", "task", "plane", "resample", "augmentation", "model",
           "optimizer", "epochs", "batch_size", "seed", "data_root", "out_dir"}
    _reject_unknown(doc, top, "run config")
    for key in ("config_id", "task", "plane", "data_root", "out_dir"):
        if key not in doc:
            raise ConfigError(f"run config is missing {key!r}")

    resample = None
    if doc.get("resample") is not None:
        rdoc = dict(doc["resample"])
        _reject_unknown(rdoc, {"mode", "target_count", "reslice_axis"}, "resample")
        try:
            resample = ResampleSpec(**rdoc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif doc["config_id"] != "c41":
        resample = ResampleSpec(mode="interpolate", target_count=15)

    augmentation = None
    if doc.get("augmentation") is not None:
        try:
            augmentation = AugmentationPolicy.from_dict(dict(doc["augmentation"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    model = ModelConfig()
    if doc.get("model") is not None:
        mdoc = dict(doc["model"])
        _reject_unknown(mdoc, {"stem_filters", "stage_blocks", "input_size",
                               "stem_stride", "dtype"}, "model")
        model = replace(model, **mdoc)

    optimizer = OptimizerConfig()
    if doc.get("optimizer") is not None:
        odoc = dict(doc["optimizer"])
        _reject_unknown(odoc, {"learning_rate", "weight_decay", "beta1", "beta2",
                               "epsilon"}, "optimizer")
        optimizer = OptimizerConfig(**odoc)

    batch_size = doc.get("batch_size")
    return make_run_config(
        doc["config_id"],
        _as_tuple(doc["task"]),
        _as_tuple(doc["plane"]),
        doc["data_root"],
        doc["out_dir"],
        resample=resample,
        augmentation=augmentation,
        model=model,
        optimizer=optimizer,
        epochs=int(doc.get("epochs", 10)),
        batch_size=int(batch_size) if batch_size is not None else None,
        seed=int(doc.get("seed", 0)),
    )


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: run config must be a JSON object")
    return run_config_from_dict(doc)


def run_config_to_dict(run: RunConfig) -> dict:
    """Serialize a RunConfig back into the JSON file schema."""
    doc = {
        "config_id": run.config_id,
        "task": list(run.tasks),
        "plane": list(run.planes),
        "data_root": run.data_root,
        "out_dir": run.out_dir,
        "epochs": run.epochs,
        "batch_size": run.batch_size,
        "seed": run.seed,
        "augmentation": {"p": run.augmentation.p,
                         "channel_mode": run.augmentation.channel_mode,
                         "baseline_extras": run.augmentation.baseline_extras,
                         "crop_size": run.augmentation.crop_size},
        "model": {"stem_filters": run.model.stem_filters,
                  "stage_blocks": run.model.stage_blocks,
                  "input_size": run.model.input_size,
                  "stem_stride": run.model.stem_stride,
                  "dtype": run.model.dtype},
        "optimizer": {"learning_rate": run.optimizer.learning_rate,
                      "weight_decay": run.optimizer.weight_decay,
                      "beta1": run.optimizer.beta1,
                      "beta2": run.optimizer.beta2,
                      "epsilon": run.optimizer.epsilon},
    }
    if run.resample is not None:
        doc["resample"] = {"mode": run.resample.mode,
                           "target_count": run.resample.target_count,
                           "reslice_axis": run.resample.reslice_axis}
    else:
        doc["resample"] = None
    return doc

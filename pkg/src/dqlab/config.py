"""Run configuration: flat key=value text with section prefixes.

Sections: ``data.``, ``model.``, ``dequant.``, ``train.``, ``eval.``.
Unknown keys are rejected; everything is validated before any compute.
``canonical_items`` round-trips a parsed config with all defaults filled,
which is what gets echoed into run directories and checkpoints.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import data as data_mod
from .dequant import DEQUANT_KINDS, build_dequantizer
from .density import MODEL_KINDS, build_model
from .errors import ConfigError
from .objectives import VALID_KINDS, ObjectiveSpec
from .train import TrainConfig


@dataclass
class DataSpec:
    kind: str = "checkerboard"
    path: str = ""
    bit_depth: int = 1
    binarize_threshold: Optional[int] = None
    splits: tuple = (40000, 10000, 10000)
    subset: Optional[int] = None

    def validate(self):
        if self.kind not in ("checkerboard", "idx"):
            raise ConfigError(f"data.kind must be checkerboard or idx, "
                              f"got {self.kind!r}")
        if self.kind == "idx" and not self.path:
            raise ConfigError("data.path required for idx datasets")
        if self.bit_depth < 1:
            raise ConfigError("data.bit_depth must be >= 1")


@dataclass
class ModelSpec:
    kind: str = "flow"
    width: int = 64
    levels: int = 1
    subflows: int = 8

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
        if min(self.width, self.levels, self.subflows) < 1:
            raise ConfigError("model width/levels/subflows must be >= 1")


@dataclass
class DequantSpec:
    kind: str = "uniform"
    width: int = 64
    layers: int = 4
    context: int = 16

    def validate(self):
        if self.kind not in DEQUANT_KINDS:
            raise ConfigError(f"dequant.kind must be one of {DEQUANT_KINDS}")
        if min(self.width, self.layers, self.context) < 1:
            raise ConfigError("dequant width/layers/context must be >= 1")


@dataclass
class EvalSpec:
    k: int = 256
    size: int = 100000
    seed: int = 20200707
    grid_resolution: int = 80
    grid_lo: float = 0.0
    grid_hi: float = 2.0
    samples_per_component: int = 10000

    def validate(self):
        if self.k < 1 or self.size < 1 or self.grid_resolution < 1:
            raise ConfigError("eval.k/size/grid_resolution must be >= 1")
        if not self.grid_hi > self.grid_lo:
            raise ConfigError("eval.grid_hi must exceed eval.grid_lo")


@dataclass
class RunConfig:
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    dequant: DequantSpec = field(default_factory=DequantSpec)
    train: TrainConfig = None
    eval: EvalSpec = field(default_factory=EvalSpec)
    checkpoint_name: str = "model.ckpt"

    def validate(self):
        self.data.validate()
        self.model.validate()
        self.dequant.validate()
        self.eval.validate()
        if self.train is None:
            raise ConfigError("train section required (at least train.epochs)")


def _objective_from(kind, k, alpha, where):
    if kind not in VALID_KINDS:
        raise ConfigError(f"{where}: unknown objective {kind!r}")
    if kind == "vi":
        return ObjectiveSpec("vi", 1)
    if kind == "renyi":
        return ObjectiveSpec("renyi", k, alpha)
    return ObjectiveSpec(kind, k)


_INT = int
_FLOAT = float


def _parse_splits(raw):
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ConfigError("data.splits must be three comma-separated counts")
    return tuple(int(p) for p in parts)


# key -> (target, attribute, converter); train objective keys handled apart
_SCHEMA = {
    "data.kind": ("data", "kind", str),
    "data.path": ("data", "path", str),
    "data.bit_depth": ("data", "bit_depth", _INT),
    "data.binarize_threshold": ("data", "binarize_threshold", _INT),
    "data.splits": ("data", "splits", _parse_splits),
    "data.subset": ("data", "subset", _INT),
    "model.kind": ("model", "kind", str),
    "model.width": ("model", "width", _INT),
    "model.levels": ("model", "levels", _INT),
    "model.subflows": ("model", "subflows", _INT),
    "dequant.kind": ("dequant", "kind", str),
    "dequant.width": ("dequant", "width", _INT),
    "dequant.layers": ("dequant", "layers", _INT),
    "dequant.context": ("dequant", "context", _INT),
    "eval.k": ("eval", "k", _INT),
    "eval.size": ("eval", "size", _INT),
    "eval.seed": ("eval", "seed", _INT),
    "eval.grid_resolution": ("eval", "grid_resolution", _INT),
    "eval.grid_lo": ("eval", "grid_lo", _FLOAT),
    "eval.grid_hi": ("eval", "grid_hi", _FLOAT),
    "eval.samples_per_component": ("eval", "samples_per_component", _INT),
}

_TRAIN_KEYS = {
    "train.epochs": ("epochs", _INT),
    "train.batch_size": ("batch_size", _INT),
    "train.batches_per_epoch": ("batches_per_epoch", _INT),
    "train.lr": ("lr", _FLOAT),
    "train.warmup_epochs": ("warmup_epochs", _INT),
    "train.seed": ("seed", _INT),
    "train.grad_clip": ("grad_clip", _FLOAT),
    "train.val_size": ("val_size", _INT),
    "train.eval_k": ("eval_k", _INT),
}

_OBJECTIVE_KEYS = ("train.objective", "train.k", "train.alpha",
                   "train.finetune_objective", "train.finetune_k",
                   "train.finetune_alpha", "train.switch_epoch",
                   "train.checkpoint")


def parse_items(items):
    """Build a validated RunConfig from a key -> string mapping."""
    cfg = RunConfig()
    train_kwargs = {}
    obj = {"kind": "vi", "k": 1, "alpha": None}
    fine = {"kind": None, "k": 1, "alpha": None}
    switch_epoch = None
    for key, raw in items.items():
        raw = raw.strip()
        try:
            if key in _SCHEMA:
                section, attr, conv = _SCHEMA[key]
                setattr(getattr(cfg, section), attr, conv(raw))
            elif key in _TRAIN_KEYS:
                attr, conv = _TRAIN_KEYS[key]
                train_kwargs[attr] = conv(raw)
            elif key == "train.objective":
                obj["kind"] = raw
            elif key == "train.k":
                obj["k"] = int(raw)
            elif key == "train.alpha":
                obj["alpha"] = float(raw)
            elif key == "train.finetune_objective":
                fine["kind"] = raw
            elif key == "train.finetune_k":
                fine["k"] = int(raw)
            elif key == "train.finetune_alpha":
                fine["alpha"] = float(raw)
            elif key == "train.switch_epoch":
                switch_epoch = int(raw)
            elif key == "train.checkpoint":
                cfg.checkpoint_name = raw
            elif key.startswith("runtime."):
                continue  # checkpoint bookkeeping, not configuration
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    if "epochs" not in train_kwargs:
        raise ConfigError("train.epochs is required")
    objective = _objective_from(obj["kind"], obj["k"], obj["alpha"],
                                "train.objective")
    finetune = None
    if fine["kind"] is not None:
        finetune = _objective_from(fine["kind"], fine["k"], fine["alpha"],
                                   "train.finetune_objective")
    cfg.train = TrainConfig(objective=objective,
                            finetune_objective=finetune,
                            switch_epoch=switch_epoch,
                            **train_kwargs)
    cfg.validate()
    return cfg


def parse_config(text):
    """Parse flat key=value text (``#`` comments, blank lines ignored)."""
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, "
                              f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value.strip()
    return parse_items(items)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def canonical_items(cfg):
    """Complete key=value view of a RunConfig (defaults filled in)."""
    items = {
        "data.kind": cfg.data.kind,
        "data.bit_depth": _fmt(cfg.data.bit_depth),
        "model.kind": cfg.model.kind,
        "model.width": _fmt(cfg.model.width),
        "model.levels": _fmt(cfg.model.levels),
        "model.subflows": _fmt(cfg.model.subflows),
        "dequant.kind": cfg.dequant.kind,
        "dequant.width": _fmt(cfg.dequant.width),
        "dequant.layers": _fmt(cfg.dequant.layers),
        "dequant.context": _fmt(cfg.dequant.context),
        "train.objective": cfg.train.objective.kind,
        "train.k": _fmt(cfg.train.objective.k),
        "train.epochs": _fmt(cfg.train.epochs),
        "train.batch_size": _fmt(cfg.train.batch_size),
        "train.batches_per_epoch": _fmt(cfg.train.batches_per_epoch),
        "train.lr": _fmt(cfg.train.lr),
        "train.warmup_epochs": _fmt(cfg.train.warmup_epochs),
        "train.seed": _fmt(cfg.train.seed),
        "train.grad_clip": _fmt(cfg.train.grad_clip),
        "train.val_size": _fmt(cfg.train.val_size),
        "train.eval_k": _fmt(cfg.train.eval_k),
        "train.checkpoint": cfg.checkpoint_name,
        "eval.k": _fmt(cfg.eval.k),
        "eval.size": _fmt(cfg.eval.size),
        "eval.seed": _fmt(cfg.eval.seed),
        "eval.grid_resolution": _fmt(cfg.eval.grid_resolution),
        "eval.grid_lo": _fmt(cfg.eval.grid_lo),
        "eval.grid_hi": _fmt(cfg.eval.grid_hi),
        "eval.samples_per_component": _fmt(cfg.eval.samples_per_component),
    }
    if cfg.data.path:
        items["data.path"] = cfg.data.path
    if cfg.data.binarize_threshold is not None:
        items["data.binarize_threshold"] = _fmt(cfg.data.binarize_threshold)
    if cfg.data.kind == "idx":
        items["data.splits"] = ",".join(str(s) for s in cfg.data.splits)
    if cfg.data.subset is not None:
        items["data.subset"] = _fmt(cfg.data.subset)
    if cfg.train.objective.alpha is not None:
        items["train.alpha"] = _fmt(cfg.train.objective.alpha)
    if cfg.train.finetune_objective is not None:
        ft = cfg.train.finetune_objective
        items["train.finetune_objective"] = ft.kind
        items["train.finetune_k"] = _fmt(ft.k)
        if ft.alpha is not None:
            items["train.finetune_alpha"] = _fmt(ft.alpha)
        items["train.switch_epoch"] = _fmt(cfg.train.switch_epoch)
    return items


def config_text(cfg):
    return "\n".join(f"{k}={v}" for k, v in canonical_items(cfg).items()) + "\n"


@dataclass
class DataBundle:
    """Built data objects: a batch source plus held-out arrays."""
    source: object
    dim: int
    bit_depth: int
    val_x: Optional[np.ndarray] = None
    test_x: Optional[np.ndarray] = None

    def eval_points(self, eval_spec):
        """Evaluation inputs: the test split, or fresh draws for synthetic
        sources."""
        if self.test_x is not None:
            return self.test_x[:eval_spec.size]
        rng = np.random.default_rng([eval_spec.seed, 7])
        return self.source.sample(eval_spec.size, rng)


def build_data(spec):
    spec.validate()
    if spec.kind == "checkerboard":
        return DataBundle(source=data_mod.CheckerboardSource(), dim=2,
                          bit_depth=1)
    ds = data_mod.load_idx(spec.path, splits=spec.splits,
                           bit_depth=spec.bit_depth)
    if spec.binarize_threshold is not None:
        ds = data_mod.binarize_dataset(ds, spec.binarize_threshold)
    train = ds.train
    if spec.subset is not None:
        train = type(train)(train.values[:spec.subset], train.bit_depth)
    return DataBundle(source=data_mod.ArraySource(train), dim=ds.dim,
                      bit_depth=ds.bit_depth, val_x=ds.val.values,
                      test_x=ds.test.values)


def build_run(cfg):
    """Construct (bundle, model, dequantizer) with seed-derived init rng."""
    cfg.validate()
    bundle = build_data(cfg.data)
    init_rng = np.random.default_rng([cfg.train.seed, 0])
    model = build_model(cfg.model.kind, init_rng, bundle.dim,
                        bundle.bit_depth, width=cfg.model.width,
                        levels=cfg.model.levels, subflows=cfg.model.subflows)
    dequantizer = build_dequantizer(cfg.dequant.kind, init_rng, bundle.dim,
                                    bundle.bit_depth, width=cfg.dequant.width,
                                    n_layers=cfg.dequant.layers,
                                    n_context=cfg.dequant.context)
    return bundle, model, dequantizer

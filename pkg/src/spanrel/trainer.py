"""Training drivers: single-task, joint multi-task, and fine-tuning.

All regimes share one recipe: Adam with gradient clipping, per-epoch dev
evaluation, and early stopping once the dev metric has failed to improve for
`patience` consecutive epochs (the best-epoch weights are restored). Joint
training samples a task per step with probability proportional to its
training-set size and updates the shared encoder plus that task's head only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .brat import Document
from .checkpoint import load_parameters, save_parameters
from .decoders import assemble_document, decode_instance
from .encoder import EncoderConfig, build_vocab
from .metrics import MetricReport, evaluate_documents, relation_f1, span_f1
from .model import SpanRelModel
from .optim import Parameters, adam_step, clip_global_norm
from .schema import SentenceInstance, TaskSchema, freeze_schema, schema_from_dict, \
    schema_to_dict, to_instances


class EmptyDataset(ValueError):
    pass


class DivergedLoss(FloatingPointError):
    pass


class UnknownBundleTask(KeyError):
    pass


@dataclass
class TrainerConfig:
    mode: str = "stl"  # stl | mtl | mtl_ft
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 3
    seed: int = 13
    grad_clip: float = 5.0
    fine_tune_task: str | None = None

    def __post_init__(self):
        if self.mode not in ("stl", "mtl", "mtl_ft"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.mode == "mtl_ft" and not self.fine_tune_task:
            raise ValueError("mtl_ft requires fine_tune_task")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainerConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown trainer config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TaskData:
    schema: TaskSchema
    train_docs: list[Document]
    dev_docs: list[Document]


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0

    def update(self, value: float) -> tuple[bool, bool]:
        improved = value > self.best
        if improved:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return improved, self.bad_epochs >= self.patience


@dataclass
class ModelBundle:
    params: Parameters
    encoder_config: EncoderConfig
    vocab: dict[str, int]
    schemas: dict[str, TaskSchema]

    def model(self) -> SpanRelModel:
        return SpanRelModel(self.encoder_config, self.vocab, self.schemas)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_parameters(self.params, directory / "params.bin")
        meta = {
            "format_version": 1,
            "encoder_config": self.encoder_config.to_dict(),
            "vocab": self.vocab,
            "schemas": {name: schema_to_dict(s) for name, s in self.schemas.items()},
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2),
                                             encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "ModelBundle":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        return cls(params=load_parameters(directory / "params.bin"),
                   encoder_config=EncoderConfig.from_dict(meta["encoder_config"]),
                   vocab=meta["vocab"],
                   schemas={name: schema_from_dict(d)
                            for name, d in meta["schemas"].items()})


# ---------------------------------------------------------------------------
# core step and evaluation


def step_batch(model: SpanRelModel, params: Parameters,
               batch: list[SentenceInstance], config: TrainerConfig,
               rng: np.random.Generator, task: str) -> float | None:
    """One forward/backward/update over a batch; returns the mean loss."""
    g = ad.Graph()
    bound = ad.BoundParams(g, params)
    losses = []
    stats = {"pruned_gold_relations": 0, "dummy_fallbacks": 0}
    for inst in batch:
        result = model.forward(g, bound, inst, train=True, rng=rng)
        if result.loss is not None:
            losses.append(result.loss)
        stats["pruned_gold_relations"] += result.pruned_gold_relations
        stats["dummy_fallbacks"] += result.dummy_fallbacks
    if not losses:
        return None
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    loss = ad.scale(total, 1.0 / len(losses))
    loss_value = loss.item()
    if not np.isfinite(loss_value):
        raise DivergedLoss(f"loss became {loss_value}")
    names = model.trainable_names(params, task)
    grads = ad.parameter_gradients(g, loss, names, params)
    clip_global_norm(grads, config.grad_clip)
    adam_step(params.restrict(names), grads, lr=config.lr, beta1=config.beta1,
              beta2=config.beta2, weight_decay=config.weight_decay)
    return loss_value


def predict_documents(model: SpanRelModel, params: Parameters, schema: TaskSchema,
                      docs: list[Document]) -> list[Document]:
    """Decode task outputs for every document (eval mode, no dropout)."""
    out = []
    for doc in docs:
        instances = to_instances(doc, schema)
        predictions = []
        for inst in instances:
            g = ad.Graph()
            bound = ad.BoundParams(g, params)
            result = model.forward(g, bound, inst, train=False, compute_loss=False)
            predictions.append(decode_instance(result, inst, schema))
        out.append(assemble_document(doc, schema, instances, predictions))
    return out


def evaluate_task(model: SpanRelModel, params: Parameters, schema: TaskSchema,
                  docs: list[Document]) -> tuple[MetricReport, dict[str, float]]:
    """Task metric plus always-on span/relation F1 extras."""
    preds = predict_documents(model, params, schema, docs)
    report = evaluate_documents(docs, preds, schema)
    extras = {"span_f1": span_f1(docs, preds).f1}
    if schema.relation_labels:
        extras["relation_f1"] = relation_f1(docs, preds).f1
    return report, extras


# ---------------------------------------------------------------------------
# data plumbing


def _freeze_tasks(tasks: list[TaskData]) -> dict[str, TaskSchema]:
    schemas = {}
    for td in tasks:
        schemas[td.schema.name] = freeze_schema(td.schema,
                                                td.train_docs + td.dev_docs)
    return schemas


def _instances(schema: TaskSchema, docs: list[Document]) -> list[SentenceInstance]:
    out = []
    for doc in docs:
        out.extend(to_instances(doc, schema))
    return [inst for inst in out if inst.tokens]


class _TaskBatcher:
    """Shuffled cyclic batches over one task's instances."""

    def __init__(self, instances: list[SentenceInstance], batch_size: int,
                 rng: np.random.Generator):
        self.instances = instances
        self.batch_size = batch_size
        self.rng = rng
        self.order: list[int] = []
        self.cursor = 0

    def next_batch(self) -> list[SentenceInstance]:
        batch = []
        while len(batch) < self.batch_size:
            if self.cursor >= len(self.order):
                self.order = list(self.rng.permutation(len(self.instances)))
                self.cursor = 0
            batch.append(self.instances[self.order[self.cursor]])
            self.cursor += 1
        return batch


def sample_task(rng: np.random.Generator, sizes: list[int]) -> int:
    """Pick a task index with probability proportional to dataset size."""
    total = float(sum(sizes))
    probs = [s / total for s in sizes]
    return int(rng.choice(len(sizes), p=probs))


# ---------------------------------------------------------------------------
# training regimes


def _fit(model: SpanRelModel, params: Parameters, tasks: list[TaskData],
         config: TrainerConfig, rng: np.random.Generator,
         log: list[dict]) -> Parameters:
    """Shared epoch loop; `tasks` drive sampling, early stopping uses the
    mean dev metric across them."""
    batchers = {}
    sizes = []
    for td in tasks:
        instances = _instances(td.schema, td.train_docs)
        if not instances:
            raise EmptyDataset(f"task {td.schema.name} has no training instances")
        batchers[td.schema.name] = _TaskBatcher(instances, config.batch_size, rng)
        sizes.append(len(instances))

    steps_per_epoch = max(1, math.ceil(sum(sizes) / config.batch_size))
    stopper = EarlyStopper(config.patience)
    best = params.clone()
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses: dict[str, list[float]] = {td.schema.name: [] for td in tasks}
        for _ in range(steps_per_epoch):
            idx = sample_task(rng, sizes) if len(tasks) > 1 else 0
            task = tasks[idx].schema.name
            loss = step_batch(model, params, batchers[task].next_batch(),
                              config, rng, task)
            if loss is not None:
                epoch_losses[task].append(loss)

        dev_values = []
        for td in tasks:
            report, extras = evaluate_task(model, params, td.schema, td.dev_docs)
            dev_values.append(report.f1)
            task_losses = epoch_losses[td.schema.name]
            entry = {"epoch": epoch, "task": td.schema.name,
                     "loss": float(np.mean(task_losses)) if task_losses else None,
                     "dev_metric": report.f1, "metric": report.metric}
            entry.update(extras)
            log.append(entry)
        mean_dev = float(np.mean(dev_values))
        if len(tasks) > 1:
            log.append({"epoch": epoch, "task": "__mean__", "loss": None,
                        "dev_metric": mean_dev, "metric": "mean"})
        improved, stop = stopper.update(mean_dev)
        if improved:
            best = params.clone()
        if stop:
            break
    return best


def train_stl(config: TrainerConfig, encoder_config: EncoderConfig,
              schema: TaskSchema, train_docs: list[Document],
              dev_docs: list[Document]) -> tuple[ModelBundle, list[dict]]:
    """Single-task training with early stopping on the task's dev metric."""
    if not train_docs:
        raise EmptyDataset("no training documents")
    frozen = freeze_schema(schema, train_docs + dev_docs)
    vocab = build_vocab(doc.tokens() for doc in train_docs)
    rng = np.random.default_rng(config.seed)
    model = SpanRelModel(encoder_config, vocab, {frozen.name: frozen})
    params = model.init_params(rng)
    log: list[dict] = []
    tasks = [TaskData(schema=frozen, train_docs=train_docs, dev_docs=dev_docs)]
    best = _fit(model, params, tasks, config, rng, log)
    return ModelBundle(best, encoder_config, vocab, {frozen.name: frozen}), log


def train_mtl(config: TrainerConfig, encoder_config: EncoderConfig,
              tasks: list[TaskData]) -> tuple[ModelBundle, list[dict]]:
    """Joint training: shared encoder, one head per task, proportional sampling."""
    if len(tasks) < 2:
        raise ValueError("joint training needs at least two tasks")
    schemas = _freeze_tasks(tasks)
    tasks = [TaskData(schema=schemas[td.schema.name], train_docs=td.train_docs,
                      dev_docs=td.dev_docs) for td in tasks]
    vocab = build_vocab(doc.tokens() for td in tasks for doc in td.train_docs)
    rng = np.random.default_rng(config.seed)
    model = SpanRelModel(encoder_config, vocab, schemas)
    params = model.init_params(rng)
    log: list[dict] = []
    best = _fit(model, params, tasks, config, rng, log)
    return ModelBundle(best, encoder_config, vocab, schemas), log


def fine_tune(bundle: ModelBundle, config: TrainerConfig, task: str,
              train_docs: list[Document], dev_docs: list[Document]) -> tuple[ModelBundle, list[dict]]:
    """Continue training on one task with a fresh optimizer state.

    Only the shared encoder and the target task's head are updated; every
    other head stays bitwise identical.
    """
    if task not in bundle.schemas:
        raise UnknownBundleTask(f"bundle has no task {task!r}")
    params = bundle.params.clone()
    params.reset_optimizer_state()
    schema = bundle.schemas[task]
    model = bundle.model()
    rng = np.random.default_rng(config.seed)
    log: list[dict] = []
    tasks = [TaskData(schema=schema, train_docs=train_docs, dev_docs=dev_docs)]
    best = _fit(model, params, tasks, config, rng, log) if config.max_epochs > 0 else params
    return ModelBundle(best, bundle.encoder_config, bundle.vocab,
                       dict(bundle.schemas)), log

"""Multi-task training: one mini-batch per language task per step, losses
averaged into a single objective, one backward pass, Adam update.

Early stopping watches the combined validation loss; the weights returned
are the best-validation ones, not the last. When ``freeze_norm_and_bias``
is on, every bias vector and layer-norm parameter is excluded from the
optimizer and stays bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .corpus import Language, PostTriplet
from .errors import MissingGradError, MissingTaskError, WrongArityError
from .model import Transformer, is_bias_or_norm
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, SubwordVocabulary

INPUT_MODES = ("both", "code_only", "desc_only")

TASKS = (Language.JAVA, Language.CSHARP, Language.PYTHON, Language.JAVASCRIPT)
NUM_TASKS = len(TASKS)


@dataclass
class TrainingConfig:
    learning_rate: float = 0.0005
    batch_size: int = 30
    dropout: float = 0.1
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    freeze_norm_and_bias: bool = False
    input_mode: str = "both"
    grad_clip: float = 1.0
    max_steps: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")


@dataclass
class TaskBatch:
    task: Language
    encoder_ids: np.ndarray  # [batch, src_len] padded with PAD
    encoder_mask: np.ndarray  # [batch, src_len] bool
    decoder_inputs: np.ndarray  # [batch, tgt_len], BOS-prefixed
    decoder_targets: np.ndarray  # [batch, tgt_len], EOS-terminated, PAD elsewhere


@dataclass
class TrainingState:
    step: int = 0
    task_losses: dict = field(default_factory=dict)
    combined_loss: float = math.inf
    best_validation: float = math.inf
    epochs_since_improvement: int = 0
    best_arrays: dict | None = None


def modality_fields(triplet: PostTriplet, input_mode: str) -> tuple[str, str]:
    """Description/code actually fed to the encoder under an ablation mode."""
    if input_mode == "both":
        return triplet.description, triplet.code
    if input_mode == "desc_only":
        return triplet.description, ""
    if input_mode == "code_only":
        return "", triplet.code
    raise ValueError(f"unknown input_mode {input_mode!r}")


def make_task_batch(
    vocab: SubwordVocabulary,
    model_config,
    triplets,
    input_mode="both",
    task: Language | None = None,
) -> TaskBatch:
    triplets = list(triplets)
    if not triplets:
        raise MissingTaskError("cannot build a batch from zero triplets")
    task = task or triplets[0].language
    enc_seqs, dec_in_seqs, dec_tgt_seqs = [], [], []
    for t in triplets:
        desc, code = modality_fields(t, input_mode)
        enc = vocab.build_model_input(t.language, desc, code, model_config.max_encoder_len)
        title_ids = vocab.encode(t.title)[: model_config.max_decoder_len - 1]
        target = title_ids + [EOS_ID]
        enc_seqs.append(enc.token_ids)
        dec_in_seqs.append([BOS_ID] + target[:-1])
        dec_tgt_seqs.append(target)

    src_len = max(len(s) for s in enc_seqs)
    tgt_len = max(len(s) for s in dec_tgt_seqs)
    b = len(triplets)
    enc_ids = np.full((b, src_len), PAD_ID, dtype=np.int64)
    enc_mask = np.zeros((b, src_len), dtype=bool)
    dec_in = np.full((b, tgt_len), PAD_ID, dtype=np.int64)
    dec_tgt = np.full((b, tgt_len), PAD_ID, dtype=np.int64)
    for i, (e, di, dt) in enumerate(zip(enc_seqs, dec_in_seqs, dec_tgt_seqs)):
        enc_ids[i, : len(e)] = e
        enc_mask[i, : len(e)] = True
        dec_in[i, : len(di)] = di
        dec_tgt[i, : len(dt)] = dt
    return TaskBatch(task, enc_ids, enc_mask, dec_in, dec_tgt)


def task_loss(model: Transformer, batch: TaskBatch, training=False, rng=None) -> T.Tensor:
    """Teacher-forced mean NLL of the target tokens for one task batch."""
    enc = model.encode_batch(batch.encoder_ids, batch.encoder_mask, training=training, rng=rng)
    logits = model.decoder_logits(batch.decoder_inputs, enc, training=training, rng=rng)
    return T.cross_entropy(logits, batch.decoder_targets, PAD_ID)


def multi_task_loss(losses):
    """Arithmetic mean of exactly four per-task losses."""
    losses = list(losses)
    if len(losses) != NUM_TASKS:
        raise WrongArityError(f"expected {NUM_TASKS} task losses, got {len(losses)}")
    if all(isinstance(l, T.Tensor) for l in losses):
        total = T.add(T.add(losses[0], losses[1]), T.add(losses[2], losses[3]))
        return T.mul(total, 1.0 / NUM_TASKS)
    return (losses[0] + losses[1] + losses[2] + losses[3]) / NUM_TASKS


class Adam:
    """Adam with optional freezing of bias / layer-norm parameter groups."""

    def __init__(self, named_params, learning_rate, beta1=0.9, beta2=0.999,
                 eps=1e-8, freeze_norm_and_bias=False):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.slots = []
        for name, p in named_params:
            if freeze_norm_and_bias and is_bias_or_norm(name):
                continue
            self.slots.append(
                (name, p, np.zeros_like(p.data, dtype=np.float64),
                 np.zeros_like(p.data, dtype=np.float64))
            )

    def clip_gradients(self, max_norm):
        """Scale every gradient so their joint L2 norm is at most max_norm."""
        total = 0.0
        for name, p, _, _ in self.slots:
            if p.grad is None:
                raise MissingGradError(f"no gradient for {name}")
            total += float((p.grad.astype(np.float64) ** 2).sum())
        norm = math.sqrt(total)
        if norm > max_norm > 0:
            scale = max_norm / norm
            for _, p, _, _ in self.slots:
                p.grad = p.grad * p.data.dtype.type(scale)
        return norm

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1 ** self.t
        correct2 = 1.0 - b2 ** self.t
        for name, p, m, v in self.slots:
            if p.grad is None:
                raise MissingGradError(f"no gradient for {name}")
            g = p.grad.astype(np.float64)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)

    def zero_grads(self):
        for _, p, _, _ in self.slots:
            p.grad = None


class EarlyStopper:
    """Stops after ``patience`` epochs without validation improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = math.inf
        self.epochs_since_best = 0

    def update(self, value) -> bool:
        """Record an epoch's validation value; True means improvement."""
        if value < self.best:
            self.best = value
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self):
        return self.epochs_since_best >= self.patience


class _BatchCycler:
    """Endless seeded batch stream over one task's training triplets."""

    def __init__(self, triplets, batch_size, seed):
        self.triplets = list(triplets)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._queue = []

    def next_indices(self):
        while len(self._queue) < self.batch_size:
            order = self.rng.permutation(len(self.triplets))
            self._queue.extend(int(i) for i in order)
        take, self._queue = self._queue[: self.batch_size], self._queue[self.batch_size:]
        return take

    def next_batch(self, vocab, model_config, input_mode, task):
        picked = [self.triplets[i] for i in self.next_indices()]
        return make_task_batch(vocab, model_config, picked, input_mode, task)


@dataclass
class FitResult:
    history: list[dict]
    best_validation: float
    best_epoch: int
    epochs_run: int
    steps_run: int
    state: TrainingState


def validation_loss(model, vocab, corpora, config) -> float:
    """Combined validation loss: mean over tasks of mean batch NLL.

    A task with an empty validation split falls back to its training
    split, so degenerate fixture corpora still drive early stopping.
    """
    per_task = []
    with T.no_grad():
        for lang in TASKS:
            triplets = corpora[lang]["validation"] or corpora[lang]["train"]
            total, count = 0.0, 0
            for start in range(0, len(triplets), config.batch_size):
                chunk = triplets[start:start + config.batch_size]
                batch = make_task_batch(vocab, model.config, chunk, config.input_mode, lang)
                loss = task_loss(model, batch, training=False)
                total += loss.item() * len(chunk)
                count += len(chunk)
            per_task.append(total / count)
    return multi_task_loss(per_task)


def fit(model: Transformer, vocab: SubwordVocabulary, corpora, config: TrainingConfig) -> FitResult:
    """Train with the four-task averaged objective and early stopping.

    ``corpora`` maps each Language to {"train": [...], "validation": [...]}.
    An epoch is one pass over the smallest task corpus, so tasks stay
    balanced regardless of their sizes.
    """
    for lang in TASKS:
        if lang not in corpora or not corpora[lang].get("train"):
            raise MissingTaskError(f"no training data for task {lang.value}")

    rng = np.random.default_rng(config.seed)
    cyclers = {
        lang: _BatchCycler(corpora[lang]["train"], config.batch_size, config.seed + i)
        for i, lang in enumerate(TASKS)
    }
    optimizer = Adam(
        model.params.named(), config.learning_rate,
        freeze_norm_and_bias=config.freeze_norm_and_bias,
    )
    smallest = min(len(corpora[lang]["train"]) for lang in TASKS)
    steps_per_epoch = max(1, math.ceil(smallest / config.batch_size))

    state = TrainingState()
    stopper = EarlyStopper(config.patience)
    history: list[dict] = []
    best_epoch = 0
    epoch = 0
    done = False

    while epoch < config.max_epochs and not done:
        epoch += 1
        for _ in range(steps_per_epoch):
            losses = []
            for lang in TASKS:
                batch = cyclers[lang].next_batch(vocab, model.config, config.input_mode, lang)
                losses.append(task_loss(model, batch, training=True, rng=rng))
            combined = multi_task_loss(losses)
            model.params.zero_grads()
            T.backward(combined)
            if config.grad_clip:
                optimizer.clip_gradients(config.grad_clip)
            optimizer.step()
            T.active_tape().reset()

            state.step += 1
            state.task_losses = {
                lang.value: float(l.item()) for lang, l in zip(TASKS, losses)
            }
            state.combined_loss = float(combined.item())
            history.append({
                "step": state.step,
                "epoch": epoch,
                "combined_loss": state.combined_loss,
                **{f"loss_{k}": v for k, v in state.task_losses.items()},
            })
            if config.max_steps is not None and state.step >= config.max_steps:
                done = True
                break

        val = validation_loss(model, vocab, corpora, config)
        history.append({"step": state.step, "epoch": epoch, "validation_loss": val})
        if stopper.update(val):
            state.best_validation = val
            state.best_arrays = model.params.state_arrays()
            best_epoch = epoch
        state.epochs_since_improvement = stopper.epochs_since_best
        if stopper.should_stop:
            done = True

    if state.best_arrays is not None:
        model.params.load_arrays(state.best_arrays)
    return FitResult(
        history=history,
        best_validation=state.best_validation,
        best_epoch=best_epoch,
        epochs_run=epoch,
        steps_run=state.step,
        state=state,
    )


# --- flat key=value config files ---------------------------------------------

_MODEL_KEYS = {"d_model", "n_heads", "n_layers", "d_ff", "max_encoder_len",
               "max_decoder_len", "vocab_size"}


def parse_config_file(path) -> tuple[TrainingConfig, dict]:
    """Read ``key = value`` lines into a TrainingConfig plus model overrides."""
    training_fields = {f.name: f.type for f in fields(TrainingConfig)}
    training_kwargs: dict = {}
    model_overrides: dict = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _MODEL_KEYS:
            model_overrides[key] = int(value)
        elif key in training_fields:
            training_kwargs[key] = _coerce(key, value)
        else:
            raise ValueError(f"unknown config key: {key}")
    return TrainingConfig(**training_kwargs), model_overrides


def _coerce(key, value):
    if key in {"learning_rate", "dropout", "grad_clip"}:
        return float(value)
    if key == "freeze_norm_and_bias":
        return value.lower() in {"1", "true", "yes", "on"}
    if key == "input_mode":
        return value
    if key == "max_steps":
        return None if value.lower() in {"none", ""} else int(value)
    return int(value)

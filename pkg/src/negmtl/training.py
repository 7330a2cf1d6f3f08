"""Optimization and experiment protocol.

Covers Adam, single-task sentiment training, the alternating multi-task
schedule (one full negation epoch, then one full sentiment epoch), the
seeded 5-run ensemble with majority voting, the bag-of-words logistic
regression baseline, and binary checkpoint serialization.

Determinism contract: (config, seed, corpus) fully determine every
parameter and prediction.  Each run derives three independent RNG
streams (initialization, shuffling, dropout) from its seed, so changing
how one stream is consumed never shifts the others.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward, zero_grads
from .corpus import Document, Vocabulary, build_vocab, to_bio
from .evaluation import PredictionRecord, accuracy
from .models import (
    LABEL_TO_CLASS,
    ModelParams,
    negation_loss,
    predict_document,
    sentiment_loss,
)


class TrainingError(Exception):
    pass


class OptimizerError(TrainingError):
    pass


class CheckpointError(TrainingError):
    pass


MODES = ("stl", "mtl", "bow")
MTL_SCHEDULES = ("alternating", "warmup_once")


@dataclass(frozen=True)
class TrainConfig:
    """Run configuration; every field is config-file/CLI exposed.

    The neural defaults (dims 100, lr 0.001, 30 epochs, patience 10,
    dropout 0.3) suit the small-corpus scale this tool targets.
    """

    mode: str = "stl"
    seed: int = 1
    epochs: int = 30
    learning_rate: float = 0.001
    embedding_dim: int = 100
    hidden_dim: int = 100  # per direction, both levels
    dropout_p: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 10
    min_count: int = 1
    lowercase: bool = False
    mtl_schedule: str = "alternating"
    bow_c_grid: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mtl_schedule not in MTL_SCHEDULES:
            raise ValueError(f"mtl_schedule must be one of {MTL_SCHEDULES}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.embedding_dim < 1 or self.hidden_dim < 1:
            raise ValueError("embedding_dim and hidden_dim must be >= 1")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.min_count < 1:
            raise ValueError(f"min_count must be >= 1, got {self.min_count}")
        if not self.bow_c_grid or any(c <= 0 for c in self.bow_c_grid):
            raise ValueError("bow_c_grid must be non-empty and positive")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    def to_dict(self) -> dict:
        # JSON-shaped: sequences as lists, so a dict that went through a
        # JSON file compares equal to a freshly produced one
        obj = dataclasses.asdict(self)
        obj["bow_c_grid"] = list(self.bow_c_grid)
        obj["seeds"] = list(self.seeds)
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        coerced = dict(obj)
        for key in ("bow_c_grid", "seeds"):
            if key in coerced:
                coerced[key] = tuple(coerced[key])
        return cls(**coerced)


def rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Three independent generators per run: (init, shuffle, dropout)."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter moment estimates, lazily allocated by name."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: TrainConfig) -> "AdamState":
        return cls(config.learning_rate, config.beta1, config.beta2, config.epsilon)


def adam_step(state: AdamState, params: dict[str, Tensor], names: Iterable[str]):
    """One bias-corrected Adam update on the named parameters:
    m̂ = m/(1-β1^t), v̂ = v/(1-β2^t), θ ← θ - lr·m̂/(√v̂ + ε)."""
    for name in names:
        p = params[name]
        g = p.grad
        if g is None:
            raise OptimizerError(f"parameter {name!r} has no gradient")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def apply_updates(state: AdamState, params: dict[str, Tensor], names: Sequence[str]):
    """Adam step plus the embedding invariant: the padding row never moves."""
    emb = params.get("embedding.weights")
    if emb is not None and emb.grad is not None and "embedding.weights" in names:
        emb.grad[0] = 0.0
    adam_step(state, params, names)


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_MAGIC = b"NEGMTL01"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Frozen 32-bit snapshot of a model plus everything needed to use it."""

    config: dict
    vocabulary: dict
    arrays: dict[str, np.ndarray]  # float32, manifest order
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_model(cls, params: ModelParams, vocab: Vocabulary, config: TrainConfig) -> "Checkpoint":
        arrays = {name: arr.astype(np.float32) for name, arr in params.to_arrays().items()}
        return cls(config.to_dict(), vocab.to_json_obj(), arrays)

    def to_model(self) -> tuple[ModelParams, Vocabulary]:
        params = ModelParams.from_arrays(
            {name: arr.astype(np.float64) for name, arr in self.arrays.items()}
        )
        return params, Vocabulary.from_json_obj(self.vocabulary)


def save_checkpoint(ckpt: Checkpoint, path):
    """Binary layout: 8-byte magic, little-endian uint64 header length,
    UTF-8 JSON header {version, config, vocabulary, manifest}, then raw
    little-endian float32 blobs at the manifest byte offsets."""
    manifest = []
    offset = 0
    for name, arr in ckpt.arrays.items():
        if arr.dtype != np.float32:
            raise CheckpointError(f"array {name!r} must be float32, got {arr.dtype}")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = {
        "version": ckpt.version,
        "config": ckpt.config,
        "vocabulary": ckpt.vocabulary,
        "manifest": manifest,
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in ckpt.arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated before header length")
    (header_len,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) < pos + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    pos += header_len
    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})"
        )

    body = raw[pos:]
    arrays: dict[str, np.ndarray] = {}
    end = 0
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        lo = entry["offset"]
        hi = lo + n_bytes
        if hi > len(body):
            raise CheckpointError(f"{path}: truncated blob for parameter {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(body, dtype="<f4", count=n_bytes // 4, offset=lo)
            .reshape(shape)
            .astype(np.float32)
        )
        end = max(end, hi)
    if end != len(body):
        raise CheckpointError(f"{path}: {len(body) - end} trailing bytes after parameter blobs")
    return Checkpoint(header["config"], header["vocabulary"], arrays, version)


# ---------------------------------------------------------------------------
# Shared training plumbing


def _require_labeled(docs: Sequence[Document], split: str):
    if not docs:
        raise TrainingError(f"{split} corpus is empty")
    for doc in docs:
        if doc.label is None:
            raise TrainingError(f"{split} document {doc.id!r} has no sentiment label")


def _encode_docs(vocab: Vocabulary, docs: Sequence[Document]) -> list[list[list[int]]]:
    return [[vocab.encode(s.tokens) for s in doc.sentences] for doc in docs]


def predict_corpus(
    params: ModelParams, vocab: Vocabulary, docs: Sequence[Document]
) -> list[PredictionRecord]:
    """Eval-mode sentiment predictions for every document."""
    records = []
    for doc in docs:
        ids = [vocab.encode(s.tokens) for s in doc.sentences]
        pred = predict_document(params, ids)
        records.append(PredictionRecord(doc.id, doc.label, pred.label))
    return records


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]  # one record per epoch: epoch, task losses, dev accuracy
    best_epoch: int
    best_dev_accuracy: float
    epochs_run: int


class _BestTracker:
    """Keeps the checkpoint of the best dev epoch; earliest epoch wins ties."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_accuracy = -1.0
        self.best_epoch = 0
        self.checkpoint: Checkpoint | None = None
        self._since_best = 0

    def update(self, epoch, dev_accuracy, params, vocab, config) -> bool:
        """Record this epoch; returns True when patience is exhausted."""
        if dev_accuracy > self.best_accuracy:
            self.best_accuracy = dev_accuracy
            self.best_epoch = epoch
            self.checkpoint = Checkpoint.from_model(params, vocab, config)
            self._since_best = 0
        else:
            self._since_best += 1
        return self._since_best >= self.patience


def train_stl(config: TrainConfig, train_docs: Sequence[Document], dev_docs: Sequence[Document]) -> TrainResult:
    """Single-task sentiment training: one Adam step per document per
    epoch, best-dev-accuracy checkpoint kept, early stop on patience."""
    if config.mode != "stl":
        raise TrainingError(f"train_stl requires mode=stl, got {config.mode!r}")
    _require_labeled(train_docs, "train")
    _require_labeled(dev_docs, "dev")

    vocab = build_vocab(train_docs, config.min_count, config.lowercase)
    init_rng, shuffle_rng, dropout_rng = rng_streams(config.seed)
    params = ModelParams.init(
        len(vocab), config.embedding_dim, config.hidden_dim, init_rng, with_negation_head=False
    )
    named = params.named_parameters()
    groups = params.parameter_groups()
    step_names = groups["shared"] + groups["sentiment"]
    adam = AdamState.for_config(config)

    train_ids = _encode_docs(vocab, train_docs)
    gold = [LABEL_TO_CLASS[doc.label] for doc in train_docs]

    tracker = _BestTracker(config.patience)
    history: list[dict] = []
    epochs_run = 0
    for epoch in range(1, config.epochs + 1):
        epochs_run = epoch
        order = shuffle_rng.permutation(len(train_docs))
        total = 0.0
        for i in order:
            zero_grads(named.values())
            with Tape():
                loss = sentiment_loss(
                    params, train_ids[i], gold[i],
                    train=True, dropout_p=config.dropout_p, rng=dropout_rng,
                )
                backward(loss)
            total += loss.item()
            apply_updates(adam, named, step_names)
        dev_acc = accuracy_of(predict_corpus(params, vocab, dev_docs))
        history.append(
            {"epoch": epoch, "sentiment_loss": total / len(train_docs), "dev_accuracy": dev_acc}
        )
        if tracker.update(epoch, dev_acc, params, vocab, config):
            break

    assert tracker.checkpoint is not None
    return TrainResult(tracker.checkpoint, history, tracker.best_epoch, tracker.best_accuracy, epochs_run)


def train_mtl(config: TrainConfig, train_docs: Sequence[Document], dev_docs: Sequence[Document]) -> TrainResult:
    """Multi-task training: per outer epoch, one full pass over all
    sentences on the CRF negation loss, then one full pass over all
    documents on the sentiment loss.  Both passes update the shared
    parameters; selection is best dev sentiment accuracy.

    With ``mtl_schedule="warmup_once"`` the negation pass runs in the
    first epoch only.
    """
    if config.mode != "mtl":
        raise TrainingError(f"train_mtl requires mode=mtl, got {config.mode!r}")
    _require_labeled(train_docs, "train")
    _require_labeled(dev_docs, "dev")
    for doc in train_docs:
        if not doc.has_negation_annotations:
            raise TrainingError(
                f"mtl training needs negation annotations; document {doc.id!r} has none"
            )

    vocab = build_vocab(train_docs, config.min_count, config.lowercase)
    init_rng, shuffle_rng, dropout_rng = rng_streams(config.seed)
    params = ModelParams.init(
        len(vocab), config.embedding_dim, config.hidden_dim, init_rng, with_negation_head=True
    )
    named = params.named_parameters()
    groups = params.parameter_groups()
    neg_names = groups["shared"] + groups["negation"]
    sent_names = groups["shared"] + groups["sentiment"]
    adam = AdamState.for_config(config)

    train_ids = _encode_docs(vocab, train_docs)
    gold = [LABEL_TO_CLASS[doc.label] for doc in train_docs]
    # negation examples: every sentence, annotated or trivially all-O
    sentences = [
        (train_ids[d][s], [int(t) for t in to_bio(sent)])
        for d, doc in enumerate(train_docs)
        for s, sent in enumerate(doc.sentences)
    ]

    tracker = _BestTracker(config.patience)
    history: list[dict] = []
    epochs_run = 0
    for epoch in range(1, config.epochs + 1):
        epochs_run = epoch
        neg_mean = None
        if config.mtl_schedule == "alternating" or epoch == 1:
            neg_total = 0.0
            for i in shuffle_rng.permutation(len(sentences)):
                ids, tags = sentences[i]
                zero_grads(named.values())
                with Tape():
                    loss = negation_loss(
                        params, ids, tags,
                        train=True, dropout_p=config.dropout_p, rng=dropout_rng,
                    )
                    backward(loss)
                neg_total += loss.item()
                apply_updates(adam, named, neg_names)
            neg_mean = neg_total / len(sentences)

        sent_total = 0.0
        for i in shuffle_rng.permutation(len(train_docs)):
            zero_grads(named.values())
            with Tape():
                loss = sentiment_loss(
                    params, train_ids[i], gold[i],
                    train=True, dropout_p=config.dropout_p, rng=dropout_rng,
                )
                backward(loss)
            sent_total += loss.item()
            apply_updates(adam, named, sent_names)

        dev_acc = accuracy_of(predict_corpus(params, vocab, dev_docs))
        history.append(
            {
                "epoch": epoch,
                "negation_loss": neg_mean,
                "sentiment_loss": sent_total / len(train_docs),
                "dev_accuracy": dev_acc,
            }
        )
        if tracker.update(epoch, dev_acc, params, vocab, config):
            break

    assert tracker.checkpoint is not None
    return TrainResult(tracker.checkpoint, history, tracker.best_epoch, tracker.best_accuracy, epochs_run)


def accuracy_of(records: Sequence[PredictionRecord]) -> float:
    return accuracy([r.gold for r in records], [r.pred for r in records])


# ---------------------------------------------------------------------------
# Seeded ensemble


@dataclass
class SeedRun:
    seed: int
    result: TrainResult
    dev_predictions: list[PredictionRecord]
    test_predictions: list[PredictionRecord] | None


@dataclass
class EnsembleResult:
    runs: list[SeedRun]
    dev_vote: list[PredictionRecord]
    test_vote: list[PredictionRecord] | None

    @property
    def dev_accuracies(self) -> list[float]:
        return [accuracy_of(r.dev_predictions) for r in self.runs]


def majority_vote(per_run: Sequence[Sequence[PredictionRecord]]) -> list[PredictionRecord]:
    """Per-document majority over an odd number of prediction lists.

    Votes are counted per document id, so the result is invariant under
    permutation of the runs.
    """
    if len(per_run) % 2 == 0:
        raise TrainingError(f"majority vote needs an odd number of runs, got {len(per_run)}")
    ids = [r.id for r in per_run[0]]
    for run in per_run[1:]:
        if [r.id for r in run] != ids:
            raise TrainingError("prediction lists cover different documents")
    voted = []
    for i, first in enumerate(per_run[0]):
        positive = sum(1 for run in per_run if run[i].pred == "positive")
        label = "positive" if 2 * positive > len(per_run) else "negative"
        voted.append(PredictionRecord(first.id, first.gold, label))
    return voted


def run_ensemble(
    config: TrainConfig,
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    test_docs: Sequence[Document] | None = None,
) -> EnsembleResult:
    """Train one model per seed and majority-vote their predictions.

    Per-seed predictions come from the reloadable 32-bit checkpoint, so
    written prediction files always match what the checkpoint reproduces.
    """
    if len(config.seeds) % 2 == 0:
        raise TrainingError(f"ensemble needs an odd seed count, got {len(config.seeds)}")
    train_fn = {"stl": train_stl, "mtl": train_mtl}.get(config.mode)
    if train_fn is None:
        raise TrainingError(f"ensemble supports stl and mtl modes, got {config.mode!r}")

    runs = []
    for seed in config.seeds:
        result = train_fn(dataclasses.replace(config, seed=seed), train_docs, dev_docs)
        model, vocab = result.checkpoint.to_model()
        runs.append(
            SeedRun(
                seed,
                result,
                predict_corpus(model, vocab, dev_docs),
                predict_corpus(model, vocab, test_docs) if test_docs is not None else None,
            )
        )

    dev_vote = majority_vote([r.dev_predictions for r in runs])
    test_vote = None
    if test_docs is not None:
        test_vote = majority_vote([r.test_predictions for r in runs])
    return EnsembleResult(runs, dev_vote, test_vote)


# ---------------------------------------------------------------------------
# Bag-of-words logistic regression baseline


@dataclass
class BowModel:
    vocab: Vocabulary
    weights: np.ndarray  # (V,)
    bias: float
    c: float

    def decision(self, doc: Document) -> float:
        return float(self.weights @ bow_features(self.vocab, doc) + self.bias)

    def predict(self, doc: Document) -> str:
        # sigmoid(z) >= 0.5 iff z >= 0; ties resolve to positive
        return "positive" if self.decision(doc) >= 0.0 else "negative"


@dataclass
class BowResult:
    model: BowModel
    chosen_c: float
    dev_accuracy: float
    dev_accuracy_by_c: dict[float, float]


def bow_features(vocab: Vocabulary, doc: Document) -> np.ndarray:
    """Token-count vector over the vocabulary; unknown tokens count into
    the unknown bucket."""
    x = np.zeros(len(vocab))
    for sent in doc.sentences:
        for token in sent.tokens:
            x[vocab.lookup(token)] += 1.0
    return x


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def bow_loss_and_grad(
    w: np.ndarray, b: float, xs: np.ndarray, ys: np.ndarray, c: float
) -> tuple[float, np.ndarray, float]:
    """Mean cross-entropy plus (1/C)·½‖w‖² (bias unregularized)."""
    z = xs @ w + b
    margins = np.where(ys == 1.0, z, -z)
    loss = float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 / c * (w @ w))
    delta = _sigmoid(z) - ys
    grad_w = xs.T @ delta / len(ys) + w / c
    grad_b = float(delta.mean())
    return loss, grad_w, grad_b


def fit_bow(
    xs: np.ndarray,
    ys: np.ndarray,
    c: float,
    init: tuple[np.ndarray, float] | None = None,
    max_iters: int = 10_000,
    grad_tol: float = 1e-6,
) -> tuple[np.ndarray, float, float, int]:
    """Full-batch gradient descent with backtracking (Armijo) step
    selection on the convex regularized objective.  Stops when the
    gradient 2-norm falls below ``grad_tol``.  Returns (w, b, loss, iters)."""
    w = np.zeros(xs.shape[1]) if init is None else init[0].astype(np.float64).copy()
    b = 0.0 if init is None else float(init[1])
    loss, grad_w, grad_b = bow_loss_and_grad(w, b, xs, ys, c)
    iters = 0
    step = 1.0
    for iters in range(1, max_iters + 1):
        g_sq = float(grad_w @ grad_w) + grad_b**2
        if np.sqrt(g_sq) < grad_tol:
            iters -= 1
            break
        step = min(step * 2.0, 1e4)  # try growing first; backtrack as needed
        while True:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            loss_new, gw_new, gb_new = bow_loss_and_grad(w_new, b_new, xs, ys, c)
            if loss_new <= loss - 1e-4 * step * g_sq or step < 1e-20:
                break
            step *= 0.5
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, gw_new, gb_new
    return w, b, loss, iters


def train_bow(config: TrainConfig, train_docs: Sequence[Document], dev_docs: Sequence[Document]) -> BowResult:
    """L2-regularized logistic regression on token counts; C picked by
    dev accuracy over the grid, ties to the smaller C."""
    if config.mode != "bow":
        raise TrainingError(f"train_bow requires mode=bow, got {config.mode!r}")
    _require_labeled(train_docs, "train")
    _require_labeled(dev_docs, "dev")
    vocab = build_vocab(train_docs, config.min_count, config.lowercase)
    if len(vocab) <= 2:
        raise TrainingError("bow training found an empty vocabulary")

    xs = np.stack([bow_features(vocab, doc) for doc in train_docs])
    ys = np.array([float(LABEL_TO_CLASS[doc.label]) for doc in train_docs])

    best: BowResult | None = None
    by_c: dict[float, float] = {}
    for c in sorted(config.bow_c_grid):
        w, b, _, _ = fit_bow(xs, ys, c)
        model = BowModel(vocab, w, b, c)
        dev_acc = accuracy_of(
            [PredictionRecord(d.id, d.label, model.predict(d)) for d in dev_docs]
        )
        by_c[c] = dev_acc
        if best is None or dev_acc > best.dev_accuracy:  # strict: earlier (smaller) C wins ties
            best = BowResult(model, c, dev_acc, by_c)
    assert best is not None
    return dataclasses.replace(best, dev_accuracy_by_c=by_c)

"""Small logistic feed-forward networks and human-score augmentation.

Every layer, output included, uses the logistic activation. Training
minimizes mean binary cross-entropy by mini-batch gradient descent; the loss
is evaluated from the output pre-activation so it stays finite for
saturated outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, TrainingError, ValidationError

SCORE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
MODEL_HEADER = "#adamine-mlp v1"


@dataclass(frozen=True)
class HumanScore:
    event_id: str
    analyst_id: str
    score: float

    def __post_init__(self):
        if self.score not in SCORE_LEVELS:
            raise ValidationError(f"score {self.score} for {self.event_id} not in {SCORE_LEVELS}")


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[k] has shape (layer_sizes[k + 1], layer_sizes[k])
    biases: list[np.ndarray]
    seed: int = 0
    feature_names: tuple[str, ...] = ()
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    final_loss: float = float("nan")
    loss_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise ValueError(f"layer sizes must run input -> ... -> 1, got {sizes}")
        self.layer_sizes = sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer transition")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k} parameter shapes do not match {sizes}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} has non-finite parameters")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def params_equal(self, other: "MlpModel") -> bool:
        return self.layer_sizes == other.layer_sizes and all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        if self.input_shift is not None:
            x = x - self.input_shift
        if self.input_scale is not None:
            x = x / self.input_scale
        return x

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        def row(v) -> str:
            return " ".join(format(float(x), ".17g") for x in np.ravel(v))

        lines = [MODEL_HEADER, "layers " + " ".join(map(str, self.layer_sizes)), f"seed {self.seed}"]
        lines.append("features\t" + "\t".join(self.feature_names))
        if self.input_shift is not None:
            lines.append("shift " + row(self.input_shift))
        if self.input_scale is not None:
            lines.append("scale " + row(self.input_scale))
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            lines.append(f"W {k}")
            lines.extend(row(r) for r in w)
            lines.append(f"b {k}")
            lines.append(row(b))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "MlpModel":
        lines = text.splitlines()
        if not lines or lines[0].strip() != MODEL_HEADER:
            raise FormatError("model: missing '#adamine-mlp v1' header")
        try:
            sizes = tuple(int(s) for s in lines[1].split()[1:])
            seed = int(lines[2].split()[1])
            names = tuple(n for n in lines[3].split("\t")[1:] if n)
            pos = 4
            shift = scale = None
            if lines[pos].startswith("shift "):
                shift = np.array([float(v) for v in lines[pos].split()[1:]])
                pos += 1
            if lines[pos].startswith("scale "):
                scale = np.array([float(v) for v in lines[pos].split()[1:]])
                pos += 1
            weights, biases = [], []
            for k in range(len(sizes) - 1):
                if lines[pos] != f"W {k}":
                    raise FormatError(f"model: expected 'W {k}' at line {pos + 1}")
                rows = [[float(v) for v in lines[pos + 1 + r].split()] for r in range(sizes[k + 1])]
                weights.append(np.array(rows).reshape(sizes[k + 1], sizes[k]))
                pos += 1 + sizes[k + 1]
                if lines[pos] != f"b {k}":
                    raise FormatError(f"model: expected 'b {k}' at line {pos + 1}")
                biases.append(np.array([float(v) for v in lines[pos + 1].split()]))
                pos += 2
        except (IndexError, ValueError) as exc:
            raise FormatError(f"model: malformed file ({exc})") from exc
        return cls(sizes, weights, biases, seed, names, shift, scale)

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_model(layer_sizes: Sequence[int], seed: int = 0, feature_names=()) -> MlpModel:
    """Glorot-uniform weights and zero biases from ``numpy.random.default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in layer_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, seed, tuple(feature_names))


def _forward(model: MlpModel, x: np.ndarray):
    acts = [x]
    zs = []
    a = x
    for w, b in zip(model.weights, model.biases):
        # row-wise reduction rather than BLAS so a row scores the same alone or in a batch
        z = (a[:, None, :] * w[None, :, :]).sum(axis=2) + b
        zs.append(z)
        a = sigmoid(z)
        acts.append(a)
    return zs, acts


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy on already-prepared inputs, with its parameter gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    zs, acts = _forward(model, x)
    z_out = zs[-1][:, 0]
    # softplus(z) - y z  ==  -[y log s(z) + (1 - y) log(1 - s(z))]
    loss = float(np.mean(np.logaddexp(0.0, z_out) - y * z_out))
    n = x.shape[0]
    delta = (acts[-1] - y[:, None]) / n
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for k in range(len(model.weights) - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k]) * acts[k] * (1.0 - acts[k])
    return loss, gw, gb


def mlp_train(
    features,
    labels,
    layer_sizes: Sequence[int] | None = None,
    learning_rate: float = 0.1,
    epochs: int = 1000,
    batch: int = 32,
    seed: int = 0,
    feature_names: Sequence[str] = (),
    standardize: bool = False,
) -> MlpModel:
    """Train a logistic MLP; the returned model carries ``final_loss`` and ``loss_history``."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.shape[0] < 1 or x.shape[0] != y.size:
        raise ValueError("features and labels must have the same, non-zero, number of rows")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain NaN or Inf")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if layer_sizes is None:
        layer_sizes = (x.shape[1], 8, 1)
    if layer_sizes[0] != x.shape[1]:
        raise ValueError(f"input layer {layer_sizes[0]} != feature width {x.shape[1]}")
    if epochs < 0 or batch < 1:
        raise ValueError("epochs must be >= 0 and batch >= 1")

    model = init_model(layer_sizes, seed, feature_names)
    if standardize:
        shift = x.mean(axis=0)
        scale = x.std(axis=0)
        model.input_shift = shift
        model.input_scale = np.where(scale > 0, scale, 1.0)
    xp = model._prepare(x)
    rng = np.random.default_rng([seed, 1])
    n = xp.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s : s + batch]
            loss, gw, gb = loss_and_grads(model, xp[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch}")
            for k in range(len(model.weights)):
                model.weights[k] -= learning_rate * gw[k]
                model.biases[k] -= learning_rate * gb[k]
        full, _, _ = loss_and_grads(model, xp, y)
        if not np.isfinite(full):
            raise TrainingError(f"loss became non-finite in epoch {epoch}")
        model.loss_history.append(full)
    model.final_loss = model.loss_history[-1] if model.loss_history else loss_and_grads(model, xp, y)[0]
    return model


def mlp_predict(model: MlpModel, features) -> float | np.ndarray:
    """Score in (0, 1) for a single feature vector, or one per row of a matrix."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.n_inputs:
        raise ValueError(f"expected {model.n_inputs} features, got {x.shape[1]}")
    _, acts = _forward(model, model._prepare(x))
    out = np.clip(acts[-1][:, 0], np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return float(out[0]) if single else out


def collapse_scores(scores: Iterable[HumanScore], aggregate: str = "first") -> dict[str, float]:
    """One score per event: the lexicographically first analyst, or the mean."""
    by_event: dict[str, dict[str, float]] = {}
    for s in scores:
        analysts = by_event.setdefault(s.event_id, {})
        if s.analyst_id in analysts:
            raise ValidationError(f"duplicate score for ({s.event_id}, {s.analyst_id})")
        analysts[s.analyst_id] = s.score
    if aggregate == "first":
        return {e: a[min(a)] for e, a in by_event.items()}
    if aggregate == "mean":
        return {e: float(np.mean(list(a.values()))) for e, a in by_event.items()}
    raise ValueError(f"unknown aggregate policy {aggregate!r}")


def hk_augment(
    features,
    event_ids: Sequence[str],
    scores: Iterable[HumanScore] | Mapping[str, float],
    aggregate: str = "first",
    missing_value: float = 0.5,
) -> np.ndarray:
    """Append (human score, missing indicator) columns to a feature matrix."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] != len(event_ids):
        raise ValueError("event_ids must align with feature rows")
    table = dict(scores) if isinstance(scores, Mapping) else collapse_scores(scores, aggregate)
    known = set(event_ids)
    unknown = sorted(e for e in table if e not in known)
    if unknown:
        raise ValidationError("scores reference unknown event ids: " + ", ".join(unknown))
    human = np.array([table.get(e, missing_value) for e in event_ids], dtype=np.float64)
    missing = np.array([0.0 if e in table else 1.0 for e in event_ids])
    return np.column_stack([x, human, missing])


def read_scores(path) -> list[HumanScore]:
    """Tab-separated ``event_id  analyst_id  score`` with a header line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    if not body or body[0].split("\t") != ["event_id", "analyst_id", "score"]:
        raise FormatError(f"{path}: expected header 'event_id\\tanalyst_id\\tscore'")
    out = []
    for n, line in enumerate(body[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValidationError(f"{path} row {n}: expected 3 fields")
        try:
            value = float(parts[2])
        except ValueError as exc:
            raise ValidationError(f"{path} row {n}: bad score {parts[2]!r}") from exc
        out.append(HumanScore(parts[0], parts[1], value))
    return out


def write_scores(path, scores: Iterable[HumanScore]) -> None:
    rows = ["event_id\tanalyst_id\tscore"]
    rows += [f"{s.event_id}\t{s.analyst_id}\t{s.score:g}" for s in scores]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

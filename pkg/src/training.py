"""
Обучение модели: Adam, пакеты с фиксированным seed, ранняя остановка по точности на валидации.
"""

import logging
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src import autodiff as ad
from src.dataset import Example, exact_match_accuracy
from src.errors import DatasetError, TrainingDivergedError
from src.model import (
    ModelParams,
    Prediction,
    PreparedExample,
    TrainConfig,
    Vocab,
    build_vocab,
    loss,
    parameter_count,
    predict,
    prepare_example,
)

logger = logging.getLogger(__name__)


class Adam:
    """Adam с поправкой смещения моментов (β1=0.9, β2=0.999, ε=1e-8)."""

    def __init__(
        self, params: ModelParams, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> None:
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, tensor in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1**self.t)
            v_hat = self.v[name] / (1.0 - self.beta2**self.t)
            tensor.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class MetricsLine:
    step: int
    loss: float
    val_acc: float

    def __str__(self) -> str:
        return f"step={self.step} loss={self.loss:.6f} val_acc={self.val_acc:.6f}"


@dataclass
class TrainResult:
    """
    Итог обучения: лучшие по валидации параметры и журнал метрик.

    Атрибуты:
        params: параметры с лучшей точностью на валидации.
        best_val_acc: эта точность.
        best_step: шаг, на котором она достигнута (-1, если оценок не было).
        steps: сколько шагов выполнено.
        stopped_early: обучение прервано ранней остановкой.
        metrics: строка журнала на каждый шаг.
    """

    params: ModelParams
    best_val_acc: float = 0.0
    best_step: int = -1
    steps: int = 0
    stopped_early: bool = False
    metrics: List[MetricsLine] = field(default_factory=list)


def prepare_examples(examples: Sequence[Example]) -> List[PreparedExample]:
    return [prepare_example(example) for example in examples]


def evaluate(
    prepared: Sequence[PreparedExample], params: ModelParams, config: TrainConfig
) -> Tuple[float, List[Prediction]]:
    """Жадно предсказать каждый пример и посчитать точное совпадение с эталоном."""
    predictions = [predict(p, params, config) for p in prepared]
    accuracy = exact_match_accuracy([pred.script_indices for pred in predictions], [p.gold for p in prepared])
    return accuracy, predictions


def _gradients(params: ModelParams) -> Dict[str, np.ndarray]:
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()}


def _diagnostics(params: ModelParams, grads: Dict[str, np.ndarray]) -> Dict[str, object]:
    return {
        "grad_norm": ad.global_norm(grads.values()),
        "param_norms": {name: float(np.linalg.norm(t.data)) for name, t in params.items()},
    }


class _Batches:
    """Бесконечный поток пакетов: перестановка на каждую эпоху из общего генератора."""

    def __init__(self, size: int, batch_size: int, rng: np.random.Generator) -> None:
        self.size = size
        self.batch_size = min(batch_size, size)
        self.rng = rng
        self.order: List[int] = []

    def next(self) -> List[int]:
        batch: List[int] = []
        while len(batch) < self.batch_size:
            if not self.order:
                self.order = [int(i) for i in self.rng.permutation(self.size)]
            batch.append(self.order.pop(0))
        return batch


def train(
    train_set: Sequence[Example],
    val_set: Sequence[Example],
    config: TrainConfig,
    vocab: Optional[Vocab] = None,
    *,
    metrics_sink: Optional[Callable[[str], None]] = None,
    progress: bool = False,
) -> TrainResult:
    """
    Обучить модель с нуля.

    Каждые eval_every шагов (и на последнем) считается точность на валидации; лучшие
    параметры запоминаются, после patience оценок без улучшения обучение останавливается.
    В журнал на каждом шаге пишется последняя известная точность.

    :param vocab: словарь; по умолчанию строится по train_set
    :param metrics_sink: получает строки `step=<n> loss=<f> val_acc=<f>`
    :raises DatasetError: пустой train или validation
    :raises TrainingDivergedError: потери или градиенты перестали быть конечными
    """
    if not train_set or not val_set:
        raise DatasetError("для обучения нужны непустые train и validation")
    vocab = vocab or build_vocab(train_set, config.min_subtoken_freq)
    params = ModelParams.initialize(vocab, config.embedding_dim, config.hidden_dim, config.seed)
    logger.info("параметров модели: %d", parameter_count(params))
    train_prepared = prepare_examples(train_set)
    val_prepared = prepare_examples(val_set)

    rng = np.random.default_rng(config.seed)
    batches = _Batches(len(train_prepared), config.batch_size, rng)
    optimizer = Adam(params, config.learning_rate)
    result = TrainResult(params=params)
    best: Optional[ModelParams] = None
    val_acc = 0.0
    stale = 0

    for step in tqdm(range(config.max_steps), desc="train", file=sys.stderr, disable=not progress):
        batch = batches.next()
        params.zero_grad()
        total = ad.sum_(ad.stack([loss(train_prepared[i], params, config, rng=rng) for i in batch]))
        batch_loss = total * (1.0 / len(batch))
        batch_loss.backward()
        value = float(batch_loss.data)
        grads = _gradients(params)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDivergedError(step, value, _diagnostics(params, grads))
        optimizer.step(grads)
        result.steps = step + 1

        if (step + 1) % config.eval_every == 0 or step + 1 == config.max_steps:
            val_acc, _ = evaluate(val_prepared, params, config)
            if best is None or val_acc > result.best_val_acc:
                best = params.copy()
                result.best_val_acc = val_acc
                result.best_step = step
                stale = 0
            else:
                stale += 1
            logger.info("шаг %d: loss=%.6f val_acc=%.6f", step, value, val_acc)

        line = MetricsLine(step, value, val_acc)
        result.metrics.append(line)
        if metrics_sink is not None:
            metrics_sink(str(line))
        if stale >= config.patience:
            result.stopped_early = True
            logger.info("ранняя остановка на шаге %d, лучший шаг %d", step, result.best_step)
            break

    result.params = best if best is not None else params
    return result

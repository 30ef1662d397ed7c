"""
Нейросетевая модель: кодировщик путей, проекции операций, кодировщик контекста
и декодер с вниманием и указателем на кандидатов.
"""

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src import autodiff as ad
from src.ast_core import Ast, split_subtokens
from src.autodiff import Tensor
from src.dataset import Example
from src.edit_paths import (
    DEL_NODE,
    INS_NODE,
    PLACEHOLDER,
    UPD_NODE,
    AugmentedAst,
    CandidateSet,
    EncodingMode,
    NodeFeature,
    OperationKind,
    PathOperation,
    augment,
    enumerate_candidates,
    script_to_path_ops,
)
from src.errors import CoverageError, VocabError

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
MAX_CHILD_INDEX = 15

PathFeatures = Tuple[NodeFeature, ...]


@dataclass(frozen=True)
class Vocab:
    """
    Словари модели: типы узлов, индексы детей и подтокены.

    Поиск тотален: неизвестное отображается в UNK, индекс ребёнка ограничивается сверху.
    """

    node_kinds: Tuple[str, ...]
    subtokens: Tuple[str, ...]
    max_child_index: int = MAX_CHILD_INDEX
    _kind_index: Dict[str, int] = field(init=False, repr=False, compare=False)
    _subtoken_index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for table in (self.node_kinds, self.subtokens):
            if tuple(table[:2]) != (PAD, UNK):
                raise VocabError("словарь должен начинаться с <pad> и <unk>")
            if len(set(table)) != len(table):
                raise VocabError("в словаре повторяются элементы")
        object.__setattr__(self, "_kind_index", {k: i for i, k in enumerate(self.node_kinds)})
        object.__setattr__(self, "_subtoken_index", {s: i for i, s in enumerate(self.subtokens)})

    @property
    def child_index_count(self) -> int:
        return self.max_child_index + 1

    def kind_id(self, kind: str) -> int:
        return self._kind_index.get(kind, UNK_ID)

    def subtoken_id(self, subtoken: str) -> int:
        return self._subtoken_index.get(subtoken, UNK_ID)

    def child_id(self, child_index: int) -> int:
        return min(max(child_index, 0), self.max_child_index)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "node_kinds": list(self.node_kinds),
            "subtokens": list(self.subtokens),
            "max_child_index": self.max_child_index,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Vocab":
        return cls(tuple(data["node_kinds"]), tuple(data["subtokens"]), int(data["max_child_index"]))


def _trees(example: Example) -> Iterator[Ast]:
    yield example.p_before
    yield example.p_after
    yield example.c_before
    yield example.c_after


def build_vocab(
    examples: Iterable[Example], min_freq: int = 1, max_child_index: int = MAX_CHILD_INDEX
) -> Vocab:
    """
    Построить словарь по обучающим примерам детерминированно.

    :param min_freq: подтокены с меньшей частотой отбрасываются (становятся UNK)
    :raises VocabError: пустой набор примеров
    """
    kinds = set()
    counts: Counter = Counter()
    seen = 0
    for example in examples:
        seen += 1
        for tree in _trees(example):
            for node_id in tree.preorder():
                node = tree[node_id]
                kinds.add(node.kind)
                if node.value:
                    counts.update(split_subtokens(node.value))
    if not seen:
        raise VocabError("нельзя построить словарь по пустому набору примеров")
    specials = (PAD, UNK, PLACEHOLDER, DEL_NODE, UPD_NODE, INS_NODE)
    node_kinds = specials + tuple(sorted(kinds - set(specials)))
    subtokens = (PAD, UNK) + tuple(sorted(s for s, n in counts.items() if n >= min_freq and s not in (PAD, UNK)))
    logger.info("словарь: %d типов, %d подтокенов", len(node_kinds), len(subtokens))
    return Vocab(node_kinds, subtokens, max_child_index)


@dataclass
class TrainConfig:
    """Гиперпараметры обучения и размеры модели."""

    learning_rate: float = 0.001
    dropout: float = 0.25
    batch_size: int = 32
    max_steps: int = 5000
    seed: int = 0
    teacher_forcing: bool = True
    use_context: bool = True
    embedding_dim: int = 64
    hidden_dim: int = 128
    max_decode_length: int = 16
    eval_every: int = 100
    patience: int = 5
    min_subtoken_freq: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout должен лежать в [0, 1), получено {self.dropout}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate не может быть отрицательным: {self.learning_rate}")
        if self.batch_size < 1 or self.max_steps < 0 or self.max_decode_length < 1:
            raise ValueError("batch_size и max_decode_length должны быть положительными")
        if self.embedding_dim < 1 or self.hidden_dim < 1:
            raise ValueError("размерности должны быть положительными")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


PARAM_NAMES: Tuple[str, ...] = (
    "E_nodes",
    "E_index",
    "E_subtokens",
    "path_lstm_W",
    "path_lstm_b",
    "context_lstm_W",
    "context_lstm_b",
    "decoder_lstm_W",
    "decoder_lstm_b",
    "W_path",
    "W_MOV",
    "W_UPD",
    "W_INS",
    "W_a",
    "W_p",
    "eos_class",
    "start",
)


def param_shapes(vocab: Vocab, d: int, h: int) -> Dict[str, Tuple[int, ...]]:
    return {
        "E_nodes": (len(vocab.node_kinds), d),
        "E_index": (vocab.child_index_count, d),
        "E_subtokens": (len(vocab.subtokens), d),
        "path_lstm_W": (4 * h, d + h),
        "path_lstm_b": (4 * h,),
        "context_lstm_W": (4 * h, 2 * h),
        "context_lstm_b": (4 * h,),
        "decoder_lstm_W": (4 * h, 2 * h),
        "decoder_lstm_b": (4 * h,),
        "W_path": (h, h + 2 * d),
        "W_MOV": (h, h),
        "W_UPD": (h, h),
        "W_INS": (h, h),
        "W_a": (h, h),
        "W_p": (h, h),
        "eos_class": (h,),
        "start": (h,),
    }


class ModelParams:
    """Именованные обучаемые тензоры модели вместе со словарём и размерностями."""

    def __init__(self, vocab: Vocab, embedding_dim: int, hidden_dim: int, tensors: Mapping[str, Tensor]) -> None:
        expected = param_shapes(vocab, embedding_dim, hidden_dim)
        missing = set(expected) - set(tensors)
        if missing:
            raise ValueError(f"нет параметров: {sorted(missing)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"параметр {name}: форма {tensors[name].shape}, ожидалась {shape}")
        self.vocab = vocab
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.tensors: Dict[str, Tensor] = {name: tensors[name] for name in PARAM_NAMES}

    @classmethod
    def initialize(cls, vocab: Vocab, embedding_dim: int = 64, hidden_dim: int = 128, seed: int = 0) -> "ModelParams":
        """
        Эмбеддинги ~ U(−0.05, 0.05), матрицы ~ U(−1/√fan_in, 1/√fan_in), смещения нулевые.
        """
        rng = np.random.default_rng(seed)
        tensors: Dict[str, Tensor] = {}
        for name, shape in param_shapes(vocab, embedding_dim, hidden_dim).items():
            if name.startswith("E_"):
                data = rng.uniform(-0.05, 0.05, size=shape)
            elif name.endswith("_b"):
                data = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(shape[-1])
                data = rng.uniform(-bound, bound, size=shape)
            tensors[name] = ad.parameter(data)
        return cls(vocab, embedding_dim, hidden_dim, tensors)

    @classmethod
    def from_arrays(
        cls, vocab: Vocab, embedding_dim: int, hidden_dim: int, arrays: Mapping[str, np.ndarray]
    ) -> "ModelParams":
        return cls(vocab, embedding_dim, hidden_dim, {name: ad.parameter(arrays[name]) for name in PARAM_NAMES})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self.tensors.items())

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.vocab, self.embedding_dim, self.hidden_dim, self.arrays())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(t.data))) for t in self.tensors.values())


def parameter_count(params: ModelParams) -> int:
    return int(sum(t.data.size for t in params.tensors.values()))


@dataclass(frozen=True)
class PreparedExample:
    """
    Пример, готовый для модели: кандидаты P_before, пути контекста и индексы эталона.

    gold содержит индексы кандидатов без EOS; индекс EOS равен len(candidates).
    """

    aug: AugmentedAst
    candidates: CandidateSet
    context_paths: Tuple[PathFeatures, ...]
    gold: Tuple[int, ...]

    @property
    def eos_index(self) -> int:
        return len(self.candidates)


def prepare_example(example: Example) -> PreparedExample:
    """
    :raises UnrepresentableError: эталонный скрипт не выражается путями
    :raises CoverageError: эталонной операции нет среди кандидатов
    """
    aug = augment(example.p_before, example.context_script, example.c_before)
    candidates = enumerate_candidates(aug)
    gold_ops = script_to_path_ops(aug, example.gold_script, EncodingMode.TARGET)
    gold: List[int] = []
    for op in gold_ops:
        index = candidates.find(*op.key)
        if index is None:
            raise CoverageError(f"операции {op.key} нет среди кандидатов")
        gold.append(index)
    context_paths: Tuple[PathFeatures, ...] = ()
    if len(example.context_script):
        context_aug = augment(example.c_before, example.context_script)
        context_ops = script_to_path_ops(context_aug, example.context_script, EncodingMode.CONTEXT)
        context_paths = tuple(op.features for op in context_ops)
    return PreparedExample(aug, candidates, context_paths, tuple(gold))


def _lstm_step(W: Tensor, b: Tensor, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
    """Шаг LSTM: gates = [x; h]·Wᵀ + b, порядок ворот [i, f, g, o]."""
    size = h.shape[1]
    gates = ad.concat([x, h], axis=1) @ W.T + b
    i = ad.sigmoid(gates[:, :size])
    f = ad.sigmoid(gates[:, size: 2 * size])
    g = ad.tanh(gates[:, 2 * size: 3 * size])
    o = ad.sigmoid(gates[:, 3 * size:])
    c_new = f * c + i * g
    return o * ad.tanh(c_new), c_new


def encode_node(kind: str, child_index: int, params: ModelParams) -> Tensor:
    """E_index[i] + E_nodes[kind]; индекс ограничивается max_child_index."""
    vocab = params.vocab
    return ad.take(params["E_index"], vocab.child_id(child_index)) + ad.take(params["E_nodes"], vocab.kind_id(kind))


def encode_value(value: str, params: ModelParams) -> Tensor:
    """Сумма эмбеддингов подтокенов значения (UNK для неизвестных)."""
    if not value:
        raise ValueError("значение терминала не может быть пустым")
    ids = [params.vocab.subtoken_id(s) for s in split_subtokens(value)]
    return ad.sum_(ad.take(params["E_subtokens"], ids), axis=0)


def _endpoint_vectors(features: Sequence[NodeFeature], params: ModelParams) -> Tensor:
    vocab = params.vocab
    kinds = [vocab.kind_id(f.kind) for f in features]
    indices = [vocab.child_id(f.child_index) for f in features]
    node_vecs = ad.take(params["E_nodes"], kinds) + ad.take(params["E_index"], indices)
    pieces = [split_subtokens(f.value) if f.value else [] for f in features]
    width = max(len(p) for p in pieces)
    if width == 0:
        return node_vecs
    ids = np.full((len(features), width), PAD_ID, dtype=np.int64)
    weights = np.zeros((len(features), width, 1))
    for row, subtokens in enumerate(pieces):
        for col, subtoken in enumerate(subtokens):
            ids[row, col] = vocab.subtoken_id(subtoken)
            weights[row, col, 0] = 1.0
    value_vecs = ad.sum_(ad.take(params["E_subtokens"], ids) * weights, axis=1)
    is_value = np.array([[1.0 if p else 0.0] for p in pieces])
    return node_vecs * (1.0 - is_value) + value_vecs * is_value


def encode_paths(paths: Sequence[PathFeatures], params: ModelParams) -> Tensor:
    """
    Закодировать пачку путей: LSTM по узлам пути (с маской для разной длины),
    затем z = tanh(W_path · [h_l; e_1; e_k]).

    :return: матрица N×h
    """
    if not paths or any(len(p) == 0 for p in paths):
        raise ValueError("путь не может быть пустым")
    vocab = params.vocab
    count, length = len(paths), max(len(p) for p in paths)
    kind_ids = np.full((count, length), PAD_ID, dtype=np.int64)
    index_ids = np.zeros((count, length), dtype=np.int64)
    mask = np.zeros((count, length))
    for row, path in enumerate(paths):
        for col, feature in enumerate(path):
            kind_ids[row, col] = vocab.kind_id(feature.kind)
            index_ids[row, col] = vocab.child_id(feature.child_index)
            mask[row, col] = 1.0
    inputs = ad.take(params["E_nodes"], kind_ids) + ad.take(params["E_index"], index_ids)
    hidden = params.hidden_dim
    h = Tensor(np.zeros((count, hidden)))
    c = Tensor(np.zeros((count, hidden)))
    for t in range(length):
        h_new, c_new = _lstm_step(params["path_lstm_W"], params["path_lstm_b"], inputs[:, t, :], h, c)
        step_mask = mask[:, t: t + 1]
        if step_mask.all():
            h, c = h_new, c_new
        else:
            h = h_new * step_mask + h * (1.0 - step_mask)
            c = c_new * step_mask + c * (1.0 - step_mask)
    first = _endpoint_vectors([p[0] for p in paths], params)
    last = _endpoint_vectors([p[-1] for p in paths], params)
    return ad.tanh(ad.concat([h, first, last], axis=1) @ params["W_path"].T)


def encode_path(path: PathFeatures, params: ModelParams) -> Tensor:
    """Вектор одного пути (длина h)."""
    return encode_paths([path], params)[0]


def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def encode_context(
    context_paths: Sequence[PathFeatures],
    params: ModelParams,
    *,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Optional[Tensor]:
    """
    Z_C: скрытые состояния LSTM контекста по путям правок контекста в порядке скрипта.

    :return: матрица M×h или None для пустого контекста
    """
    if not context_paths:
        return None
    encoded = _dropout(encode_paths(context_paths, params), dropout, rng)
    hidden = params.hidden_dim
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    states: List[Tensor] = []
    for t in range(encoded.shape[0]):
        h, c = _lstm_step(params["context_lstm_W"], params["context_lstm_b"], encoded[t: t + 1], h, c)
        states.append(h)
    return ad.concat(states, axis=0)


_PROJECTIONS = {OperationKind.MOV: "W_MOV", OperationKind.UPD: "W_UPD", OperationKind.INS: "W_INS"}


def encode_candidates(
    candidates: CandidateSet, params: ModelParams, path_encodings: Optional[Tensor] = None
) -> Tensor:
    """
    Z_Op: z·W_MOV / z·W_UPD / z·W_INS для каждого кандидата по порядку, последняя строка — EOS.

    :param path_encodings: готовые кодировки candidates.unique_paths
    :raises ValueError: пустой список кандидатов
    """
    if not len(candidates):
        raise ValueError("список кандидатов пуст")
    if path_encodings is None:
        path_encodings = encode_paths([op.features for op in candidates.unique_paths], params)
    parts: List[Tensor] = []
    order: List[int] = []
    for kind, name in _PROJECTIONS.items():
        rows = [i for i, op in enumerate(candidates) if op.kind is kind]
        if not rows:
            continue
        slots = [candidates.path_slots[i] for i in rows]
        parts.append(ad.take(path_encodings, slots) @ params[name])
        order.extend(rows)
    projected = ad.take(ad.concat(parts, axis=0), np.argsort(order))
    eos = ad.reshape(params["eos_class"], (1, params.hidden_dim))
    return ad.concat([projected, eos], axis=0)


def attend(z_context: Optional[Tensor], h_t: Tensor, params: ModelParams) -> Tuple[Optional[Tensor], Tensor]:
    """
    α = softmax(Z_C · W_a · h_tᵀ), c_t = Σ α_i z_i; без контекста c_t = h_t.

    :param h_t: состояние декодера 1×h
    :return: (α длины M или None, c_t 1×h)
    """
    if z_context is None or z_context.shape[0] == 0:
        return None, h_t
    scores = z_context @ (params["W_a"] @ h_t.T)
    alpha = ad.softmax(ad.reshape(scores, (z_context.shape[0],)))
    return alpha, ad.reshape(alpha, (1, z_context.shape[0])) @ z_context


def point(z_op: Tensor, c_t: Tensor, params: ModelParams) -> Tensor:
    """Лог-вероятности классов: log softmax(Z_Op · W_p · c_tᵀ)."""
    scores = z_op @ (params["W_p"] @ c_t.T)
    return ad.log_softmax(ad.reshape(scores, (z_op.shape[0],)))


@dataclass
class _Encoded:
    z_op: Tensor
    z_context: Optional[Tensor]
    h0: Tensor


def _encode(
    prepared: PreparedExample, params: ModelParams, config: TrainConfig, rng: Optional[np.random.Generator]
) -> _Encoded:
    z_paths = encode_paths([op.features for op in prepared.candidates.unique_paths], params)
    z_op = encode_candidates(prepared.candidates, params, z_paths)
    z_context = None
    if config.use_context:
        z_context = encode_context(prepared.context_paths, params, dropout=config.dropout, rng=rng)
    pooled = z_paths if z_context is None else ad.concat([z_paths, z_context], axis=0)
    return _Encoded(z_op, z_context, ad.mean(pooled, axis=0, keepdims=True))


def forward(
    prepared: PreparedExample,
    params: ModelParams,
    config: TrainConfig,
    *,
    rng: Optional[np.random.Generator] = None,
) -> List[Tensor]:
    """
    Прогон декодера по эталону: T+1 распределений (операции эталона, затем EOS).

    Начальное состояние — среднее строк Z_P и Z_C, первый вход — обучаемый вектор start.
    При teacher_forcing следующим входом служит вектор эталонного класса, иначе
    вектор предсказанного. Dropout включается, если передан rng.

    :return: лог-вероятности на каждом шаге
    """
    encoded = _encode(prepared, params, config, rng)
    hidden = params.hidden_dim
    h, c = encoded.h0, Tensor(np.zeros((1, hidden)))
    x = ad.reshape(params["start"], (1, hidden))
    targets = list(prepared.gold) + [prepared.eos_index]
    steps: List[Tensor] = []
    for t, target in enumerate(targets):
        x_in = _dropout(x, config.dropout, rng)
        h, c = _lstm_step(params["decoder_lstm_W"], params["decoder_lstm_b"], x_in, h, c)
        _, c_t = attend(encoded.z_context, h, params)
        log_probs = point(encoded.z_op, c_t, params)
        steps.append(log_probs)
        chosen = target if config.teacher_forcing else int(np.argmax(log_probs.data))
        x = encoded.z_op[chosen: chosen + 1]
    return steps


def loss(
    prepared: PreparedExample,
    params: ModelParams,
    config: TrainConfig,
    *,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Средний по шагам −log p эталонного класса."""
    steps = forward(prepared, params, config, rng=rng)
    targets = list(prepared.gold) + [prepared.eos_index]
    picked = ad.stack([step[target] for step, target in zip(steps, targets)])
    return -ad.mean(picked)


@dataclass(frozen=True)
class Prediction:
    """
    Результат жадного декодирования.

    indices заканчивается индексом EOS, если декодирование завершилось (finished);
    ops — соответствующие операции без EOS; distributions — вероятности на каждом шаге.
    """

    indices: Tuple[int, ...]
    ops: Tuple[PathOperation, ...]
    distributions: Tuple[np.ndarray, ...]
    attention: Tuple[np.ndarray, ...] = ()
    finished: bool = True

    @property
    def script_indices(self) -> Tuple[int, ...]:
        return self.indices[:-1] if self.finished else self.indices


def predict(
    prepared: PreparedExample,
    params: ModelParams,
    config: TrainConfig,
    *,
    return_attention: bool = False,
) -> Prediction:
    """
    Жадное декодирование: на каждом шаге argmax, вход следующего шага — вектор выбранного
    класса; остановка на EOS или после max_decode_length шагов.
    """
    encoded = _encode(prepared, params, config, None)
    hidden = params.hidden_dim
    h, c = encoded.h0, Tensor(np.zeros((1, hidden)))
    x = ad.reshape(params["start"], (1, hidden))
    indices: List[int] = []
    distributions: List[np.ndarray] = []
    attention: List[np.ndarray] = []
    finished = False
    for _ in range(config.max_decode_length):
        h, c = _lstm_step(params["decoder_lstm_W"], params["decoder_lstm_b"], x, h, c)
        alpha, c_t = attend(encoded.z_context, h, params)
        probs = np.exp(point(encoded.z_op, c_t, params).data)
        chosen = int(np.argmax(probs))
        indices.append(chosen)
        distributions.append(probs)
        if return_attention and alpha is not None:
            attention.append(alpha.data.copy())
        if chosen == prepared.eos_index:
            finished = True
            break
        x = encoded.z_op[chosen: chosen + 1]
    ops = tuple(prepared.candidates[i] for i in indices if i != prepared.eos_index)
    return Prediction(tuple(indices), ops, tuple(distributions), tuple(attention), finished)


def grad_check(
    params: ModelParams,
    prepared: PreparedExample,
    config: TrainConfig,
    epsilon: float = 1e-4,
    samples: int = 200,
    seed: int = 0,
) -> float:
    """
    Максимальная относительная ошибка аналитического градиента потерь против
    центральных разностей на случайной выборке координат (dropout отключён).
    """
    no_dropout = TrainConfig.from_dict({**config.to_dict(), "dropout": 0.0})
    return ad.check_gradients(
        lambda: loss(prepared, params, no_dropout),
        params.tensors,
        epsilon=epsilon,
        samples=samples,
        rng=np.random.default_rng(seed),
    )

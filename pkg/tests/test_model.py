from dataclasses import replace
from typing import List

import numpy as np
import pytest

from src.autodiff import Tensor
from src.dataset import Example, filter_example, ingest_pair
from src.edit_paths import NodeFeature, OperationKind
from src.errors import VocabError
from src.model import (
    PAD,
    UNK,
    UNK_ID,
    ModelParams,
    PreparedExample,
    TrainConfig,
    Vocab,
    attend,
    build_vocab,
    encode_candidates,
    encode_context,
    encode_node,
    encode_path,
    encode_paths,
    encode_value,
    forward,
    grad_check,
    loss,
    param_shapes,
    parameter_count,
    predict,
    prepare_example,
)
from src.synthetic import generate_pair


@pytest.fixture(scope="module")
def examples(swap_example: Example, rename_arg_example: Example) -> List[Example]:
    return [swap_example, rename_arg_example]


@pytest.fixture(scope="module")
def vocab(examples: List[Example]) -> Vocab:
    return build_vocab(examples)


@pytest.fixture
def params(vocab: Vocab) -> ModelParams:
    return ModelParams.initialize(vocab, embedding_dim=8, hidden_dim=8, seed=3)


@pytest.fixture(scope="module")
def prepared_swap(swap_example: Example) -> PreparedExample:
    return prepare_example(swap_example)


@pytest.fixture(scope="module")
def prepared_rename(rename_arg_example: Example) -> PreparedExample:
    return prepare_example(rename_arg_example)


def test_build_vocab(vocab: Vocab) -> None:
    """Тестируем словарь: служебные элементы в начале, неизвестное отображается в UNK."""
    assert vocab.node_kinds[:6] == (PAD, UNK, "Placeholder", "DEL", "UPD", "INS")
    assert "Call" in vocab.node_kinds and "ArgList" in vocab.node_kinds
    assert vocab.subtokens[:2] == (PAD, UNK)
    assert vocab.subtoken_id("t") != UNK_ID
    assert vocab.subtoken_id("neverSeen") == UNK_ID
    assert vocab.kind_id("While") == UNK_ID
    assert vocab.child_id(100) == vocab.max_child_index
    assert Vocab.from_dict(vocab.to_dict()) == vocab


def test_build_vocab_rejects_empty() -> None:
    """Тестируем пустой набор примеров."""
    with pytest.raises(VocabError):
        build_vocab([])
    with pytest.raises(VocabError):
        Vocab(("a", "b"), (PAD, UNK))


def test_min_freq_drops_rare_subtokens(examples: List[Example]) -> None:
    """Тестируем порог частоты подтокенов."""
    rare = build_vocab(examples, min_freq=100)
    assert rare.subtokens == (PAD, UNK)


def test_train_config_validation() -> None:
    """Тестируем проверку гиперпараметров и сериализацию конфигурации."""
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    config = TrainConfig(learning_rate=0.0, dropout=0.0)
    assert TrainConfig.from_dict({**config.to_dict(), "unknown": 1}) == config


def test_parameter_shapes(vocab: Vocab, params: ModelParams) -> None:
    """Тестируем формы и инициализацию параметров."""
    shapes = param_shapes(vocab, 8, 8)
    for name, tensor in params.items():
        assert tensor.shape == shapes[name]
    assert np.all(params["path_lstm_b"].data == 0.0)
    assert np.max(np.abs(params["E_nodes"].data)) <= 0.05
    assert parameter_count(params) == sum(int(np.prod(s)) for s in shapes.values())
    again = ModelParams.initialize(vocab, embedding_dim=8, hidden_dim=8, seed=3)
    np.testing.assert_array_equal(again["W_p"].data, params["W_p"].data)
    with pytest.raises(ValueError):
        ModelParams.from_arrays(vocab, 8, 4, params.arrays())


def test_encoders_shapes(params: ModelParams, prepared_swap: PreparedExample) -> None:
    """Тестируем размеры кодировок узлов, значений, путей, контекста и кандидатов."""
    assert encode_node("Call", 20, params).shape == (8,)
    assert encode_value("getFooBar", params).shape == (8,)
    with pytest.raises(ValueError):
        encode_value("", params)

    path = (NodeFeature("Name", 1, "x"), NodeFeature("Arg", 0), NodeFeature("ArgList", 1))
    assert encode_path(path, params).shape == (8,)
    batch = encode_paths([path, path[:2]], params)
    assert batch.shape == (2, 8)
    np.testing.assert_allclose(batch.data[0], encode_path(path, params).data)
    np.testing.assert_allclose(batch.data[1], encode_path(path[:2], params).data)

    z_c = encode_context(prepared_swap.context_paths, params)
    assert z_c is not None and z_c.shape == (len(prepared_swap.context_paths), 8)
    assert encode_context((), params) is None

    z_op = encode_candidates(prepared_swap.candidates, params)
    assert z_op.shape == (len(prepared_swap.candidates) + 1, 8)
    np.testing.assert_allclose(z_op.data[-1], params["eos_class"].data)


def test_attention_without_context(params: ModelParams) -> None:
    """Тестируем внимание: без контекста c_t = h_t, иначе веса — распределение."""
    h = params["start"].data.reshape(1, 8)
    alpha, c_t = attend(None, Tensor(h), params)
    assert alpha is None
    np.testing.assert_allclose(c_t.data, h)
    z = Tensor(np.random.default_rng(0).normal(size=(3, 8)))
    alpha, c_t = attend(z, Tensor(h), params)
    assert alpha is not None
    assert float(alpha.data.sum()) == pytest.approx(1.0)
    assert c_t.shape == (1, 8)


def test_prepare_example_gold(prepared_swap: PreparedExample, prepared_rename: PreparedExample) -> None:
    """Тестируем подготовку примеров: эталон — индексы кандидатов, EOS — за последним кандидатом."""
    assert len(prepared_swap.gold) == 1
    assert prepared_swap.candidates[prepared_swap.gold[0]].kind is OperationKind.MOV
    assert prepared_swap.eos_index == len(prepared_swap.candidates)
    assert len(prepared_swap.context_paths) == 1
    (index,) = prepared_rename.gold
    assert prepared_rename.candidates[index].kind is OperationKind.UPD


def test_forward_distributions(params: ModelParams, prepared_swap: PreparedExample) -> None:
    """Тестируем прямой проход: T+1 распределений по кандидатам и EOS."""
    config = TrainConfig(embedding_dim=8, hidden_dim=8, dropout=0.0)
    steps = forward(prepared_swap, params, config)
    assert len(steps) == len(prepared_swap.gold) + 1
    for step in steps:
        assert step.shape == (prepared_swap.eos_index + 1,)
        assert float(np.exp(step.data).sum()) == pytest.approx(1.0)
    value = float(loss(prepared_swap, params, config).data)
    assert value > 0.0 and np.isfinite(value)


def test_forward_without_context_or_teacher_forcing(params: ModelParams, prepared_swap: PreparedExample) -> None:
    """Тестируем варианты модели: без правок контекста и без teacher forcing."""
    config = TrainConfig(embedding_dim=8, hidden_dim=8, dropout=0.0, use_context=False, teacher_forcing=False)
    steps = forward(prepared_swap, params, config)
    assert len(steps) == 2
    assert np.isfinite(float(loss(prepared_swap, params, config).data))


def test_no_context_ignores_context_paths(
    params: ModelParams, prepared_swap: PreparedExample, prepared_rename: PreparedExample
) -> None:
    """Тестируем модель без контекста: выход побитно не зависит от переданных путей контекста."""
    config = TrainConfig(embedding_dim=8, hidden_dim=8, dropout=0.0, use_context=False)
    pool = [op.features for op in prepared_swap.candidates] + [op.features for op in prepared_rename.candidates]
    reference_steps = [step.data for step in forward(prepared_swap, params, config)]
    reference_loss = loss(prepared_swap, params, config).data
    reference_prediction = predict(prepared_swap, params, config)
    rng = np.random.default_rng(17)
    for _ in range(100):
        count = int(rng.integers(0, 6))
        chosen = tuple(pool[i] for i in rng.integers(0, len(pool), size=count))
        other = replace(prepared_swap, context_paths=chosen)
        steps = forward(other, params, config)
        assert all(np.array_equal(a.data, b) for a, b in zip(steps, reference_steps))
        assert np.array_equal(loss(other, params, config).data, reference_loss)
        prediction = predict(other, params, config)
        assert prediction.indices == reference_prediction.indices
        assert all(np.array_equal(a, b) for a, b in zip(prediction.distributions, reference_prediction.distributions))


def test_context_changes_output_when_enabled(
    params: ModelParams, prepared_swap: PreparedExample, prepared_rename: PreparedExample
) -> None:
    """Тестируем модель с контекстом: другие пути контекста меняют распределения."""
    config = TrainConfig(embedding_dim=8, hidden_dim=8, dropout=0.0)
    other = replace(prepared_swap, context_paths=prepared_rename.context_paths)
    first = forward(prepared_swap, params, config)[0].data
    second = forward(other, params, config)[0].data
    assert not np.array_equal(first, second)


def test_dropout_changes_only_training_pass(params: ModelParams, prepared_swap: PreparedExample) -> None:
    """Тестируем dropout: включается только при переданном генераторе."""
    config = TrainConfig(embedding_dim=8, hidden_dim=8, dropout=0.5)
    plain = float(loss(prepared_swap, params, config).data)
    assert plain == float(loss(prepared_swap, params, config).data)
    noisy = float(loss(prepared_swap, params, config, rng=np.random.default_rng(1)).data)
    assert noisy != plain


def test_predict_greedy(params: ModelParams, prepared_swap: PreparedExample) -> None:
    """Тестируем жадное декодирование: длина ограничена, операции соответствуют индексам."""
    config = TrainConfig(embedding_dim=8, hidden_dim=8, max_decode_length=3)
    prediction = predict(prepared_swap, params, config, return_attention=True)
    assert 1 <= len(prediction.indices) <= 3
    assert len(prediction.distributions) == len(prediction.indices)
    assert len(prediction.attention) == len(prediction.indices)
    if prediction.finished:
        assert prediction.indices[-1] == prepared_swap.eos_index
    assert [op.key for op in prediction.ops] == [
        prepared_swap.candidates[i].key for i in prediction.script_indices
    ]


def test_gradient_check(params: ModelParams, prepared_swap: PreparedExample) -> None:
    """Тестируем градиенты всей модели: относительная ошибка ниже 1e-4."""
    config = TrainConfig(embedding_dim=8, hidden_dim=8, dropout=0.25)
    assert grad_check(params, prepared_swap, config, epsilon=1e-4, samples=200, seed=2) < 1e-4


def test_distributions_are_normalized() -> None:
    """Тестируем на 100 сгенерированных примерах: внимание и распределения указателя суммируются в 1."""
    rng = np.random.default_rng(23)
    families = ["swap", "rename-arg", "insert-arg", "reorder"]
    examples: List[Example] = []
    while len(examples) < 100:
        example = ingest_pair(*generate_pair(rng, families[len(examples) % len(families)]))
        if filter_example(example).keep:
            examples.append(example)
    vocab = build_vocab(examples)
    config = TrainConfig(embedding_dim=8, hidden_dim=8, dropout=0.0, max_decode_length=4)
    for i, example in enumerate(examples):
        prepared = prepare_example(example)
        params = ModelParams.initialize(vocab, embedding_dim=8, hidden_dim=8, seed=i)
        for step in forward(prepared, params, config):
            assert abs(float(np.exp(step.data).sum()) - 1.0) < 1e-6
        prediction = predict(prepared, params, config, return_attention=True)
        assert len(prediction.attention) == len(prediction.indices)
        for distribution in prediction.distributions:
            assert abs(float(distribution.sum()) - 1.0) < 1e-6
        for alpha in prediction.attention:
            assert abs(float(alpha.sum()) - 1.0) < 1e-6

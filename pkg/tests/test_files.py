import json
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pytest

from src.base import FileWorker
from src.dataset import Example, SplitSpec
from src.errors import CheckpointError, DatasetError
from src.files import Checkpoint, CheckpointSaver, Dataset, DatasetSaver
from src.model import ModelParams, TrainConfig, build_vocab


def test_dataset_save_and_load(
    dataset_saver: DatasetSaver, swap_example: Example, rename_arg_example: Example
) -> None:
    """Тестируем запись датасета и чтение обратно вместе с разбиением."""
    split = SplitSpec({"alpha": "train", "beta": "test"})
    dataset_saver.save(Dataset([swap_example, rename_arg_example], split))
    loaded = dataset_saver.load()
    assert loaded.examples == [swap_example, rename_arg_example]
    assert loaded.split == split


def test_dataset_without_split(dataset_saver: DatasetSaver, swap_example: Example) -> None:
    """Тестируем датасет без разбиения."""
    dataset_saver.save(Dataset([swap_example]))
    assert dataset_saver.load().split is None


def test_dataset_creates_folder(tmp_path: Path, swap_example: Example) -> None:
    """Тестируем создание недостающей папки при записи."""
    saver = DatasetSaver(filename=str(tmp_path / "nested" / "dir" / "data.json"))
    saver.save(Dataset([swap_example]))
    assert (tmp_path / "nested" / "dir" / "data.json").is_file()


@pytest.mark.parametrize(
    "content",
    [
        "{not json",
        json.dumps([1, 2]),
        json.dumps({"format": "something-else", "version": 1}),
        json.dumps({"format": "edit-garden-dataset", "version": 99}),
    ],
)
def test_dataset_rejects_foreign_files(dataset_saver: DatasetSaver, tmp_path: Path, content: str) -> None:
    """Тестируем повреждённый JSON, чужой формат и неизвестную версию."""
    (tmp_path / "dataset_test.json").write_text(content, encoding="utf-8")
    with pytest.raises(DatasetError):
        dataset_saver.load()


def test_dataset_missing_file(dataset_saver: DatasetSaver) -> None:
    """Тестируем отсутствующий файл датасета."""
    with pytest.raises(FileNotFoundError):
        dataset_saver.load()


def test_checkpoint_round_trip(checkpoint_saver: CheckpointSaver, swap_example: Example) -> None:
    """Тестируем контрольную точку: параметры, словарь и конфигурация восстанавливаются."""
    vocab = build_vocab([swap_example])
    params = ModelParams.initialize(vocab, embedding_dim=4, hidden_dim=6, seed=8)
    config = TrainConfig(embedding_dim=4, hidden_dim=6, use_context=False, learning_rate=0.01)
    checkpoint_saver.save(Checkpoint(params, config))

    loaded = checkpoint_saver.load()
    assert loaded.config == config
    assert loaded.params.vocab == vocab
    assert (loaded.params.embedding_dim, loaded.params.hidden_dim) == (4, 6)
    for name, tensor in params.items():
        np.testing.assert_array_equal(loaded.params[name].data, tensor.data)


def test_checkpoint_errors(checkpoint_saver: CheckpointSaver, tmp_path: Path) -> None:
    """Тестируем отсутствующую и повреждённую контрольную точку."""
    with pytest.raises(CheckpointError):
        checkpoint_saver.load()
    (tmp_path / "checkpoint_test.npz").write_text("garbage", encoding="utf-8")
    with pytest.raises(CheckpointError):
        checkpoint_saver.load()


def test_savers_follow_file_worker_interface(
    dataset_saver: DatasetSaver, checkpoint_saver: CheckpointSaver, swap_example: Example
) -> None:
    """Тестируем оба хранилища через общий интерфейс FileWorker: save(payload) и load() того же типа."""
    params = ModelParams.initialize(build_vocab([swap_example]), embedding_dim=4, hidden_dim=4, seed=0)
    payloads: List[Tuple[FileWorker, object]] = [
        (dataset_saver, Dataset([swap_example])),
        (checkpoint_saver, Checkpoint(params, TrainConfig(embedding_dim=4, hidden_dim=4))),
    ]
    for worker, payload in payloads:
        assert isinstance(worker, FileWorker)
        worker.save(payload=payload)
        assert type(worker.load()) is type(payload)
    assert dataset_saver.load() == Dataset([swap_example])

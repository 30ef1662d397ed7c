import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from config import CHECKPOINT_PATH_STR, DATASET_PATH_STR
from src.base import FileWorker
from src.dataset import Example, SplitSpec
from src.errors import CheckpointError, DatasetError
from src.model import PARAM_NAMES, ModelParams, TrainConfig, Vocab

logger = logging.getLogger(__name__)

DATASET_FORMAT = "edit-garden-dataset"
CHECKPOINT_FORMAT = "edit-garden-checkpoint"
FORMAT_VERSION = 1
_META_KEY = "__meta__"


@dataclass
class Dataset:
    """Примеры и, если есть, разбиение по проектам."""

    examples: List[Example]
    split: Optional[SplitSpec] = None


class DatasetSaver(FileWorker[Dataset]):
    """
    Обработанный датасет в JSON-файле: по записи на пример (деревья в формате обмена,
    скрипты построчным текстом) и, если есть, разбиение по проектам.
    """

    def __init__(self, filename: str = DATASET_PATH_STR) -> None:
        """
        :param filename: путь к JSON-файлу датасета
        """
        self._filename = filename

    def _read_all(self) -> Dict[str, Any]:
        """Прочитать документ целиком и проверить формат."""
        try:
            with open(self._filename, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{self._filename}: повреждённый JSON ({e})") from e
        if not isinstance(data, dict) or data.get("format") != DATASET_FORMAT:
            raise DatasetError(f"{self._filename}: это не файл датасета")
        if data.get("version") != FORMAT_VERSION:
            raise DatasetError(f"{self._filename}: неподдерживаемая версия {data.get('version')!r}")
        return data

    def _write_all(self, data: Dict[str, Any]) -> None:
        # гарантируем наличие папки
        os.makedirs(os.path.dirname(self._filename) or ".", exist_ok=True)
        with open(self._filename, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=4)

    def save(self, payload: Dataset) -> None:
        records = [example.to_record() for example in payload.examples]
        self._write_all(
            {
                "format": DATASET_FORMAT,
                "version": FORMAT_VERSION,
                "split": payload.split.to_dict() if payload.split is not None else None,
                "examples": records,
            }
        )
        logger.info("сохранено примеров: %d -> %s", len(records), self._filename)

    def load(self) -> Dataset:
        """
        :raises DatasetError: файл повреждён или не является датасетом
        :raises OSError: файл не читается
        """
        data = self._read_all()
        examples = [Example.from_record(record) for record in data.get("examples", [])]
        split = data.get("split")
        return Dataset(examples, SplitSpec(dict(split)) if split else None)


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig


class CheckpointSaver(FileWorker[Checkpoint]):
    """
    Контрольная точка в контейнере .npz: каждый параметр под своим именем плюс
    JSON-метаданные (версия формата, конфигурация, словарь, размерности).
    """

    def __init__(self, filename: str = CHECKPOINT_PATH_STR) -> None:
        self._filename = filename

    def save(self, payload: Checkpoint) -> None:
        params = payload.params
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": FORMAT_VERSION,
            "embedding_dim": params.embedding_dim,
            "hidden_dim": params.hidden_dim,
            "config": payload.config.to_dict(),
            "vocab": params.vocab.to_dict(),
        }
        arrays = params.arrays()
        os.makedirs(os.path.dirname(self._filename) or ".", exist_ok=True)
        with open(self._filename, "wb") as f:
            np.savez(f, **arrays, **{_META_KEY: np.array(json.dumps(meta, ensure_ascii=False))})
        logger.info("контрольная точка записана: %s", self._filename)

    def load(self) -> Checkpoint:
        """
        :raises CheckpointError: файла нет, он повреждён или другой версии
        """
        try:
            with np.load(self._filename, allow_pickle=False) as data:
                meta = json.loads(str(data[_META_KEY]))
                arrays = {name: data[name] for name in PARAM_NAMES}
        except FileNotFoundError as e:
            raise CheckpointError(f"контрольная точка не найдена: {self._filename}") from e
        except (OSError, ValueError, KeyError) as e:
            raise CheckpointError(f"{self._filename}: не удалось прочитать контрольную точку ({e})") from e
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{self._filename}: неподдерживаемый формат {meta.get('format')!r}")
        try:
            vocab = Vocab.from_dict(meta["vocab"])
            params = ModelParams.from_arrays(vocab, int(meta["embedding_dim"]), int(meta["hidden_dim"]), arrays)
            config = TrainConfig.from_dict(meta["config"])
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"{self._filename}: несогласованные метаданные ({e})") from e
        return Checkpoint(params, config)

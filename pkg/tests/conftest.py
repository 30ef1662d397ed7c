import logging
from pathlib import Path
from typing import Callable, Iterator, List

import pytest

from src.ast_core import Ast
from src.dataset import EditSpan, Example, ingest_pair
from src.files import CheckpointSaver, DatasetSaver
from src.model import TrainConfig

# Контекст меняет порядок аргументов, P повторяет ту же правку.
SWAP_BEFORE = "x = f(a, b);\ny = f(c, d);\n"
SWAP_AFTER = "x = f(b, a);\ny = f(d, c);\n"

# Контекст заменяет аргумент на t, P повторяет замену с другим исходным именем.
RENAME_ARG_BEFORE = "k = g(a);\nh(b);\n"
RENAME_ARG_AFTER = "k = g(t);\nh(t);\n"

# Одинаковое переименование в контексте и в P.
RENAME_SAME_BEFORE = "x = old(a);\ny = old(b);\n"
RENAME_SAME_AFTER = "x = new(a);\ny = new(b);\n"

SECOND_LINE = EditSpan(2, 2, 2, 2)


@pytest.fixture
def dataset_saver(tmp_path: Path) -> DatasetSaver:
    """
    DatasetSaver на временном файле (каждый тест — свой файл).
    """
    return DatasetSaver(filename=str(tmp_path / "dataset_test.json"))


@pytest.fixture
def checkpoint_saver(tmp_path: Path) -> CheckpointSaver:
    """
    CheckpointSaver на временном файле.
    """
    return CheckpointSaver(filename=str(tmp_path / "checkpoint_test.npz"))


@pytest.fixture(scope="session")
def call_tree() -> Ast:
    """
    Unit(Expr(Call(Name f, ArgList(Arg(Name x), Arg(Name y))))) — идентификаторы 0..8 по прямому обходу.
    """
    return Ast.from_nested(
        (
            "Unit",
            [
                (
                    "Expr",
                    [
                        (
                            "Call",
                            [
                                ("Name", "f"),
                                ("ArgList", [("Arg", [("Name", "x")]), ("Arg", [("Name", "y")])]),
                            ],
                        )
                    ],
                )
            ],
        )
    )


@pytest.fixture(scope="session")
def swap_example() -> Example:
    """Пример, где P повторяет перестановку аргументов из контекста (одна операция MOV)."""
    return ingest_pair(SWAP_BEFORE, SWAP_AFTER, SECOND_LINE, project="alpha", pair_id="p1", commit="c1")


@pytest.fixture(scope="session")
def rename_arg_example() -> Example:
    """Пример, где P повторяет замену аргумента из контекста (одна операция UPD)."""
    return ingest_pair(
        RENAME_ARG_BEFORE, RENAME_ARG_AFTER, SECOND_LINE, project="beta", pair_id="p2", commit="c2"
    )


@pytest.fixture(scope="session")
def rename_same_example() -> Example:
    """Пример-переименование, уже сделанное в контексте (отбрасывается фильтром)."""
    return ingest_pair(
        RENAME_SAME_BEFORE, RENAME_SAME_AFTER, SECOND_LINE, project="gamma", pair_id="p3", commit="c3"
    )


@pytest.fixture
def make_example(swap_example: Example) -> Callable[..., Example]:
    """
    Фабрика копий swap_example с другим происхождением.

    Пример:
        e = make_example(project="p7", commit="c9")
    """

    def _make_example(*, project: str, pair_id: str = "p", commit: str = "c") -> Example:
        record = swap_example.to_record()
        record.update(project=project, pair_id=pair_id, commit=commit)
        return Example.from_record(record)

    return _make_example


@pytest.fixture(scope="session")
def tiny_config() -> TrainConfig:
    """Крошечная модель для быстрых тестов: d = h = 8, без dropout."""
    return TrainConfig(
        learning_rate=0.05,
        dropout=0.0,
        batch_size=2,
        max_steps=4,
        embedding_dim=8,
        hidden_dim=8,
        max_decode_length=4,
        eval_every=2,
        patience=5,
    )


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Path:
    """
    Корпус из трёх проектов по одной паре в раскладке `<project>/<pair>/{before.toy, after.toy, span.txt}`.
    """
    root = tmp_path / "corpus"
    pairs: List[tuple] = [
        ("alpha", SWAP_BEFORE, SWAP_AFTER),
        ("beta", RENAME_ARG_BEFORE, RENAME_ARG_AFTER),
        ("gamma", RENAME_SAME_BEFORE, RENAME_SAME_AFTER),
    ]
    for project, before, after in pairs:
        pair_dir = root / project / "pair0000"
        pair_dir.mkdir(parents=True)
        (pair_dir / "before.toy").write_text(before, encoding="utf-8")
        (pair_dir / "after.toy").write_text(after, encoding="utf-8")
        (pair_dir / "span.txt").write_text(f"before 2-2\nafter 2-2\ncommit {project}-c0\n", encoding="utf-8")
    return root


@pytest.fixture
def restore_logging() -> Iterator[None]:
    """CLI перенастраивает корневой логгер; возвращаем его обработчики и уровень после теста."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)

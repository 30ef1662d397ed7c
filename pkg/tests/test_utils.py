import logging
from typing import Tuple

import pandas as pd
import pytest

from src.dataset import Example, compute_stats
from src.utils import format_key_values, format_stats, format_table, parse_fractions, setup_logging


@pytest.mark.parametrize(
    "s, expected",
    [
        ("0.8,0.1,0.1", (0.8, 0.1, 0.1)),
        ("80/10/10", (0.8, 0.1, 0.1)),
        ("8:1:1", (0.8, 0.1, 0.1)),
        (" 1, 1, 2 ", (0.25, 0.25, 0.5)),
    ],
)
def test_parse_fractions(s: str, expected: Tuple[float, float, float]) -> None:
    """Тестируем parse_fractions: разные разделители, нормализация к сумме 1."""
    assert parse_fractions(s) == pytest.approx(expected)


@pytest.mark.parametrize("s", ["", "80/20", "a/b/c", "0/0/0", "-1,1,1"])
def test_parse_fractions_errors(s: str) -> None:
    """Тестируем parse_fractions: не три числа, нулевая сумма, отрицательные доли."""
    with pytest.raises(ValueError):
        parse_fractions(s)


def test_format_key_values() -> None:
    """Тестируем выравнивание ключей и печать дробных значений с двумя знаками."""
    text = format_key_values([("pairs", 3), ("kept", 2), ("accuracy", 0.6666)])
    assert text == "pairs     3\nkept      2\naccuracy  0.67\n"
    assert format_key_values([]) == ""


def test_format_stats(swap_example: Example) -> None:
    """Тестируем статистику в машинном виде и таблицей."""
    stats = compute_stats([swap_example])
    plain = format_stats({"train": stats})
    lines = plain.splitlines()
    assert lines[0].split() == ["train.#", "projects", "1"]
    assert any(line.startswith("train.Avg. number of MOV (%)") for line in lines)
    pretty = format_stats({"train": stats, "test": stats}, pretty=True)
    assert "train" in pretty.splitlines()[0] and "test" in pretty.splitlines()[0]
    assert "Avg. number of paths" in pretty


def test_format_table() -> None:
    """Тестируем печать DataFrame с двумя знаками после запятой."""
    text = format_table(pd.DataFrame({"accuracy": [0.5, 1.0]}, index=["a", "b"]))
    assert "0.50" in text and "1.00" in text
    assert text.endswith("\n")


def test_setup_logging(restore_logging: None) -> None:
    """Тестируем setup_logging: один обработчик, уровень по имени, ошибка на неизвестном имени."""
    setup_logging("debug")
    root = logging.getLogger()
    assert root.level == logging.DEBUG
    assert len(root.handlers) == 1
    setup_logging(logging.ERROR)
    assert root.level == logging.ERROR
    assert len(root.handlers) == 1
    with pytest.raises(ValueError):
        setup_logging("LOUD")

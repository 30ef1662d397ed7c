import logging
import re
import sys
from typing import Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from src.dataset import DatasetStats, stats_table

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"

_NUMBER_RE = re.compile(r"^\d+(?:\.\d+)?$")


def setup_logging(level: Union[str, int] = "WARNING") -> None:
    """
    Один обработчик на stderr для всего приложения (вызывается один раз из CLI).

    :param level: имя уровня (DEBUG, INFO, …) или число
    :raises ValueError: неизвестное имя уровня
    """
    if isinstance(level, str):
        resolved = logging.getLevelName(level.strip().upper())
        if not isinstance(resolved, int):
            raise ValueError(f"неизвестный уровень логирования: {level!r}")
        level = resolved
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)


def parse_fractions(s: str) -> Tuple[float, float, float]:
    """
    Разобрать доли train/validation/test.

    Поддерживаем форматы:
      "0.8,0.1,0.1", "80/10/10", "8:1:1" (нормализуются к сумме 1)

    :raises ValueError: не три неотрицательных числа или нулевая сумма
    """
    parts = [p.strip() for p in re.split(r"[,/:]", (s or "").strip()) if p.strip()]
    if len(parts) != 3 or not all(_NUMBER_RE.match(p) for p in parts):
        raise ValueError(f"ожидались три числа через запятую, получено {s!r}")
    values = [float(p) for p in parts]
    total = sum(values)
    if total <= 0:
        raise ValueError("сумма долей должна быть положительной")
    return values[0] / total, values[1] / total, values[2] / total


def _format_value(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def format_key_values(rows: Sequence[Tuple[str, object]]) -> str:
    """Выровненные пары «ключ значение», по одной в строке."""
    if not rows:
        return ""
    width = max(len(key) for key, _ in rows)
    return "".join(f"{key.ljust(width)}  {_format_value(value)}\n" for key, value in rows)


def format_stats(stats_by_split: Mapping[str, DatasetStats], *, pretty: bool = False) -> str:
    """
    Статистика датасета.

    Машинный вид: строки `<split>.<показатель>  <значение>`; pretty — таблица
    с разбиениями в столбцах.
    """
    if pretty:
        return format_table(stats_table(stats_by_split))
    rows = [(f"{split}.{key}", value) for split, stats in stats_by_split.items() for key, value in stats.rows()]
    return format_key_values(rows)


def format_table(frame: pd.DataFrame, float_format: Optional[str] = "{:.2f}") -> str:
    """Таблица pandas как текст с выравниванием."""
    formatter = (lambda v: float_format.format(v)) if float_format else None
    return frame.to_string(float_format=formatter) + "\n"

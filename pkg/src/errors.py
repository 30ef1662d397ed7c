from typing import Any, Dict, Optional


class EditGardenError(Exception):
    """Базовое исключение проекта: все ошибки предметной области наследуются от него."""


class InterchangeSyntaxError(EditGardenError, ValueError):
    """
    Ошибка разбора s-выражения формата обмена.

    :param message: текст ошибки
    :param line: номер строки (с 1)
    :param column: номер столбца (с 1)
    """

    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"{message} (строка {line}, столбец {column})")
        self.line = line
        self.column = column


class ToySyntaxError(EditGardenError, ValueError):
    """Ошибка разбора программы на демонстрационном языке (с позицией)."""

    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"{message} (строка {line}, столбец {column})")
        self.line = line
        self.column = column


class UnknownKindError(EditGardenError, ValueError):
    """Тип узла отсутствует в словаре грамматики."""


class UnknownNodeError(EditGardenError, KeyError):
    """Идентификатор узла не найден в дереве."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "неизвестный узел"


class InvalidTreeError(EditGardenError, ValueError):
    """Набор узлов не образует корректное дерево."""


class ScriptError(EditGardenError, ValueError):
    """Скрипт правок нельзя применить к дереву."""


class ScriptFormatError(EditGardenError, ValueError):
    """Текст скрипта правок не соответствует формату."""


class UnrepresentableError(EditGardenError):
    """Правку нельзя выразить путём в дополненном дереве P_before."""


class StalePathError(EditGardenError):
    """Конечная точка пути была удалена одной из предыдущих операций."""


class CoverageError(EditGardenError):
    """Эталонной операции нет среди кандидатов."""


class VocabError(EditGardenError, ValueError):
    """Ошибка построения или использования словаря модели."""


class DatasetError(EditGardenError, ValueError):
    """Ошибка загрузки, фильтрации или разбиения датасета."""


class CheckpointError(EditGardenError):
    """Контрольную точку нельзя прочитать или записать."""


class TrainingDivergedError(EditGardenError):
    """
    Функция потерь перестала быть конечной во время обучения.

    :param step: номер шага, на котором обнаружено расхождение
    :param diagnostics: нормы параметров и прочая отладочная информация
    """

    def __init__(self, step: int, loss: float, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(f"обучение разошлось на шаге {step}: loss={loss}")
        self.step = step
        self.loss = loss
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})


class UsageError(EditGardenError, ValueError):
    """Некорректные параметры команды (код выхода 1)."""

from abc import ABC, abstractmethod
from typing import Generic, TypeVar

from src.ast_core import Ast

T = TypeVar("T")


class TreeParser(ABC):
    """
    Абстрактный фронтенд: превращает текст в AST и обратно.
    Обязывает реализовать разбор и каноническую печать.
    """

    @abstractmethod
    def parse(self, text: str) -> Ast:
        """
        Разобрать текст в дерево.

        :param text: исходный текст
        :return: корректное дерево с идентификаторами по прямому обходу
        :raises ValueError: синтаксическая ошибка с позицией
        """
        pass

    @abstractmethod
    def unparse(self, tree: Ast) -> str:
        """
        Напечатать дерево в каноническом виде, который разбирается обратно в изоморфное дерево.

        :param tree: корректное дерево
        :return: текст
        """
        pass


class FileWorker(ABC, Generic[T]):
    """
    Абстракция над файловым хранилищем (датасет, контрольная точка).
    Обязывает уметь сохранять и загружать содержимое одного типа.
    """

    @abstractmethod
    def save(self, payload: T) -> None:
        """Записать содержимое в хранилище целиком."""
        pass

    @abstractmethod
    def load(self) -> T:
        """Прочитать содержимое хранилища."""
        pass

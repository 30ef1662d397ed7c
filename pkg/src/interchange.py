import re
from typing import Dict, List, Optional, Tuple

from src.ast_core import Ast, GrammarVocab
from src.base import TreeParser
from src.errors import InterchangeSyntaxError, UnknownKindError

_KIND_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
_WHITESPACE = " \t\r\n"


def quote_string(value: str) -> str:
    """Строка в двойных кавычках; экранируются только кавычка и обратная косая черта."""
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


class _Reader:
    """Посимвольное чтение текста с отслеживанием строки и столбца."""

    def __init__(self, text: str, start: int = 0) -> None:
        self.text = text
        self.pos = start

    def location(self, pos: Optional[int] = None) -> Tuple[int, int]:
        at = self.pos if pos is None else pos
        line = self.text.count("\n", 0, at) + 1
        column = at - (self.text.rfind("\n", 0, at) + 1) + 1
        return line, column

    def error(self, message: str, pos: Optional[int] = None) -> InterchangeSyntaxError:
        line, column = self.location(pos)
        return InterchangeSyntaxError(message, line, column)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in _WHITESPACE:
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char: str) -> None:
        if self.peek() != char:
            found = repr(self.peek()) if self.peek() else "конец текста"
            raise self.error(f"ожидалось {char!r}, найдено {found}")
        self.pos += 1

    def read_kind(self) -> str:
        match = _KIND_RE.match(self.text, self.pos)
        if match is None:
            raise self.error("ожидался тип узла")
        self.pos = match.end()
        return match.group(0)

    def read_string(self) -> str:
        start = self.pos
        self.expect('"')
        chars: List[str] = []
        while True:
            if self.pos >= len(self.text):
                raise self.error("незакрытая строка", start)
            ch = self.text[self.pos]
            if ch == '"':
                self.pos += 1
                return "".join(chars)
            if ch == "\\":
                nxt = self.text[self.pos + 1] if self.pos + 1 < len(self.text) else ""
                if nxt not in ('"', "\\"):
                    raise self.error("недопустимая escape-последовательность")
                chars.append(nxt)
                self.pos += 2
                continue
            chars.append(ch)
            self.pos += 1


def _read_tree(reader: _Reader, vocab: Optional[GrammarVocab]) -> Ast:
    kinds: Dict[int, str] = {}
    values: Dict[int, Optional[str]] = {}
    children: Dict[int, List[int]] = {}
    counter = 0

    def read_node(parent: Optional[int]) -> None:
        nonlocal counter
        reader.skip_ws()
        open_pos = reader.pos
        reader.expect("(")
        reader.skip_ws()
        kind_pos = reader.pos
        kind = reader.read_kind()
        if vocab is not None and kind not in vocab:
            line, column = reader.location(kind_pos)
            raise UnknownKindError(f"неизвестный тип узла {kind!r} (строка {line}, столбец {column})")
        node_id = counter
        counter += 1
        kinds[node_id] = kind
        values[node_id] = None
        children[node_id] = []
        if parent is not None:
            children[parent].append(node_id)
        reader.skip_ws()
        if reader.peek() == '"':
            values[node_id] = reader.read_string()
            reader.skip_ws()
        else:
            while reader.peek() == "(":
                read_node(node_id)
                reader.skip_ws()
        if reader.peek() != ")":
            if not reader.peek():
                raise reader.error("несбалансированная скобка", open_pos)
            raise reader.error(f"неожиданный символ {reader.peek()!r}")
        reader.pos += 1

    read_node(None)
    return Ast.from_children(0, kinds, values, children)


def parse_interchange(text: str, vocab: Optional[GrammarVocab] = None) -> Ast:
    """
    Разобрать документ формата обмена (одно s-выражение).

    :param text: документ
    :param vocab: словарь типов; если задан, неизвестные типы — ошибка
    :raises InterchangeSyntaxError: синтаксическая ошибка со строкой и столбцом
    :raises UnknownKindError: тип узла вне словаря
    :return: дерево с идентификаторами по прямому обходу
    """
    reader = _Reader(text)
    tree = _read_tree(reader, vocab)
    reader.skip_ws()
    if reader.pos != len(text):
        raise reader.error("лишний текст после документа")
    return tree


def parse_node_prefix(text: str, start: int = 0) -> Tuple[Ast, int]:
    """
    Разобрать одно s-выражение, начиная с позиции start.

    :return: дерево и позиция сразу после закрывающей скобки
    """
    reader = _Reader(text, start)
    tree = _read_tree(reader, None)
    return tree, reader.pos


def serialize_interchange(tree: Ast, node_id: Optional[int] = None) -> str:
    """
    Каноническая запись дерева: один пробел между элементами, строки экранированы.

    :param tree: корректное дерево
    :param node_id: корень печатаемого поддерева (по умолчанию корень дерева)
    :return: s-выражение
    """
    parts: List[str] = []

    def emit(current: int) -> None:
        node = tree[current]
        parts.append("(" + node.kind)
        if node.value is not None:
            parts.append(" " + quote_string(node.value))
        for child in node.children:
            parts.append(" ")
            emit(child)
        parts.append(")")

    emit(tree.root if node_id is None else node_id)
    return "".join(parts)


class InterchangeParser(TreeParser):
    """Фронтенд формата обмена: s-выражения с типами-атомами и строковыми значениями."""

    __slots__ = ("_vocab",)

    def __init__(self, vocab: Optional[GrammarVocab] = None) -> None:
        """
        :param vocab: необязательный словарь типов для проверки
        """
        self._vocab = vocab

    def parse(self, text: str) -> Ast:
        return parse_interchange(text, self._vocab)

    def unparse(self, tree: Ast) -> str:
        return serialize_interchange(tree)

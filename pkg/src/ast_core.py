import re
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from src.errors import InvalidTreeError, UnknownNodeError

# Вложенная запись дерева: (kind, "value") для терминала или (kind, [дети]) для нетерминала.
NestedNode = Tuple[str, Union[str, List["NestedNode"]]]
Shape = Tuple[str, Optional[str], Tuple["Shape", ...]]

_ALNUM_RUN_RE = re.compile(r"[^\W_]+")
_SUBTOKEN_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|\d+|[^\W\d_A-Za-z]+")


class AstNode:
    """
    Узел AST.

    Атрибуты:
        id: идентификатор, уникальный в пределах дерева.
        kind: тип узла (символ грамматики).
        value: значение терминала или None для нетерминала.
        child_index: позиция среди детей родителя (у корня 0).
        children: идентификаторы детей по порядку.
        parent: идентификатор родителя или None для корня.
    """

    __slots__ = ("id", "kind", "value", "child_index", "children", "parent")

    def __init__(
        self,
        *,
        id: int,
        kind: str,
        value: Optional[str],
        child_index: int,
        children: Sequence[int] = (),
        parent: Optional[int] = None,
    ) -> None:
        self.id = id
        self.kind = kind
        self.value = value
        self.child_index = child_index
        self.children: Tuple[int, ...] = tuple(children)
        self.parent = parent

    @property
    def is_terminal(self) -> bool:
        """Терминал — узел со значением."""
        return self.value is not None

    def _key(self) -> Tuple[int, str, Optional[str], int, Tuple[int, ...], Optional[int]]:
        return (self.id, self.kind, self.value, self.child_index, self.children, self.parent)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AstNode):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        label = f" {self.value!r}" if self.value is not None else ""
        return f"AstNode({self.id}: {self.kind}{label}, idx={self.child_index}, children={list(self.children)})"


class Ast:
    """
    Неизменяемое абстрактное синтаксическое дерево.

    Узлы хранятся в словаре по идентификатору; дерево проверяется при создании:
    ровно один корень, у каждого некорневого узла один родитель, нет циклов,
    дети терминалов отсутствуют.
    """

    __slots__ = ("_nodes", "_root", "_key_cache")

    def __init__(self, nodes: Mapping[int, AstNode], root: int) -> None:
        """
        :param nodes: узлы дерева по идентификаторам
        :param root: идентификатор корня
        :raises InvalidTreeError: если узлы не образуют дерево
        """
        self._nodes: Dict[int, AstNode] = dict(nodes)
        self._root = root
        self._key_cache: Optional[Tuple[object, ...]] = None
        self._validate()

    @classmethod
    def from_children(
        cls,
        root: int,
        kinds: Mapping[int, str],
        values: Mapping[int, Optional[str]],
        children: Mapping[int, Sequence[int]],
    ) -> "Ast":
        """
        Собрать дерево по таблицам типов, значений и детей; родители и индексы вычисляются.

        :param root: идентификатор корня
        :param kinds: тип каждого узла
        :param values: значение каждого узла (None для нетерминалов)
        :param children: дети каждого узла
        :return: проверенное дерево
        """
        nodes: Dict[int, AstNode] = {}
        parents: Dict[int, Optional[int]] = {root: None}
        indices: Dict[int, int] = {root: 0}
        for node_id, kids in children.items():
            for i, child in enumerate(kids):
                if child in parents:
                    raise InvalidTreeError(f"узел {child} имеет больше одного родителя")
                parents[child] = node_id
                indices[child] = i
        for node_id, kind in kinds.items():
            if node_id not in parents:
                raise InvalidTreeError(f"узел {node_id} не связан с корнем")
            nodes[node_id] = AstNode(
                id=node_id,
                kind=kind,
                value=values.get(node_id),
                child_index=indices[node_id],
                children=tuple(children.get(node_id, ())),
                parent=parents[node_id],
            )
        return cls(nodes, root)

    @classmethod
    def from_nested(cls, nested: NestedNode) -> "Ast":
        """
        Построить дерево из вложенной записи, идентификаторы — по прямому обходу.

        Пример: ("Call", [("Name", "f"), ("ArgList", [])])
        """
        kinds: Dict[int, str] = {}
        values: Dict[int, Optional[str]] = {}
        children: Dict[int, List[int]] = {}
        counter = 0
        stack: List[Tuple[NestedNode, Optional[int]]] = [(nested, None)]
        while stack:
            (kind, payload), parent = stack.pop()
            node_id = counter
            counter += 1
            kinds[node_id] = kind
            children[node_id] = []
            if parent is not None:
                children[parent].append(node_id)
            if isinstance(payload, str):
                values[node_id] = payload
            else:
                values[node_id] = None
                for child in reversed(payload):
                    stack.append((child, node_id))
        return cls.from_children(0, kinds, values, children)

    def _validate(self) -> None:
        if self._root not in self._nodes:
            raise InvalidTreeError(f"корень {self._root} отсутствует среди узлов")
        if self._nodes[self._root].parent is not None:
            raise InvalidTreeError("у корня не может быть родителя")
        seen = set()
        stack = [self._root]
        while stack:
            node_id = stack.pop()
            if node_id in seen:
                raise InvalidTreeError(f"цикл или повторная ссылка на узел {node_id}")
            seen.add(node_id)
            node = self._nodes[node_id]
            if node.value is not None and node.children:
                raise InvalidTreeError(f"терминал {node_id} не может иметь детей")
            for i, child in enumerate(node.children):
                if child not in self._nodes:
                    raise InvalidTreeError(f"узел {node_id} ссылается на несуществующий узел {child}")
                child_node = self._nodes[child]
                if child_node.parent != node_id or child_node.child_index != i:
                    raise InvalidTreeError(f"неверный родитель или индекс у узла {child}")
                stack.append(child)
        if len(seen) != len(self._nodes):
            raise InvalidTreeError("в дереве есть узлы, недостижимые из корня")

    @property
    def root(self) -> int:
        return self._root

    @property
    def nodes(self) -> Mapping[int, AstNode]:
        return self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def __getitem__(self, node_id: int) -> AstNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"узел {node_id} отсутствует в дереве") from None

    def __iter__(self) -> Iterator[int]:
        return iter(self.preorder())

    def preorder(self, start: Optional[int] = None) -> List[int]:
        """Идентификаторы поддерева в прямом порядке обхода."""
        first = self._root if start is None else self[start].id
        order: List[int] = []
        stack = [first]
        while stack:
            node_id = stack.pop()
            order.append(node_id)
            stack.extend(reversed(self._nodes[node_id].children))
        return order

    def postorder(self, start: Optional[int] = None) -> List[int]:
        """Идентификаторы поддерева в обратном (post-order) порядке."""
        first = self._root if start is None else self[start].id
        order: List[int] = []
        stack: List[Tuple[int, bool]] = [(first, False)]
        while stack:
            node_id, expanded = stack.pop()
            if expanded:
                order.append(node_id)
                continue
            stack.append((node_id, True))
            for child in reversed(self._nodes[node_id].children):
                stack.append((child, False))
        return order

    def parent(self, node_id: int) -> Optional[int]:
        return self[node_id].parent

    def max_id(self) -> int:
        return max(self._nodes)

    def is_ancestor(self, ancestor: int, node_id: int) -> bool:
        """True, если ancestor лежит на пути от node_id к корню (включая сам узел)."""
        current: Optional[int] = self[node_id].id
        while current is not None:
            if current == ancestor:
                return True
            current = self._nodes[current].parent
        return False

    def terminals(self) -> List[int]:
        """Терминалы в прямом порядке."""
        return [n for n in self.preorder() if self._nodes[n].is_terminal]

    def subtree(self, node_id: int) -> "Ast":
        """Копия поддерева с новыми идентификаторами по прямому обходу."""
        return Ast.from_nested(self.to_nested(node_id))

    def renumbered(self) -> "Ast":
        """Копия дерева с идентификаторами по прямому обходу (как после разбора)."""
        return self.subtree(self._root)

    def to_nested(self, node_id: Optional[int] = None) -> NestedNode:
        """Вложенная запись поддерева (без идентификаторов)."""
        node = self[self._root if node_id is None else node_id]
        if node.value is not None:
            return (node.kind, node.value)
        return (node.kind, [self.to_nested(child) for child in node.children])

    def shape(self, node_id: Optional[int] = None) -> Shape:
        """Форма поддерева: типы, значения и порядок детей без идентификаторов."""
        node = self[self._root if node_id is None else node_id]
        return (node.kind, node.value, tuple(self.shape(child) for child in node.children))

    def _key(self) -> Tuple[object, ...]:
        if self._key_cache is None:
            self._key_cache = (self._root,) + tuple(self._nodes[n]._key() for n in sorted(self._nodes))
        return self._key_cache

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ast):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        return f"Ast(root={self._root}, size={len(self._nodes)})"


class AstPath:
    """
    Путь в AST: последовательность узлов n1..nk, где соседние узлы — родитель и ребёнок.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: Iterable[int]) -> None:
        self.nodes: Tuple[int, ...] = tuple(nodes)
        if not self.nodes:
            raise ValueError("путь не может быть пустым")

    @property
    def source(self) -> int:
        return self.nodes[0]

    @property
    def target(self) -> int:
        return self.nodes[-1]

    def reversed(self) -> "AstPath":
        return AstPath(reversed(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[int]:
        return iter(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AstPath):
            return NotImplemented
        return self.nodes == other.nodes

    def __hash__(self) -> int:
        return hash(self.nodes)

    def __repr__(self) -> str:
        return f"AstPath({list(self.nodes)})"


class GrammarVocab:
    """
    Замкнутый словарь типов узлов грамматики.

    :param symbols: упорядоченные уникальные символы
    :param terminals: подмножество символов-терминалов
    :param max_child_index: предел для эмбеддингов индексов детей
    """

    __slots__ = ("symbols", "terminals", "max_child_index", "_index")

    def __init__(self, symbols: Sequence[str], terminals: Iterable[str], max_child_index: int = 15) -> None:
        if len(set(symbols)) != len(symbols):
            raise ValueError("символы грамматики должны быть уникальны")
        self.symbols: Tuple[str, ...] = tuple(symbols)
        self.terminals: FrozenSet[str] = frozenset(terminals)
        unknown = self.terminals - set(self.symbols)
        if unknown:
            raise ValueError(f"терминалы вне словаря: {sorted(unknown)}")
        self.max_child_index = max_child_index
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __contains__(self, kind: object) -> bool:
        return kind in self._index

    def __len__(self) -> int:
        return len(self.symbols)

    def is_terminal(self, kind: str) -> bool:
        return kind in self.terminals


def _ancestors(parent_of: Callable[[int], Optional[int]], node_id: int) -> List[int]:
    chain = [node_id]
    current = parent_of(node_id)
    while current is not None:
        chain.append(current)
        current = parent_of(current)
    return chain


def path_via_parents(parent_of: Callable[[int], Optional[int]], a: int, b: int) -> List[int]:
    """
    Простой путь a…LCA…b по функции «родитель».

    :param parent_of: функция, возвращающая родителя узла или None
    :return: список узлов пути
    """
    up_a = _ancestors(parent_of, a)
    up_b = _ancestors(parent_of, b)
    on_b = {n: i for i, n in enumerate(up_b)}
    for i, node_id in enumerate(up_a):
        if node_id in on_b:
            return up_a[: i + 1] + list(reversed(up_b[: on_b[node_id]]))
    raise ValueError(f"узлы {a} и {b} лежат в разных деревьях")


def path_between(tree: Ast, a: int, b: int) -> AstPath:
    """
    Единственный простой путь между узлами a и b через их наименьшего общего предка.

    :param tree: дерево
    :param a: начальный узел
    :param b: конечный узел
    :raises UnknownNodeError: если узла нет в дереве
    :return: путь; для a == b — путь из одного узла
    """
    tree[a]
    tree[b]
    return AstPath(path_via_parents(tree.parent, a, b))


def is_valid_path(tree: Ast, path: AstPath) -> bool:
    """Проверка условия пути: соседние узлы — родитель и ребёнок, узлы не повторяются."""
    if len(set(path.nodes)) != len(path.nodes):
        return False
    for x, y in zip(path.nodes, path.nodes[1:]):
        if x not in tree or y not in tree:
            return False
        if tree.parent(x) != y and tree.parent(y) != x:
            return False
    return path.nodes[0] in tree


def split_subtokens(value: str) -> List[str]:
    """
    Разбить значение терминала на подтокены в нижнем регистре.

    Границы: camelCase, подчёркивания и прочие разделители, переход между буквами и цифрами.
    Значение без букв и цифр (например, оператор "+") остаётся одним подтокеном.

    :param value: непустая строка
    :raises ValueError: для пустой строки
    :return: список подтокенов
    """
    if not value:
        raise ValueError("нельзя разбить пустое значение на подтокены")
    parts: List[str] = []
    for run in _ALNUM_RUN_RE.findall(value):
        parts.extend(piece.lower() for piece in _SUBTOKEN_RE.findall(run))
    return parts or [value.lower()]


def subtree_size(tree: Ast, node_id: int) -> int:
    """Количество узлов в поддереве с корнем node_id (не меньше 1)."""
    return len(tree.preorder(node_id))


def isomorphic(a: Ast, b: Ast, a_root: Optional[int] = None, b_root: Optional[int] = None) -> bool:
    """Изоморфизм поддеревьев: совпадают типы, значения и порядок детей."""
    return a.shape(a_root) == b.shape(b_root)


class _MNode:
    __slots__ = ("kind", "value", "children", "parent")

    def __init__(self, kind: str, value: Optional[str], parent: Optional[int]) -> None:
        self.kind = kind
        self.value = value
        self.children: List[int] = []
        self.parent = parent


class MutableTree:
    """
    Изменяемая рабочая копия дерева для пошагового применения правок.

    Идентификаторы существующих узлов сохраняются; новые узлы получают
    идентификаторы max+1, max+2, … в порядке вставки.
    """

    def __init__(self) -> None:
        self._nodes: Dict[int, _MNode] = {}
        self._next_id = 0

    @classmethod
    def from_ast(cls, tree: Ast, *, virtual_root: Optional[int] = None) -> "MutableTree":
        """
        :param tree: исходное дерево
        :param virtual_root: если задан, корень дерева становится единственным ребёнком
            виртуального узла с этим идентификатором
        """
        work = cls()
        for node_id in tree.preorder():
            node = tree[node_id]
            m = _MNode(node.kind, node.value, node.parent)
            m.children = list(node.children)
            work._nodes[node_id] = m
        work._next_id = tree.max_id() + 1
        if virtual_root is not None:
            top = _MNode("<root>", None, None)
            top.children = [tree.root]
            work._nodes[virtual_root] = top
            work._nodes[tree.root].parent = virtual_root
        return work

    def copy(self) -> "MutableTree":
        other = MutableTree()
        for node_id, m in self._nodes.items():
            c = _MNode(m.kind, m.value, m.parent)
            c.children = list(m.children)
            other._nodes[node_id] = c
        other._next_id = self._next_id
        return other

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def _get(self, node_id: int) -> _MNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"узел {node_id} отсутствует в дереве") from None

    def kind(self, node_id: int) -> str:
        return self._get(node_id).kind

    def value(self, node_id: int) -> Optional[str]:
        return self._get(node_id).value

    def set_value(self, node_id: int, value: str) -> None:
        self._get(node_id).value = value

    def children(self, node_id: int) -> List[int]:
        return list(self._get(node_id).children)

    def parent(self, node_id: int) -> Optional[int]:
        return self._get(node_id).parent

    def is_terminal(self, node_id: int) -> bool:
        return self._get(node_id).value is not None

    def index_of(self, node_id: int) -> int:
        parent = self.parent(node_id)
        if parent is None:
            return 0
        return self._nodes[parent].children.index(node_id)

    @property
    def next_id(self) -> int:
        return self._next_id

    def subtree_ids(self, node_id: int) -> List[int]:
        order: List[int] = []
        stack = [node_id]
        while stack:
            current = stack.pop()
            order.append(current)
            stack.extend(reversed(self._get(current).children))
        return order

    def is_ancestor(self, ancestor: int, node_id: int) -> bool:
        current: Optional[int] = node_id
        while current is not None:
            if current == ancestor:
                return True
            current = self._get(current).parent
        return False

    def detach(self, node_id: int) -> None:
        """Отцепить узел от родителя (поддерево остаётся в таблице узлов)."""
        node = self._get(node_id)
        if node.parent is not None:
            self._nodes[node.parent].children.remove(node_id)
        node.parent = None

    def attach(self, node_id: int, parent: int, position: int) -> None:
        """Сделать отцепленный узел ребёнком parent на позиции position."""
        node = self._get(node_id)
        host = self._get(parent)
        if node.parent is not None:
            raise ValueError(f"узел {node_id} уже прикреплён")
        host.children.insert(position, node_id)
        node.parent = parent

    def remove_subtree(self, node_id: int) -> List[int]:
        """Удалить поддерево целиком; вернуть идентификаторы удалённых узлов."""
        doomed = self.subtree_ids(node_id)
        self.detach(node_id)
        for current in doomed:
            del self._nodes[current]
        return doomed

    def add_node(self, kind: str, value: Optional[str], parent: int, position: int) -> int:
        """Добавить новый узел без детей; вернуть его идентификатор."""
        node_id = self._next_id
        self._next_id += 1
        self._nodes[node_id] = _MNode(kind, value, None)
        self.attach(node_id, parent, position)
        return node_id

    def insert_copy(
        self,
        source: Ast,
        parent: int,
        position: int,
        source_root: Optional[int] = None,
        on_node: Optional[Callable[[int, int], None]] = None,
    ) -> int:
        """
        Вставить копию поддерева source с новыми идентификаторами (прямой порядок).

        :param on_node: вызывается как on_node(исходный_id, новый_id) для каждого узла
        :return: идентификатор корня копии
        """
        top = source.root if source_root is None else source_root
        new_root = -1
        stack: List[Tuple[int, int, int]] = [(top, parent, position)]
        while stack:
            src_id, host, pos = stack.pop()
            node = source[src_id]
            new_id = self.add_node(node.kind, node.value, host, pos)
            if on_node is not None:
                on_node(src_id, new_id)
            if src_id == top:
                new_root = new_id
            # дети 0..i-1 уже вставлены к моменту обработки i-го (прямой порядок)
            for i in reversed(range(len(node.children))):
                stack.append((node.children[i], new_id, i))
        return new_root

    def path(self, a: int, b: int) -> List[int]:
        self._get(a)
        self._get(b)
        return path_via_parents(self.parent, a, b)

    def to_ast(self, root: int, *, skip: Callable[[int], bool] = lambda _: False) -> Ast:
        """
        Заморозить поддерево root в Ast, сохраняя идентификаторы.

        :param skip: предикат узлов, которые нужно выбросить вместе с поддеревьями
        """
        kinds: Dict[int, str] = {}
        values: Dict[int, Optional[str]] = {}
        children: Dict[int, List[int]] = {}
        stack = [root]
        while stack:
            current = stack.pop()
            node = self._get(current)
            kinds[current] = node.kind
            values[current] = node.value
            kept = [c for c in node.children if not skip(c)]
            children[current] = kept
            stack.extend(kept)
        return Ast.from_children(root, kinds, values, children)

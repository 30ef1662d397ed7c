"""
Сопоставление двух AST в духе GumTree (якоря сверху вниз, контейнеры снизу вверх,
восстановление потомков) и построение/применение скриптов правок по Чавате.
"""

import heapq
import logging
import re
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Deque, Dict, FrozenSet, Iterator, List, Optional, Sequence, Set, Tuple

from src.ast_core import Ast, AstNode, MutableTree
from src.errors import ScriptError, ScriptFormatError, UnknownNodeError
from src.interchange import _Reader, parse_node_prefix, quote_string, serialize_interchange

logger = logging.getLogger(__name__)

VIRTUAL_ROOT = -1
CONTAINER_THRESHOLD = 0.5


class OpKind(str, Enum):
    MOV = "MOV"
    DEL = "DEL"
    UPD = "UPD"
    INS = "INS"


@dataclass(frozen=True)
class EditOp:
    """
    Одна инструкция скрипта правок.

    MOV src, tgt — src становится правым соседом tgt (или первым ребёнком tgt при first_child);
    DEL src — удаляется всё поддерево src;
    UPD value, tgt — значение терминала tgt заменяется на value;
    INS subtree, tgt — копия subtree вставляется так же, как при MOV.
    """

    kind: OpKind
    src: Optional[int] = None
    tgt: Optional[int] = None
    value: Optional[str] = None
    subtree: Optional[Ast] = None
    first_child: bool = False

    @classmethod
    def mov(cls, src: int, tgt: int, *, first_child: bool = False) -> "EditOp":
        return cls(OpKind.MOV, src=src, tgt=tgt, first_child=first_child)

    @classmethod
    def delete(cls, src: int) -> "EditOp":
        return cls(OpKind.DEL, src=src)

    @classmethod
    def update(cls, value: str, tgt: int) -> "EditOp":
        return cls(OpKind.UPD, tgt=tgt, value=value)

    @classmethod
    def insert(cls, subtree: Ast, tgt: int, *, first_child: bool = False) -> "EditOp":
        return cls(OpKind.INS, tgt=tgt, subtree=subtree, first_child=first_child)

    def _target_text(self) -> str:
        return f"^{self.tgt}" if self.first_child else str(self.tgt)

    def __str__(self) -> str:
        if self.kind is OpKind.MOV:
            return f"MOV {self.src} {self._target_text()}"
        if self.kind is OpKind.DEL:
            return f"DEL {self.src}"
        if self.kind is OpKind.UPD:
            return f"UPD {quote_string(self.value or '')} {self.tgt}"
        assert self.subtree is not None
        return f"INS {serialize_interchange(self.subtree)} {self._target_text()}"


@dataclass(frozen=True)
class EditScript:
    """Упорядоченный список инструкций."""

    ops: Tuple[EditOp, ...] = ()

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self) -> Iterator[EditOp]:
        return iter(self.ops)

    def __getitem__(self, index: int) -> EditOp:
        return self.ops[index]

    def kinds(self) -> List[OpKind]:
        return [op.kind for op in self.ops]

    def to_text(self) -> str:
        """Построчная запись: одна инструкция на строку."""
        return "".join(str(op) + "\n" for op in self.ops)

    @classmethod
    def from_text(cls, text: str) -> "EditScript":
        """Разобрать построчную запись скрипта (пустые строки пропускаются)."""
        ops = [parse_edit_op(line, number) for number, line in enumerate(text.splitlines(), 1) if line.strip()]
        return cls(tuple(ops))


_TARGET_RE = re.compile(r"\s*(\^?)(-?\d+)\s*$")
_ID_RE = re.compile(r"\s*(-?\d+)")


def _parse_target(rest: str, number: int) -> Tuple[int, bool]:
    match = _TARGET_RE.fullmatch(rest)
    if match is None:
        raise ScriptFormatError(f"строка {number}: ожидался идентификатор цели, найдено {rest.strip()!r}")
    return int(match.group(2)), bool(match.group(1))


def parse_edit_op(line: str, number: int = 1) -> EditOp:
    """
    Разобрать одну строку скрипта.

    :param line: строка вида `MOV 3 7`, `MOV 3 ^5`, `DEL 4`, `UPD "v" 9`, `INS (Name "x") 7`
    :param number: номер строки для сообщений об ошибках
    :raises ScriptFormatError: строка не соответствует формату
    """
    text = line.strip()
    head, _, rest = text.partition(" ")
    try:
        if head == "MOV":
            match = _ID_RE.match(rest)
            if match is None:
                raise ScriptFormatError(f"строка {number}: ожидался идентификатор источника")
            tgt, first = _parse_target(rest[match.end():], number)
            return EditOp.mov(int(match.group(1)), tgt, first_child=first)
        if head == "DEL":
            if not re.fullmatch(r"\s*-?\d+\s*", rest):
                raise ScriptFormatError(f"строка {number}: DEL ожидает один идентификатор")
            return EditOp.delete(int(rest))
        if head == "UPD":
            reader = _Reader(rest)
            reader.skip_ws()
            value = reader.read_string()
            tgt, first = _parse_target(rest[reader.pos:], number)
            if first:
                raise ScriptFormatError(f"строка {number}: UPD не допускает цель вида ^id")
            return EditOp.update(value, tgt)
        if head == "INS":
            subtree, end = parse_node_prefix(rest)
            tgt, first = _parse_target(rest[end:], number)
            return EditOp.insert(subtree, tgt, first_child=first)
    except ValueError as e:
        if isinstance(e, ScriptFormatError):
            raise
        raise ScriptFormatError(f"строка {number}: {e}") from e
    raise ScriptFormatError(f"строка {number}: неизвестная операция {head!r}")


class Mapping:
    """
    Взаимно однозначное соответствие узлов дерева A узлам дерева A'.
    Каждый узел входит не более чем в одну пару.
    """

    __slots__ = ("_fwd", "_bwd")

    def __init__(self, pairs: Sequence[Tuple[int, int]] = ()) -> None:
        self._fwd: Dict[int, int] = {}
        self._bwd: Dict[int, int] = {}
        for a, b in pairs:
            self.add(a, b)

    def add(self, a: int, b: int) -> None:
        if a in self._fwd or b in self._bwd:
            raise ValueError(f"узел уже сопоставлен: ({a}, {b})")
        self._fwd[a] = b
        self._bwd[b] = a

    def has_src(self, a: int) -> bool:
        return a in self._fwd

    def has_dst(self, b: int) -> bool:
        return b in self._bwd

    def dst(self, a: int) -> Optional[int]:
        return self._fwd.get(a)

    def src(self, b: int) -> Optional[int]:
        return self._bwd.get(b)

    @property
    def pairs(self) -> FrozenSet[Tuple[int, int]]:
        return frozenset(self._fwd.items())

    def copy(self) -> "Mapping":
        other = Mapping()
        other._fwd = dict(self._fwd)
        other._bwd = dict(self._bwd)
        return other

    def __len__(self) -> int:
        return len(self._fwd)

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        return iter(sorted(self._fwd.items()))

    def __contains__(self, pair: object) -> bool:
        return isinstance(pair, tuple) and len(pair) == 2 and self._fwd.get(pair[0]) == pair[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mapping):
            return NotImplemented
        return self._fwd == other._fwd

    def __repr__(self) -> str:
        return f"Mapping({sorted(self._fwd.items())})"


def compatible(x: AstNode, y: AstNode) -> bool:
    """Пару можно сопоставить: один тип и одинаковая «терминальность»."""
    return x.kind == y.kind and x.is_terminal == y.is_terminal


def is_valid_mapping(a: Ast, b: Ast, m: Mapping) -> bool:
    """Проверка инвариантов соответствия: узлы существуют и пары совместимы."""
    for x, y in m:
        if x not in a or y not in b or not compatible(a[x], b[y]):
            return False
    return True


class _TreeIndex:
    """Предвычисленные для дерева позиции, размеры, высоты и структурные хеши."""

    def __init__(self, tree: Ast, interner: Dict[Tuple[object, ...], int]) -> None:
        self.tree = tree
        self.order = tree.preorder()
        self.pos = {n: i for i, n in enumerate(self.order)}
        self.size: Dict[int, int] = {}
        self.height: Dict[int, int] = {}
        self.hash: Dict[int, int] = {}
        for n in tree.postorder():
            node = tree[n]
            kids = node.children
            self.size[n] = 1 + sum(self.size[c] for c in kids)
            self.height[n] = 1 + max((self.height[c] for c in kids), default=0)
            key = (node.kind, node.value, tuple(self.hash[c] for c in kids))
            self.hash[n] = interner.setdefault(key, len(interner))
        self.hash_count: Dict[int, int] = {}
        for h in self.hash.values():
            self.hash_count[h] = self.hash_count.get(h, 0) + 1

    def descendants(self, n: int) -> List[int]:
        start = self.pos[n]
        return self.order[start + 1: start + self.size[n]]

    def contains(self, ancestor: int, n: int) -> bool:
        """n лежит в поддереве ancestor (включая сам узел)."""
        p = self.pos[ancestor]
        return p <= self.pos[n] < p + self.size[ancestor]


def _indexes(a: Ast, b: Ast) -> Tuple[_TreeIndex, _TreeIndex]:
    interner: Dict[Tuple[object, ...], int] = {}
    return _TreeIndex(a, interner), _TreeIndex(b, interner)


def _map_isomorphic(ia: _TreeIndex, ib: _TreeIndex, t1: int, t2: int, m: Mapping) -> None:
    for x, y in zip(ia.order[ia.pos[t1]: ia.pos[t1] + ia.size[t1]], ib.order[ib.pos[t2]: ib.pos[t2] + ib.size[t2]]):
        if not m.has_src(x) and not m.has_dst(y):
            m.add(x, y)


def _dice(ia: _TreeIndex, ib: _TreeIndex, t1: Optional[int], t2: Optional[int], m: Mapping) -> float:
    if t1 is None or t2 is None:
        return 0.0
    d1 = ia.descendants(t1)
    total = len(d1) + ib.size[t2] - 1
    if total == 0:
        return 0.0
    common = 0
    for d in d1:
        partner = m.dst(d)
        if partner is not None and partner != t2 and ib.contains(t2, partner):
            common += 1
    return 2.0 * common / total


class _HeightQueue:
    """Очередь узлов по убыванию высоты; при равенстве — по позиции в прямом обходе."""

    def __init__(self, index: _TreeIndex) -> None:
        self.index = index
        self.heap: List[Tuple[int, int, int]] = []

    def push(self, n: int) -> None:
        heapq.heappush(self.heap, (-self.index.height[n], self.index.pos[n], n))

    def open(self, n: int) -> None:
        for c in self.index.tree[n].children:
            self.push(c)

    def peek_height(self) -> int:
        return -self.heap[0][0] if self.heap else 0

    def pop_level(self) -> List[int]:
        level = self.peek_height()
        nodes = []
        while self.heap and -self.heap[0][0] == level:
            nodes.append(heapq.heappop(self.heap)[2])
        return nodes


def anchors_topdown(a: Ast, b: Ast, min_height: int = 1) -> Mapping:
    """
    Фаза якорей: жадное сопоставление максимальных изоморфных поддеревьев по убыванию высоты.

    Поддеревья, у которых есть несколько изоморфных партнёров, разбираются в конце
    по сходству родителей (коэффициент Дайса), при равенстве — по позиции.

    :param min_height: минимальная высота сопоставляемых поддеревьев (листья имеют высоту 1)
    :return: соответствие, где каждая пара — корни или узлы изоморфных поддеревьев
    """
    ia, ib = _indexes(a, b)
    m = Mapping()
    q1, q2 = _HeightQueue(ia), _HeightQueue(ib)
    q1.push(a.root)
    q2.push(b.root)
    ambiguous: List[Tuple[int, int]] = []
    while min(q1.peek_height(), q2.peek_height()) >= min_height:
        if q1.peek_height() != q2.peek_height():
            taller = q1 if q1.peek_height() > q2.peek_height() else q2
            for n in taller.pop_level():
                taller.open(n)
            continue
        level1, level2 = q1.pop_level(), q2.pop_level()
        in_ambiguous1: Set[int] = set()
        in_ambiguous2: Set[int] = set()
        for t1 in level1:
            for t2 in level2:
                if ia.hash[t1] != ib.hash[t2]:
                    continue
                h = ia.hash[t1]
                if ia.hash_count.get(h, 0) > 1 or ib.hash_count.get(h, 0) > 1:
                    ambiguous.append((t1, t2))
                    in_ambiguous1.add(t1)
                    in_ambiguous2.add(t2)
                else:
                    _map_isomorphic(ia, ib, t1, t2, m)
        for t1 in level1:
            if t1 not in in_ambiguous1 and not m.has_src(t1):
                q1.open(t1)
        for t2 in level2:
            if t2 not in in_ambiguous2 and not m.has_dst(t2):
                q2.open(t2)
    ambiguous.sort(
        key=lambda p: (-_dice(ia, ib, a.parent(p[0]), b.parent(p[1]), m), ia.pos[p[0]], ib.pos[p[1]])
    )
    for t1, t2 in ambiguous:
        if not m.has_src(t1) and not m.has_dst(t2):
            _map_isomorphic(ia, ib, t1, t2, m)
    logger.debug("якоря: %d пар", len(m))
    return m


def containers_bottomup(a: Ast, b: Ast, anchors: Mapping, threshold: float = CONTAINER_THRESHOLD) -> Mapping:
    """
    Фаза контейнеров: снизу вверх сопоставляет несопоставленные нетерминалы одного типа,
    потомки которых разделяют общие якоря.

    Сходство пары — (общие сопоставленные потомки) / max(число потомков); пара берётся,
    если сходство не меньше threshold, из равных выбирается первая по прямому обходу.
    Корни сопоставляются всегда, если совместимы.

    :return: новое соответствие, расширяющее anchors
    """
    ia, ib = _indexes(a, b)
    m = anchors.copy()
    for t1 in a.postorder():
        node1 = a[t1]
        if t1 == a.root or m.has_src(t1) or node1.is_terminal:
            continue
        mapped_desc = [(d, m.dst(d)) for d in ia.descendants(t1) if m.has_src(d)]
        if not mapped_desc:
            continue
        best: Optional[int] = None
        best_sim = -1.0
        for t2 in ib.order:
            if m.has_dst(t2) or t2 == b.root or not compatible(node1, b[t2]):
                continue
            common = sum(1 for _, p in mapped_desc if p is not None and p != t2 and ib.contains(t2, p))
            sim = common / max(ia.size[t1] - 1, ib.size[t2] - 1, 1)
            if sim >= threshold and sim > best_sim:
                best, best_sim = t2, sim
        if best is not None:
            m.add(t1, best)
    if not m.has_src(a.root) and not m.has_dst(b.root) and compatible(a[a.root], b[b.root]):
        m.add(a.root, b.root)
    logger.debug("контейнеры: %d пар", len(m))
    return m


def _lcs(xs: Sequence[int], ys: Sequence[int], equal: Callable[[int, int], bool]) -> List[Tuple[int, int]]:
    """Наибольшая общая подпоследовательность; при равенстве длин сдвигается первый список."""
    n, k = len(xs), len(ys)
    table = [[0] * (k + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(k - 1, -1, -1):
            if equal(xs[i], ys[j]):
                table[i][j] = table[i + 1][j + 1] + 1
            else:
                table[i][j] = max(table[i + 1][j], table[i][j + 1])
    result: List[Tuple[int, int]] = []
    i = j = 0
    while i < n and j < k:
        if equal(xs[i], ys[j]):
            result.append((xs[i], ys[j]))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return result


def _recover_children(a: Ast, b: Ast, ia: _TreeIndex, ib: _TreeIndex, t1: int, t2: int, m: Mapping) -> List[int]:
    """Сопоставить несопоставленных детей пары; вернуть новые пары нетерминалов (по узлу из A)."""
    free1 = [c for c in a[t1].children if not m.has_src(c)]
    free2 = [c for c in b[t2].children if not m.has_dst(c)]
    if not free1 or not free2:
        return []
    added: List[int] = []
    for x, y in _lcs(free1, free2, lambda x, y: ia.hash[x] == ib.hash[y]):
        _map_isomorphic(ia, ib, x, y, m)
    free1 = [c for c in free1 if not m.has_src(c)]
    free2 = [c for c in free2 if not m.has_dst(c)]
    for x, y in _lcs(free1, free2, lambda x, y: compatible(a[x], b[y])):
        m.add(x, y)
        added.append(x)
    free1 = [c for c in free1 if not m.has_src(c)]
    free2 = [c for c in free2 if not m.has_dst(c)]
    for x in free1:
        same1 = [c for c in free1 if a[c].kind == a[x].kind]
        same2 = [c for c in free2 if compatible(a[x], b[c]) and not m.has_dst(c)]
        if len(same1) == 1 and len(same2) == 1:
            m.add(x, same2[0])
            added.append(x)
    return [x for x in added if not a[x].is_terminal]


def recover_descendants(a: Ast, b: Ast, m: Mapping) -> Mapping:
    """
    Фаза восстановления: для каждой сопоставленной пары-контейнера добавляет сопоставления
    ещё свободных потомков.

    Сначала дети сопоставляются сверху вниз (НОП по изоморфизму, НОП по типу, единственный
    тип), затем проход от глубоких контейнеров к корню жадно сопоставляет оставшихся
    потомков одного типа, так что внутри контейнеров не остаётся совместимых свободных пар.

    :return: новое соответствие, расширяющее m
    """
    ia, ib = _indexes(a, b)
    result = m.copy()
    work: Deque[int] = deque(n for n in ia.order if result.has_src(n) and not a[n].is_terminal)
    while work:
        t1 = work.popleft()
        t2 = result.dst(t1)
        if t2 is None:
            continue
        work.extend(_recover_children(a, b, ia, ib, t1, t2, result))
    for t1 in a.postorder():
        t2 = result.dst(t1)
        if t2 is None or a[t1].is_terminal:
            continue
        free2 = [d for d in ib.descendants(t2) if not result.has_dst(d)]
        if not free2:
            continue
        for d1 in ia.descendants(t1):
            if result.has_src(d1):
                continue
            options = [d2 for d2 in free2 if not result.has_dst(d2) and compatible(a[d1], b[d2])]
            if not options:
                continue
            same_value = [d2 for d2 in options if b[d2].value == a[d1].value]
            result.add(d1, (same_value or options)[0])
    logger.debug("восстановление: %d пар", len(result))
    return result


def _place(work: MutableTree, node: int, tgt: int, first_child: bool) -> None:
    if first_child:
        work.attach(node, tgt, 0)
    else:
        parent = work.parent(tgt)
        assert parent is not None
        work.attach(node, parent, work.index_of(tgt) + 1)


def _check_target(work: MutableTree, op: EditOp, moving: Optional[int]) -> None:
    tgt = op.tgt
    if tgt is None or tgt not in work:
        raise ScriptError(f"{op}: цель {tgt} не существует")
    if op.first_child:
        if work.is_terminal(tgt):
            raise ScriptError(f"{op}: нельзя вставить ребёнка в терминал {tgt}")
    elif tgt == VIRTUAL_ROOT:
        raise ScriptError(f"{op}: у виртуального корня нет соседей")
    if moving is not None and work.is_ancestor(moving, tgt):
        raise ScriptError(f"{op}: перемещение внутрь собственного поддерева")


def execute_op(work: MutableTree, op: EditOp) -> List[int]:
    """
    Выполнить одну инструкцию над рабочим деревом (с виртуальным корнем -1).

    :return: новые идентификаторы (для INS, в прямом порядке), иначе пустой список
    :raises ScriptError: висячая ссылка, перемещение внутрь себя, UPD нетерминала
    """
    if op.kind in (OpKind.MOV, OpKind.DEL):
        if op.src is None or op.src not in work or op.src == VIRTUAL_ROOT:
            raise ScriptError(f"{op}: узел {op.src} не существует")
    if op.kind is OpKind.MOV:
        assert op.src is not None and op.tgt is not None
        _check_target(work, op, op.src)
        work.detach(op.src)
        _place(work, op.src, op.tgt, op.first_child)
        return []
    if op.kind is OpKind.DEL:
        assert op.src is not None
        work.remove_subtree(op.src)
        return []
    if op.kind is OpKind.UPD:
        if op.tgt is None or op.tgt not in work:
            raise ScriptError(f"{op}: узел {op.tgt} не существует")
        if not work.is_terminal(op.tgt):
            raise ScriptError(f"{op}: UPD применим только к терминалам")
        work.set_value(op.tgt, op.value or "")
        return []
    if op.subtree is None:
        raise ScriptError(f"{op}: у INS нет поддерева")
    _check_target(work, op, None)
    assert op.tgt is not None
    if op.first_child:
        parent, position = op.tgt, 0
    else:
        host = work.parent(op.tgt)
        assert host is not None
        parent, position = host, work.index_of(op.tgt) + 1
    created: List[int] = []
    work.insert_copy(op.subtree, parent, position, on_node=lambda _, new: created.append(new))
    return created


def finish_tree(work: MutableTree) -> Ast:
    """Извлечь итоговое дерево из-под виртуального корня."""
    tops = work.children(VIRTUAL_ROOT)
    if len(tops) != 1:
        raise ScriptError(f"после применения у дерева {len(tops)} корней вместо одного")
    return work.to_ast(tops[0])


def apply_script(a: Ast, script: EditScript) -> Ast:
    """
    Применить скрипт к дереву; входное дерево не изменяется.

    Вставленные узлы получают новые идентификаторы max+1, max+2, …

    :raises ScriptError: висячая ссылка, перемещение внутрь себя, UPD нетерминала
    """
    work = MutableTree.from_ast(a, virtual_root=VIRTUAL_ROOT)
    for op in script:
        execute_op(work, op)
    return finish_tree(work)


class _ScriptBuilder:
    """Построение скрипта по соответствию (алгоритм Чавате с выравниванием детей)."""

    def __init__(self, a: Ast, b: Ast, m: Mapping) -> None:
        self.b = b
        self.work = MutableTree.from_ast(a, virtual_root=VIRTUAL_ROOT)
        self.w2b: Dict[int, int] = {VIRTUAL_ROOT: VIRTUAL_ROOT}
        self.b2w: Dict[int, int] = {VIRTUAL_ROOT: VIRTUAL_ROOT}
        for x, y in m:
            self.w2b[x] = y
            self.b2w[y] = x
        self.in_order_w: Set[int] = set()
        self.in_order_b: Set[int] = set()
        self.ops: List[EditOp] = []

    def b_parent(self, x: int) -> int:
        parent = self.b.parent(x)
        return VIRTUAL_ROOT if parent is None else parent

    def b_children(self, x: int) -> Tuple[int, ...]:
        return (self.b.root,) if x == VIRTUAL_ROOT else self.b[x].children

    def emit(self, op: EditOp) -> List[int]:
        self.ops.append(op)
        return execute_op(self.work, op)

    def find_target(self, x: int) -> Tuple[int, bool]:
        """Цель вставки для x: правый сосед партнёра последнего упорядоченного левого соседа."""
        y = self.b_parent(x)
        anchor: Optional[int] = None
        for sibling in self.b_children(y):
            if sibling == x:
                break
            if sibling in self.in_order_b:
                anchor = sibling
        if anchor is None:
            return self.b2w[y], True
        return self.b2w[anchor], False

    def pruned(self, x: int) -> Tuple[Ast, List[int]]:
        """Поддерево x из несопоставленных узлов и их идентификаторы в B (прямой порядок)."""
        kinds: Dict[int, str] = {}
        values: Dict[int, Optional[str]] = {}
        children: Dict[int, List[int]] = {}
        order: List[int] = []
        stack = [x]
        while stack:
            current = stack.pop()
            order.append(current)
            node = self.b[current]
            kinds[current] = node.kind
            values[current] = node.value
            kept = [c for c in node.children if c not in self.b2w]
            children[current] = kept
            stack.extend(reversed(kept))
        return Ast.from_children(x, kinds, values, children).renumbered(), order

    def align_children(self, w: int, x: int) -> None:
        w_kids = self.work.children(w)
        x_kids = self.b_children(x)
        self.in_order_w.difference_update(w_kids)
        self.in_order_b.difference_update(x_kids)
        s1 = [c for c in w_kids if c in self.w2b and self.b_parent(self.w2b[c]) == x]
        s2 = [c for c in x_kids if c in self.b2w and self.work.parent(self.b2w[c]) == w]
        kept = _lcs(s1, s2, lambda p, q: self.w2b[p] == q)
        for p, q in kept:
            self.in_order_w.add(p)
            self.in_order_b.add(q)
        kept_b = {q for _, q in kept}
        for q in s2:
            if q in kept_b:
                continue
            p = self.b2w[q]
            tgt, first = self.find_target(q)
            self.emit(EditOp.mov(p, tgt, first_child=first))
            self.in_order_w.add(p)
            self.in_order_b.add(q)

    def visit(self, x: int) -> None:
        y = self.b_parent(x)
        if x not in self.b2w:
            tgt, first = self.find_target(x)
            subtree, b_ids = self.pruned(x)
            created = self.emit(EditOp.insert(subtree, tgt, first_child=first))
            for q, p in zip(b_ids, created):
                self.w2b[p] = q
                self.b2w[q] = p
                self.in_order_w.add(p)
                self.in_order_b.add(q)
        else:
            w = self.b2w[x]
            target_value = self.b[x].value
            if target_value is not None and self.work.value(w) != target_value:
                self.emit(EditOp.update(target_value, w))
            if self.work.parent(w) != self.b2w[y]:
                tgt, first = self.find_target(x)
                self.emit(EditOp.mov(w, tgt, first_child=first))
                self.in_order_w.add(w)
                self.in_order_b.add(x)
        if not self.b[x].is_terminal:
            self.align_children(self.b2w[x], x)

    def build(self) -> EditScript:
        self.align_children(VIRTUAL_ROOT, VIRTUAL_ROOT)
        queue: Deque[int] = deque([self.b.root])
        while queue:
            x = queue.popleft()
            self.visit(x)
            queue.extend(self.b[x].children)
        doomed: List[int] = []
        stack: List[Tuple[int, bool]] = [(VIRTUAL_ROOT, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                if node not in self.w2b:
                    parent = self.work.parent(node)
                    if parent is not None and parent in self.w2b:
                        doomed.append(node)
                continue
            stack.append((node, True))
            for c in reversed(self.work.children(node)):
                stack.append((c, False))
        for node in doomed:
            self.emit(EditOp.delete(node))
        return EditScript(tuple(self.ops))


def generate_script(a: Ast, b: Ast, m: Mapping) -> EditScript:
    """
    Построить скрипт правок по соответствию.

    Порядок: UPD/INS/MOV в порядке обхода B в ширину, затем DEL в обратном порядке.
    Скрипт корректен, но не обязательно минимален.
    """
    for x, y in m:
        if x not in a or y not in b:
            raise UnknownNodeError(f"пара ({x}, {y}) ссылается на несуществующий узел")
    return _ScriptBuilder(a, b, m).build()


def compute_mapping(a: Ast, b: Ast) -> Mapping:
    """Три фазы сопоставления подряд."""
    anchors = anchors_topdown(a, b)
    containers = containers_bottomup(a, b, anchors)
    return recover_descendants(a, b, containers)


def diff(a: Ast, b: Ast) -> EditScript:
    """
    Скрипт правок, превращающий a в дерево, изоморфное b.

    Пример: diff(T, T) == пустой скрипт.
    """
    script = generate_script(a, b, compute_mapping(a, b))
    logger.debug("diff: %d операций", len(script))
    return script

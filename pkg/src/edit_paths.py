"""
Правки как пути в AST: расширение дерева служебными узлами, перевод скриптов правок
в операции над путями и обратно, перечисление всех допустимых кандидатов.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple

from src.ast_core import Ast, AstPath, MutableTree, path_between
from src.errors import InvalidTreeError, ScriptError, StalePathError, UnrepresentableError
from src.tree_diff import VIRTUAL_ROOT, EditOp, EditScript, OpKind, execute_op

logger = logging.getLogger(__name__)

PLACEHOLDER = "Placeholder"
DEL_NODE = "DEL"
UPD_NODE = "UPD"
INS_NODE = "INS"
SPECIAL_KINDS: FrozenSet[str] = frozenset({PLACEHOLDER, DEL_NODE, UPD_NODE, INS_NODE})


class OperationKind(str, Enum):
    """Вид операции над путём; удаление записывается как MOV в узел DEL."""

    MOV = "MOV"
    UPD = "UPD"
    INS = "INS"


class EncodingMode(str, Enum):
    """
    TARGET — пути в статическом расширенном P_before (то, что предсказывает модель);
    CONTEXT — пути в меняющемся C_before, вставка кодируется путём от INS к корню вставки.
    """

    TARGET = "target"
    CONTEXT = "context"


@dataclass(frozen=True)
class NodeFeature:
    kind: str
    child_index: int
    value: Optional[str] = None


@dataclass(frozen=True)
class PathOperation:
    """
    Операция над путём от n_s (источник) к n_t (цель).

    MOV/INS: n_s (или его копия) становится правым соседом n_t, либо первым ребёнком,
    если n_t — Placeholder. UPD: value(n_t) := value(n_s).
    features — снимок (тип, индекс, значение) узлов пути на момент построения.
    """

    kind: OperationKind
    path: AstPath
    features: Tuple[NodeFeature, ...] = field(default=(), compare=False, hash=False)

    @property
    def source(self) -> int:
        return self.path.source

    @property
    def target(self) -> int:
        return self.path.target

    @property
    def key(self) -> Tuple[OperationKind, int, int]:
        return self.kind, self.source, self.target


@dataclass(frozen=True)
class AugmentedAst:
    """
    Дерево, расширенное служебными узлами.

    Атрибуты:
        tree: расширенное дерево (идентификаторы исходных узлов сохранены).
        origin: исходное дерево.
        placeholder_ids: нетерминал исходного дерева -> его Placeholder.
        del_node, upd_node, ins_node: служебные дети корня.
        upd_children: значение из контекстного UPD -> терминал-ребёнок узла UPD.
        ins_children: корни поддеревьев-детей узла INS.
    """

    tree: Ast
    origin: Ast
    placeholder_ids: Mapping[int, int]
    del_node: int
    upd_node: int
    ins_node: int
    upd_children: Mapping[str, int]
    ins_children: Tuple[int, ...]

    def is_original(self, node_id: int) -> bool:
        return node_id in self.origin


def _check_reserved(tree: Ast) -> None:
    clash = sorted({tree[n].kind for n in tree.preorder()} & SPECIAL_KINDS)
    if clash:
        raise InvalidTreeError(f"типы {clash} зарезервированы для служебных узлов")
    if tree[tree.root].is_terminal:
        raise InvalidTreeError("корень расширяемого дерева должен быть нетерминалом")


def _context_material(
    context_script: EditScript, context_before: Ast
) -> Tuple[List[Tuple[str, str]], List[Ast]]:
    """Значения и типы узлов из UPD, поддеревья из INS — в порядке скрипта, без повторов."""
    work = MutableTree.from_ast(context_before, virtual_root=VIRTUAL_ROOT)
    updates: List[Tuple[str, str]] = []
    seen_values = set()
    inserts: List[Ast] = []
    seen_shapes = set()
    for op in context_script:
        if op.kind is OpKind.UPD and op.tgt is not None and op.tgt in work:
            value = op.value or ""
            if value not in seen_values:
                seen_values.add(value)
                updates.append((value, work.kind(op.tgt)))
        if op.kind is OpKind.INS and op.subtree is not None:
            shape = op.subtree.shape()
            if shape not in seen_shapes:
                seen_shapes.add(shape)
                inserts.append(op.subtree)
        execute_op(work, op)
    return updates, inserts


def augment(
    tree: Ast, context_script: Optional[EditScript] = None, context_before: Optional[Ast] = None
) -> AugmentedAst:
    """
    Расширить дерево: Placeholder первым ребёнком каждого нетерминала, DEL/UPD/INS
    последними детьми корня.

    Узел UPD получает по терминалу на каждое различное значение из UPD контекста (тип —
    тип обновлённого узла), узел INS — копии вставленных в контексте поддеревьев.

    :param tree: исходное дерево с нетерминальным корнем
    :param context_script: скрипт правок контекста Δ_C
    :param context_before: дерево, к которому относится context_script (по умолчанию tree)
    :raises InvalidTreeError: зарезервированные типы в дереве или терминальный корень
    :raises ScriptError: скрипт контекста ссылается на несуществующие узлы
    """
    _check_reserved(tree)
    updates: List[Tuple[str, str]] = []
    inserts: List[Ast] = []
    if context_script is not None and len(context_script):
        updates, inserts = _context_material(context_script, tree if context_before is None else context_before)
    work = MutableTree.from_ast(tree)
    placeholders: Dict[int, int] = {}
    for node_id in tree.preorder():
        if not tree[node_id].is_terminal:
            placeholders[node_id] = work.add_node(PLACEHOLDER, None, node_id, 0)
    root = tree.root
    tail = len(work.children(root))
    del_node = work.add_node(DEL_NODE, None, root, tail)
    upd_node = work.add_node(UPD_NODE, None, root, tail + 1)
    upd_children: Dict[str, int] = {}
    for i, (value, kind) in enumerate(updates):
        upd_children[value] = work.add_node(kind, value, upd_node, i)
    ins_node = work.add_node(INS_NODE, None, root, tail + 2)
    ins_children = tuple(work.insert_copy(subtree, ins_node, i) for i, subtree in enumerate(inserts))
    return AugmentedAst(
        tree=work.to_ast(root),
        origin=tree,
        placeholder_ids=placeholders,
        del_node=del_node,
        upd_node=upd_node,
        ins_node=ins_node,
        upd_children=upd_children,
        ins_children=ins_children,
    )


def strip_special(tree: Ast) -> Ast:
    """Удалить из дерева Placeholder и служебные узлы вместе с их поддеревьями."""
    work = MutableTree.from_ast(tree)
    return work.to_ast(tree.root, skip=lambda n: work.kind(n) in SPECIAL_KINDS)


def strip(aug: AugmentedAst) -> Ast:
    """Обратное к augment: strip(augment(T)) == T."""
    return strip_special(aug.tree)


def _features(tree: Ast, nodes: Sequence[int]) -> Tuple[NodeFeature, ...]:
    return tuple(NodeFeature(tree[n].kind, tree[n].child_index, tree[n].value) for n in nodes)


def _static_op(aug: AugmentedAst, kind: OperationKind, source: int, target: int) -> PathOperation:
    path = path_between(aug.tree, source, target)
    return PathOperation(kind, path, _features(aug.tree, path.nodes))


class _Rules:
    """Правила допустимости кандидатов в статическом расширенном дереве."""

    def __init__(self, aug: AugmentedAst) -> None:
        self.aug = aug
        tree = aug.tree
        self.order = tree.preorder()
        self.pos = {n: i for i, n in enumerate(self.order)}
        self.size: Dict[int, int] = {}
        for n in tree.postorder():
            self.size[n] = 1 + sum(self.size[c] for c in tree[n].children)
        root = tree.root
        placeholders = set(aug.placeholder_ids.values())
        self.originals = [n for n in self.order if n in aug.origin]
        self.movable = [n for n in self.originals if n != root]
        self.ins_targets = [n for n in self.order if (n in aug.origin and n != root) or n in placeholders]
        self.ins_target_set = frozenset(self.ins_targets)
        self.mov_targets = [n for n in self.order if n in self.ins_target_set or n == aug.del_node]
        self.ins_sources = self.movable + list(aug.ins_children)
        self.terminals = [n for n in self.originals if tree[n].is_terminal]
        self.terminal_set = frozenset(self.terminals)
        self.upd_sources = self.terminals + sorted(aug.upd_children.values(), key=self.pos.__getitem__)

    def inside(self, ancestor: int, node_id: int) -> bool:
        p = self.pos[ancestor]
        return p <= self.pos[node_id] < p + self.size[ancestor]

    def is_mov(self, s: int, t: int) -> bool:
        if s not in self.aug.origin or s == self.aug.tree.root:
            return False
        if t != self.aug.del_node and t not in self.ins_target_set:
            return False
        return not self.inside(s, t)

    def is_ins(self, s: int, t: int) -> bool:
        if t not in self.ins_target_set:
            return False
        if s in self.aug.ins_children:
            return True
        return s in self.aug.origin and s != self.aug.tree.root and not self.inside(s, t)

    def is_upd(self, s: int, t: int) -> bool:
        if t not in self.terminal_set or s == t:
            return False
        if s not in self.terminal_set and s not in self.aug.upd_children.values():
            return False
        return self.aug.tree[s].value != self.aug.tree[t].value


class CandidateSet(Sequence[PathOperation]):
    """
    Упорядоченный список кандидатов с поиском индекса по (вид, источник, цель).

    Пути, общие для MOV, INS и UPD, хранятся один раз: path_slots[i] — номер
    уникального пути кандидата i в unique_paths.
    """

    def __init__(self, ops: Sequence[PathOperation]) -> None:
        self._ops: Tuple[PathOperation, ...] = tuple(ops)
        self._index = {op.key: i for i, op in enumerate(self._ops)}
        slots: Dict[Tuple[int, int], int] = {}
        unique: List[PathOperation] = []
        path_slots: List[int] = []
        for op in self._ops:
            endpoints = (op.source, op.target)
            if endpoints not in slots:
                slots[endpoints] = len(unique)
                unique.append(op)
            path_slots.append(slots[endpoints])
        self.unique_paths: Tuple[PathOperation, ...] = tuple(unique)
        self.path_slots: Tuple[int, ...] = tuple(path_slots)

    def __getitem__(self, index):  # type: ignore[override]
        return self._ops[index]

    def __len__(self) -> int:
        return len(self._ops)

    def __iter__(self) -> Iterator[PathOperation]:
        return iter(self._ops)

    def find(self, kind: OperationKind, source: int, target: int) -> Optional[int]:
        return self._index.get((kind, source, target))

    def index_of(self, op: PathOperation) -> int:
        """
        :raises KeyError: операции нет среди кандидатов
        """
        index = self._index.get(op.key)
        if index is None:
            raise KeyError(f"операция {format_path_op(op)} отсутствует среди кандидатов")
        return index


def enumerate_candidates(aug: AugmentedAst) -> CandidateSet:
    """
    Все допустимые операции над путями в расширенном P_before, детерминированно.

    Порядок: блок MOV, затем UPD, затем INS; внутри блока — по прямому обходу источника,
    затем цели. MOV: источник — некорневой исходный узел, цель — исходный некорневой узел,
    Placeholder или DEL вне поддерева источника.
    UPD: терминал или ребёнок UPD -> исходный терминал с другим значением.
    INS: некорневой исходный узел или ребёнок INS -> цели MOV кроме DEL.
    """
    rules = _Rules(aug)
    ops: List[PathOperation] = []
    for s in rules.movable:
        for t in rules.mov_targets:
            if rules.is_mov(s, t):
                ops.append(_static_op(aug, OperationKind.MOV, s, t))
    for s in rules.upd_sources:
        for t in rules.terminals:
            if rules.is_upd(s, t):
                ops.append(_static_op(aug, OperationKind.UPD, s, t))
    for s in rules.ins_sources:
        for t in rules.ins_targets:
            if rules.is_ins(s, t):
                ops.append(_static_op(aug, OperationKind.INS, s, t))
    logger.debug("кандидатов: %d", len(ops))
    return CandidateSet(ops)


class _PathExecutor:
    """Последовательное выполнение операций над живой копией расширенного дерева."""

    def __init__(self, aug: AugmentedAst) -> None:
        self.aug = aug
        self.live = MutableTree.from_ast(aug.tree)
        self.placeholder_of: Dict[int, int] = dict(aug.placeholder_ids)

    def _require(self, *nodes: int) -> None:
        for n in nodes:
            if n not in self.live:
                raise StalePathError(f"узел {n} уже удалён")

    def _in_special_region(self, node_id: int) -> bool:
        current: Optional[int] = node_id
        while current is not None:
            if current in (self.aug.upd_node, self.aug.ins_node):
                return True
            current = self.live.parent(current)
        return False

    def _is_service(self, node_id: int) -> bool:
        if self.live.kind(node_id) == PLACEHOLDER or node_id == self.aug.del_node:
            return True
        return self._in_special_region(node_id)

    def _slot(self, target: int) -> Tuple[int, int]:
        if target == self.aug.tree.root or target == self.aug.del_node or self._in_special_region(target):
            raise ScriptError(f"узел {target} не может быть целью вставки")
        parent = self.live.parent(target)
        assert parent is not None
        return parent, self.live.index_of(target) + 1

    def path(self, source: int, target: int) -> PathOperation:
        """Путь и снимок признаков в текущем живом дереве (вид задаётся позже)."""
        nodes = self.live.path(source, target)
        features = tuple(NodeFeature(self.live.kind(n), self.live.index_of(n), self.live.value(n)) for n in nodes)
        return PathOperation(OperationKind.MOV, AstPath(nodes), features)

    def move(self, source: int, target: int) -> None:
        self._require(source, target)
        if source == self.aug.tree.root or self._is_service(source):
            raise ScriptError(f"узел {source} нельзя перемещать")
        if target == self.aug.del_node:
            self.live.remove_subtree(source)
            return
        if self.live.is_ancestor(source, target):
            raise ScriptError(f"перемещение {source} внутрь собственного поддерева")
        self.live.detach(source)
        parent, position = self._slot(target)
        self.live.attach(source, parent, position)

    def update(self, source: int, target: int) -> None:
        self._require(source, target)
        if not self.live.is_terminal(source) or not self.live.is_terminal(target):
            raise ScriptError(f"UPD {source} -> {target}: оба конца должны быть терминалами")
        if self._in_special_region(target):
            raise ScriptError(f"служебный узел {target} нельзя обновлять")
        self.live.set_value(target, self.live.value(source) or "")

    def insert_tree(self, subtree: Ast, target: int) -> List[int]:
        """Вставить копию subtree справа от target; новые нетерминалы получают Placeholder."""
        parent, position = self._slot(target)
        created: List[int] = []
        self.live.insert_copy(subtree, parent, position, on_node=lambda _, new: created.append(new))
        for n in created:
            if not self.live.is_terminal(n):
                self.placeholder_of[n] = self.live.add_node(PLACEHOLDER, None, n, 0)
        return created

    def insert(self, source: int, target: int) -> List[int]:
        self._require(source, target)
        if source == self.aug.tree.root or self.live.kind(source) in SPECIAL_KINDS:
            raise ScriptError(f"узел {source} нельзя копировать")
        copied = self.live.to_ast(source, skip=lambda n: self.live.kind(n) in SPECIAL_KINDS)
        return self.insert_tree(copied, target)

    def apply(self, op: PathOperation) -> None:
        if op.kind is OperationKind.MOV:
            self.move(op.source, op.target)
        elif op.kind is OperationKind.UPD:
            self.update(op.source, op.target)
        else:
            self.insert(op.source, op.target)

    def result(self) -> Ast:
        return self.live.to_ast(self.aug.tree.root, skip=lambda n: self.live.kind(n) in SPECIAL_KINDS)


def apply_path_ops(aug: AugmentedAst, ops: Sequence[PathOperation]) -> Ast:
    """
    Выполнить операции по порядку и вернуть дерево без расширения.

    Концы путей отслеживаются по идентификаторам живых узлов.

    :raises StalePathError: конец пути удалён предыдущей операцией
    :raises ScriptError: перемещение внутрь себя, UPD нетерминала, недопустимая цель
    """
    executor = _PathExecutor(aug)
    for op in ops:
        executor.apply(op)
    return executor.result()


def _unrepresentable(op: EditOp, reason: str) -> UnrepresentableError:
    return UnrepresentableError(f"{op}: {reason}")


def _static_target(aug: AugmentedAst, op: EditOp) -> int:
    assert op.tgt is not None
    if op.first_child:
        if op.tgt not in aug.placeholder_ids:
            raise _unrepresentable(op, "первый ребёнок узла вне исходного дерева")
        return aug.placeholder_ids[op.tgt]
    if op.tgt not in aug.origin:
        raise _unrepresentable(op, f"цель {op.tgt} отсутствует в исходном дереве")
    return op.tgt


def _nearest(aug: AugmentedAst, rules: _Rules, options: Sequence[int], target: int) -> Optional[int]:
    if not options:
        return None
    return min(options, key=lambda n: (len(path_between(aug.tree, n, target)), rules.pos[n]))


def _target_ops(aug: AugmentedAst, script: EditScript) -> List[PathOperation]:
    rules = _Rules(aug)
    plain = MutableTree.from_ast(aug.origin, virtual_root=VIRTUAL_ROOT)
    result: List[PathOperation] = []
    for op in script:
        if op.kind in (OpKind.MOV, OpKind.DEL):
            if op.src not in aug.origin:
                raise _unrepresentable(op, f"узел {op.src} отсутствует в исходном дереве")
            assert op.src is not None
            source = op.src
            target = aug.del_node if op.kind is OpKind.DEL else _static_target(aug, op)
            if not rules.is_mov(source, target):
                raise _unrepresentable(op, "нет соответствующего кандидата MOV")
            kind = OperationKind.MOV
        elif op.kind is OpKind.UPD:
            assert op.tgt is not None
            if op.tgt not in aug.origin:
                raise _unrepresentable(op, f"узел {op.tgt} отсутствует в исходном дереве")
            target = op.tgt
            kept = aug.upd_children.get(op.value or "")
            if kept is not None and rules.is_upd(kept, target):
                source = kept
            else:
                options = [
                    n
                    for n in rules.terminals
                    if n in plain and plain.value(n) == op.value and rules.is_upd(n, target)
                ]
                found = _nearest(aug, rules, options, target)
                if found is None:
                    raise _unrepresentable(op, f"значение {op.value!r} не встречается в дереве")
                source = found
            kind = OperationKind.UPD
        else:
            assert op.subtree is not None
            target = _static_target(aug, op)
            shape = op.subtree.shape()
            found = next(
                (c for c in aug.ins_children if aug.tree.shape(c) == shape and rules.is_ins(c, target)), None
            )
            if found is None:
                options = [
                    n
                    for n in rules.movable
                    if n in plain and rules.is_ins(n, target) and plain.to_ast(n).shape() == shape
                ]
                found = _nearest(aug, rules, options, target)
            if found is None:
                raise _unrepresentable(op, "вставляемое поддерево отсутствует в расширенном дереве")
            source = found
            kind = OperationKind.INS
        execute_op(plain, op)
        result.append(_static_op(aug, kind, source, target))
    return result


def _context_ops(aug: AugmentedAst, script: EditScript) -> List[PathOperation]:
    plain = MutableTree.from_ast(aug.origin, virtual_root=VIRTUAL_ROOT)
    executor = _PathExecutor(aug)
    to_aug: Dict[int, int] = {n: n for n in aug.origin.preorder()}

    def resolve(op: EditOp, node_id: Optional[int]) -> int:
        if node_id is None or node_id not in to_aug:
            raise _unrepresentable(op, f"узел {node_id} не выражается в расширенном дереве")
        return to_aug[node_id]

    def target_of(op: EditOp) -> int:
        if op.first_child:
            parent = resolve(op, op.tgt)
            if parent not in executor.placeholder_of:
                raise _unrepresentable(op, f"у узла {parent} нет Placeholder")
            return executor.placeholder_of[parent]
        return resolve(op, op.tgt)

    result: List[PathOperation] = []
    for op in script:
        if op.kind is OpKind.MOV:
            source, target = resolve(op, op.src), target_of(op)
            snapshot = executor.path(source, target)
            executor.move(source, target)
            kind = OperationKind.MOV
        elif op.kind is OpKind.DEL:
            source = resolve(op, op.src)
            snapshot = executor.path(source, aug.del_node)
            executor.move(source, aug.del_node)
            kind = OperationKind.MOV
        elif op.kind is OpKind.UPD:
            source = aug.upd_children.get(op.value or "", -1)
            if source < 0:
                raise _unrepresentable(op, f"значение {op.value!r} не добавлено к узлу UPD")
            target = resolve(op, op.tgt)
            snapshot = executor.path(source, target)
            executor.update(source, target)
            kind = OperationKind.UPD
        else:
            assert op.subtree is not None
            target = target_of(op)
            created = executor.insert_tree(op.subtree, target)
            snapshot = executor.path(aug.ins_node, created[0])
            kind = OperationKind.INS
        created_plain = execute_op(plain, op)
        if op.kind is OpKind.INS:
            to_aug.update(zip(created_plain, created))
        result.append(PathOperation(kind, snapshot.path, snapshot.features))
    return result


def script_to_path_ops(
    aug: AugmentedAst, script: EditScript, mode: EncodingMode = EncodingMode.TARGET
) -> List[PathOperation]:
    """
    Перевести скрипт правок в операции над путями (по одной на инструкцию, порядок сохраняется).

    TARGET: пути в статическом aug.tree, DEL -> MOV в узел DEL; источник UPD — ребёнок UPD
    с нужным значением, иначе ближайший терминал с этим живым значением; источник INS —
    изоморфный ребёнок INS, иначе ближайший узел с изоморфным живым поддеревом.
    CONTEXT: пути в меняющемся дереве, вставка — путь от INS к корню вставленного поддерева.

    :param aug: расширение дерева, к которому относится script
    :raises UnrepresentableError: инструкцию нельзя выразить путём в расширенном дереве
    """
    if mode is EncodingMode.TARGET:
        return _target_ops(aug, script)
    return _context_ops(aug, script)


def is_representable(aug: AugmentedAst, script: EditScript) -> bool:
    """Скрипт выражается путями в aug (генерация кода с нуля не требуется)."""
    try:
        script_to_path_ops(aug, script)
    except UnrepresentableError as e:
        logger.debug("непредставимо: %s", e)
        return False
    return True


def format_path_op(op: PathOperation, *, with_ids: bool = False) -> str:
    """`MOV Expr[1] -> Arg[0] -> ArgList[1]`; with_ids добавляет `  # <s> -> <t>`."""
    text = f"{op.kind.value} " + " -> ".join(f"{f.kind}[{f.child_index}]" for f in op.features)
    if with_ids:
        text += f"  # {op.source} -> {op.target}"
    return text


def format_candidates(candidates: CandidateSet) -> str:
    """Нумерованный список кандидатов, по одному в строке."""
    return "".join(f"{i}\t{format_path_op(op, with_ids=True)}\n" for i, op in enumerate(candidates))

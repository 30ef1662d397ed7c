"""
Синтетические данные: случайные деревья и пары для проверок свойств и корпус
шаблонных правок на демонстрационном языке.
"""

import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.ast_core import Ast, MutableTree
from src.dataset import EditSpan, format_span_file
from src.errors import DatasetError

logger = logging.getLogger(__name__)

RANDOM_NONTERMINALS = ("Block", "Call", "ArgList", "Arg", "Binary")
RANDOM_TERMINALS = ("Name", "Literal")
RANDOM_VALUES = ("a", "b", "c", "d", "e", "f")


def random_tree(rng: np.random.Generator, max_nodes: int = 20) -> Ast:
    """
    Случайное дерево от 1 до max_nodes узлов с нетерминальным корнем Block.

    Узлы добавляются по одному под случайный нетерминал на случайную позицию;
    идентификаторы — по прямому обходу.
    """
    size = int(rng.integers(1, max_nodes + 1))
    kinds: Dict[int, str] = {0: "Block"}
    values: Dict[int, Optional[str]] = {0: None}
    children: Dict[int, List[int]] = {0: []}
    nonterminals = [0]
    for node_id in range(1, size):
        parent = nonterminals[int(rng.integers(len(nonterminals)))]
        if rng.random() < 0.5:
            kinds[node_id] = RANDOM_TERMINALS[int(rng.integers(len(RANDOM_TERMINALS)))]
            values[node_id] = RANDOM_VALUES[int(rng.integers(len(RANDOM_VALUES)))]
        else:
            kinds[node_id] = RANDOM_NONTERMINALS[int(rng.integers(len(RANDOM_NONTERMINALS)))]
            values[node_id] = None
            children[node_id] = []
            nonterminals.append(node_id)
        siblings = children[parent]
        siblings.insert(int(rng.integers(len(siblings) + 1)), node_id)
    return Ast.from_children(0, kinds, values, children).renumbered()


def _mutate(work: MutableTree, root: int, rng: np.random.Generator) -> None:
    nodes = work.subtree_ids(root)
    non_root = [n for n in nodes if n != root]
    nonterminals = [n for n in nodes if not work.is_terminal(n)]
    action = int(rng.integers(4))
    if action == 0:
        terminals = [n for n in nodes if work.is_terminal(n)]
        if terminals:
            node = terminals[int(rng.integers(len(terminals)))]
            work.set_value(node, RANDOM_VALUES[int(rng.integers(len(RANDOM_VALUES)))])
    elif action == 1 and non_root:
        work.remove_subtree(non_root[int(rng.integers(len(non_root)))])
    elif action == 2 and non_root:
        node = non_root[int(rng.integers(len(non_root)))]
        hosts = [n for n in nonterminals if not work.is_ancestor(node, n)]
        work.detach(node)
        host = hosts[int(rng.integers(len(hosts)))]
        work.attach(node, host, int(rng.integers(len(work.children(host)) + 1)))
    else:
        host = nonterminals[int(rng.integers(len(nonterminals)))]
        position = int(rng.integers(len(work.children(host)) + 1))
        if rng.random() < 0.5:
            value = RANDOM_VALUES[int(rng.integers(len(RANDOM_VALUES)))]
            work.add_node(RANDOM_TERMINALS[int(rng.integers(len(RANDOM_TERMINALS)))], value, host, position)
        else:
            work.add_node(RANDOM_NONTERMINALS[int(rng.integers(len(RANDOM_NONTERMINALS)))], None, host, position)


def random_pair(rng: np.random.Generator, max_nodes: int = 20, edits: int = 3) -> Tuple[Ast, Ast]:
    """
    Случайная пара (a, b): b получается из a несколькими случайными правками
    (обновление, удаление, перемещение, вставка) и перенумеровывается.
    """
    a = random_tree(rng, max_nodes)
    work = MutableTree.from_ast(a)
    for _ in range(int(rng.integers(0, edits + 1))):
        _mutate(work, a.root, rng)
    return a, work.to_ast(a.root).renumbered()


_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "so", "ta", "vi", "zu", "pe", "do", "gi")
_SUFFIXES = ("", "Count", "Item", "Value", "List", "Name")


def fresh_name(rng: np.random.Generator, taken: Optional[set] = None) -> str:
    """Случайный идентификатор из слогов; не повторяет уже занятые."""
    taken = taken if taken is not None else set()
    while True:
        parts = [_SYLLABLES[int(rng.integers(len(_SYLLABLES)))] for _ in range(int(rng.integers(2, 4)))]
        name = "".join(parts) + _SUFFIXES[int(rng.integers(len(_SUFFIXES)))]
        if name not in taken:
            taken.add(name)
            return name


@dataclass(frozen=True)
class FamilyPair:
    """Правка контекста и правка P одного шаблона (каждая — список строк до/после)."""

    context_before: List[str]
    context_after: List[str]
    p_before: List[str]
    p_after: List[str]


def _swap_args(rng: np.random.Generator, names: set) -> FamilyPair:
    f = fresh_name(rng, names)
    a, b, c, d, u, v = (fresh_name(rng, names) for _ in range(6))
    return FamilyPair(
        [f"{u} = {f}({a}, {b});"],
        [f"{u} = {f}({b}, {a});"],
        [f"{v} = {f}({c}, {d});"],
        [f"{v} = {f}({d}, {c});"],
    )


def _rename_same(rng: np.random.Generator, names: set) -> FamilyPair:
    old, new, a, b, x, y = (fresh_name(rng, names) for _ in range(6))
    return FamilyPair(
        [f"{x} = {old}({a});"],
        [f"{x} = {new}({a});"],
        [f"{y} = {old}({b});"],
        [f"{y} = {new}({b});"],
    )


def _rename_argument(rng: np.random.Generator, names: set) -> FamilyPair:
    g, h, k, a, b, target = (fresh_name(rng, names) for _ in range(6))
    return FamilyPair(
        [f"{k} = {g}({a});"],
        [f"{k} = {g}({target});"],
        [f"{h}({b});"],
        [f"{h}({target});"],
    )


def _insert_arg(rng: np.random.Generator, names: set) -> FamilyPair:
    f, g, a, b, z = (fresh_name(rng, names) for _ in range(5))
    return FamilyPair(
        [f"{f}({a});"],
        [f"{f}({a}, {z});"],
        [f"{g}({b});"],
        [f"{g}({b}, {z});"],
    )


def _unwrap_if(rng: np.random.Generator, names: set) -> FamilyPair:
    c1, c2, f, x, y, a, b = (fresh_name(rng, names) for _ in range(7))
    return FamilyPair(
        [f"if ({c1}) {{", f"  {x} = {f}({a});", "}"],
        [f"{x} = {f}({a});"],
        [f"if ({c2}) {{", f"  {y} = {f}({b});", "}"],
        [f"{y} = {f}({b});"],
    )


def _reorder_block(rng: np.random.Generator, names: set) -> FamilyPair:
    log, save, c1, c2, a, b = (fresh_name(rng, names) for _ in range(6))
    return FamilyPair(
        [f"if ({c1}) {{", f"  {log}({a});", f"  {save}({a});", "}"],
        [f"if ({c1}) {{", f"  {save}({a});", f"  {log}({a});", "}"],
        [f"if ({c2}) {{", f"  {log}({b});", f"  {save}({b});", "}"],
        [f"if ({c2}) {{", f"  {save}({b});", f"  {log}({b});", "}"],
    )


FAMILIES: Dict[str, Callable[[np.random.Generator, set], FamilyPair]] = {
    "swap": _swap_args,
    "rename": _rename_same,
    "rename-arg": _rename_argument,
    "insert-arg": _insert_arg,
    "unwrap": _unwrap_if,
    "reorder": _reorder_block,
}


def _filler(rng: np.random.Generator, names: set, count: int) -> List[str]:
    lines = []
    for _ in range(count):
        target, call, arg = (fresh_name(rng, names) for _ in range(3))
        lines.append(f"{target} = {call}({arg});")
    return lines


def generate_pair(rng: np.random.Generator, family: str) -> Tuple[str, str, EditSpan]:
    """
    Пара файлов одного шаблона: посторонние строки, правка контекста над P, правка P,
    посторонние строки. Посторонние строки в обеих версиях одинаковы.

    :raises KeyError: неизвестный шаблон
    """
    names: set = set()
    pair = FAMILIES[family](rng, names)
    above = _filler(rng, names, int(rng.integers(0, 3)))
    below = _filler(rng, names, int(rng.integers(0, 3)))
    before = above + pair.context_before + pair.p_before + below
    after = above + pair.context_after + pair.p_after + below
    b_start = len(above) + len(pair.context_before) + 1
    a_start = len(above) + len(pair.context_after) + 1
    span = EditSpan(b_start, b_start + len(pair.p_before) - 1, a_start, a_start + len(pair.p_after) - 1)
    return "\n".join(before) + "\n", "\n".join(after) + "\n", span


def generate_corpus(
    out_dir: str,
    projects: int = 4,
    pairs: int = 25,
    seed: int = 0,
    families: Optional[Sequence[str]] = None,
) -> int:
    """
    Записать корпус `<project>/<pair-id>/{before.toy, after.toy, span.txt}`.

    :param pairs: пар на проект
    :param families: шаблоны, из которых выбирается каждая пара (по умолчанию все)
    :raises DatasetError: неизвестный шаблон или пустой список шаблонов
    :return: число записанных пар
    """
    chosen = list(families) if families is not None else list(FAMILIES)
    unknown = [f for f in chosen if f not in FAMILIES]
    if unknown or not chosen:
        raise DatasetError(f"неизвестные шаблоны: {unknown}; доступны {sorted(FAMILIES)}")
    rng = np.random.default_rng(seed)
    written = 0
    for p in range(projects):
        project = f"project{p:02d}"
        for i in range(pairs):
            family = chosen[int(rng.integers(len(chosen)))]
            before, after, span = generate_pair(rng, family)
            pair_dir = os.path.join(out_dir, project, f"pair{i:04d}")
            os.makedirs(pair_dir, exist_ok=True)
            with open(os.path.join(pair_dir, "before.toy"), "w", encoding="utf-8") as f:
                f.write(before)
            with open(os.path.join(pair_dir, "after.toy"), "w", encoding="utf-8") as f:
                f.write(after)
            with open(os.path.join(pair_dir, "span.txt"), "w", encoding="utf-8") as f:
                f.write(format_span_file(span, commit=f"{project}-c{i:04d}", file=f"{family}.toy"))
            written += 1
    logger.info("сгенерировано %d пар в %s", written, out_dir)
    return written

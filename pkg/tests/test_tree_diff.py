from typing import List

import numpy as np
import pytest

from src.ast_core import Ast, isomorphic
from src.errors import ScriptError, ScriptFormatError, UnknownNodeError
from src.interchange import parse_interchange
from src.synthetic import random_pair, random_tree
from src.tree_diff import (
    EditOp,
    EditScript,
    Mapping,
    OpKind,
    anchors_topdown,
    apply_script,
    compute_mapping,
    containers_bottomup,
    diff,
    generate_script,
    is_valid_mapping,
    parse_edit_op,
)


def _tree(text: str) -> Ast:
    return parse_interchange(text)


def test_diff_identical_is_empty(call_tree: Ast) -> None:
    """Тестируем, что дифф дерева с самим собой пуст."""
    assert len(diff(call_tree, call_tree)) == 0
    assert apply_script(call_tree, EditScript()) == call_tree


def test_sibling_swap_is_single_move() -> None:
    """Тестируем перестановку соседей: одна инструкция MOV."""
    a = _tree('(Block (Name "C") (Name "D"))')
    b = _tree('(Block (Name "D") (Name "C"))')
    script = diff(a, b)
    assert script.kinds() == [OpKind.MOV]
    assert script.to_text() == "MOV 1 2\n"
    assert isomorphic(apply_script(a, script), b)


def test_value_change_is_update() -> None:
    """Тестируем замену значения терминала: одна инструкция UPD."""
    a = _tree('(Block (Name "C"))')
    b = _tree('(Block (Name "Z"))')
    script = diff(a, b)
    assert script.to_text() == 'UPD "Z" 1\n'
    assert isomorphic(apply_script(a, script), b)


def test_insert_and_delete() -> None:
    """Тестируем вставку нового поддерева и удаление старого."""
    a = _tree('(Block (Name "a") (Call (Name "f") (ArgList)))')
    b = _tree('(Block (Name "a"))')
    script = diff(a, b)
    assert script.kinds() == [OpKind.DEL]
    assert isomorphic(apply_script(a, script), b)

    back = diff(b, a)
    assert OpKind.INS in back.kinds()
    assert isomorphic(apply_script(b, back), a)


def test_anchors_map_isomorphic_subtrees() -> None:
    """Тестируем фазу якорей: изоморфные поддеревья сопоставляются целиком."""
    a = _tree('(Block (Call (Name "f") (ArgList)) (Name "x"))')
    b = _tree('(Block (Name "y") (Call (Name "f") (ArgList)))')
    anchors = anchors_topdown(a, b)
    assert (1, 2) in anchors and (2, 3) in anchors and (3, 4) in anchors
    assert not anchors.has_src(0)

    containers = containers_bottomup(a, b, anchors)
    assert (0, 0) in containers
    assert is_valid_mapping(a, b, compute_mapping(a, b))


def test_mapping_is_one_to_one() -> None:
    """Тестируем, что узел не входит в две пары."""
    m = Mapping([(1, 2)])
    with pytest.raises(ValueError):
        m.add(1, 3)
    with pytest.raises(ValueError):
        m.add(4, 2)
    assert m.dst(1) == 2 and m.src(2) == 1 and len(m) == 1


def test_generate_script_rejects_foreign_pairs(call_tree: Ast) -> None:
    """Тестируем проверку соответствия на несуществующие узлы."""
    with pytest.raises(UnknownNodeError):
        generate_script(call_tree, call_tree, Mapping([(0, 99)]))


def test_random_pairs_round_trip() -> None:
    """Тестируем на случайных парах: apply(a, diff(a, b)) изоморфно b, а соответствие корректно."""
    rng = np.random.default_rng(7)
    for _ in range(200):
        a, b = random_pair(rng, max_nodes=15, edits=4)
        assert is_valid_mapping(a, b, compute_mapping(a, b))
        result = apply_script(a, diff(a, b))
        assert isomorphic(result, b)


@pytest.mark.parametrize(
    "line, expected",
    [
        ("MOV 3 7", EditOp.mov(3, 7)),
        ("MOV 3 ^5", EditOp.mov(3, 5, first_child=True)),
        ("MOV 0 ^-1", EditOp.mov(0, -1, first_child=True)),
        ("DEL 4", EditOp.delete(4)),
        ('UPD "a b" 9', EditOp.update("a b", 9)),
    ],
)
def test_parse_edit_op(line: str, expected: EditOp) -> None:
    """Тестируем разбор строк скрипта и обратную запись."""
    op = parse_edit_op(line)
    assert op == expected
    assert str(op) == line


def test_parse_insert_op() -> None:
    """Тестируем разбор INS с поддеревом."""
    op = parse_edit_op('INS (Arg (Name "z")) ^7')
    assert op.kind is OpKind.INS
    assert op.tgt == 7 and op.first_child
    assert op.subtree is not None and op.subtree.shape() == ("Arg", None, (("Name", "z", ()),))
    assert str(op) == 'INS (Arg (Name "z")) ^7'


@pytest.mark.parametrize("line", ["JMP 1 2", "MOV x 2", "DEL", 'UPD "v" ^3', "INS (Name 1"])
def test_parse_edit_op_errors(line: str) -> None:
    """Тестируем ошибки формата скрипта."""
    with pytest.raises(ScriptFormatError):
        parse_edit_op(line)


def test_script_text_round_trip() -> None:
    """Тестируем построчную запись скрипта (пустые строки пропускаются)."""
    text = 'MOV 3 ^5\n\nUPD "q" 2\nINS (Name "z") 4\nDEL 6\n'
    script = EditScript.from_text(text)
    assert script.kinds() == [OpKind.MOV, OpKind.UPD, OpKind.INS, OpKind.DEL]
    assert script.to_text() == text.replace("\n\n", "\n")


def test_apply_assigns_fresh_ids(call_tree: Ast) -> None:
    """Тестируем, что вставленные узлы получают идентификаторы max+1, max+2, …"""
    script = EditScript.from_text('INS (Arg (Name "z")) 7\n')
    result = apply_script(call_tree, script)
    assert result[4].children == (5, 7, 9)
    assert result[9].children == (10,)
    assert result[10].value == "z"


@pytest.mark.parametrize(
    "text",
    [
        "DEL 42\n",
        "MOV 4 6\n",
        'UPD "v" 2\n',
        "MOV 0 3\n",
        "MOV 1 ^3\n",
        "DEL 1\nMOV 3 4\n",
    ],
)
def test_apply_rejects_bad_scripts(call_tree: Ast, text: str) -> None:
    """Тестируем ошибки применения: висячая ссылка, перемещение в себя, UPD нетерминала, второй корень."""
    with pytest.raises(ScriptError):
        apply_script(call_tree, EditScript.from_text(text))


def test_root_replacement_through_virtual_root() -> None:
    """Тестируем замену корня: новый корень вставляется первым ребёнком виртуального корня."""
    a = _tree('(Block (Name "x"))')
    b = _tree('(Call (Name "x"))')
    script = diff(a, b)
    ops: List[EditOp] = list(script)
    assert any(op.first_child and op.tgt == -1 for op in ops)
    assert isomorphic(apply_script(a, script), b)


def test_random_trees_identity() -> None:
    """Тестируем на случайных деревьях: дифф дерева с самим собой пуст."""
    rng = np.random.default_rng(13)
    for _ in range(200):
        tree = random_tree(rng, max_nodes=30)
        assert len(diff(tree, tree)) == 0

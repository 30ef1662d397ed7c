from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import pytest

from src.dataset import (
    DROP_DEL_ONLY,
    DROP_NO_EDIT,
    DROP_RENAME,
    DROP_REASONS,
    DROP_SIZE,
    DROP_UNREPRESENTABLE,
    EditSpan,
    Example,
    SplitSpec,
    accuracy_breakdown,
    compute_stats,
    exact_match_accuracy,
    filter_example,
    filter_examples,
    find_split_leaks,
    format_span_file,
    ingest_pair,
    load_corpus,
    parse_span_file,
    split_by_project,
    stats_table,
)
from src.errors import DatasetError, ToySyntaxError
from src.synthetic import fresh_name, generate_pair
from src.tree_diff import EditScript, OpKind, apply_script
from src.ast_core import isomorphic


def test_parse_span_file() -> None:
    """Тестируем разбор span.txt с комментариями и метаданными."""
    span, meta = parse_span_file("# правка\nbefore 3-5\nafter 3 6\ncommit abc123\nfile src/Foo.toy\n")
    assert span == EditSpan(3, 5, 3, 6)
    assert meta == {"commit": "abc123", "file": "src/Foo.toy"}
    again, _ = parse_span_file(format_span_file(span, commit="abc123"))
    assert again == span


@pytest.mark.parametrize("text", ["before 1-2\n", "before 1-2\nafter 1-2\nmoved 3\n", "before 3-1\nafter 1-1\n"])
def test_parse_span_file_errors(text: str) -> None:
    """Тестируем ошибки span.txt: нет after, неизвестная строка, обратный диапазон."""
    with pytest.raises(DatasetError):
        parse_span_file(text)


def test_ingest_pair_windows(swap_example: Example) -> None:
    """Тестируем окно: P — изменённая инструкция, C — инструкции в радиусе над ней."""
    assert len(swap_example.p_before[0].children) == 1
    assert len(swap_example.c_before[0].children) == 1
    assert swap_example.p_before[swap_example.p_before[0].children[0]].kind == "Assign"
    assert swap_example.gold_script.kinds() == [OpKind.MOV]
    assert swap_example.context_script.kinds() == [OpKind.MOV]
    assert swap_example.context_lines_above == 1
    assert isomorphic(apply_script(swap_example.p_before, swap_example.gold_script), swap_example.p_after)
    assert isomorphic(apply_script(swap_example.c_before, swap_example.context_script), swap_example.c_after)


def test_ingest_pair_radius() -> None:
    """Тестируем радиус: инструкции дальше radius строк в контекст не попадают."""
    before = "a = f(x);\n\n\n\nb = g(y);\nc = h(z);\n"
    after = "a = f(x);\n\n\n\nb = g(y);\nc = h(w);\n"
    near = ingest_pair(before, after, EditSpan(6, 6, 6, 6), radius=1)
    assert len(near.c_before[0].children) == 1
    far = ingest_pair(before, after, EditSpan(6, 6, 6, 6), radius=10)
    assert len(far.c_before[0].children) == 2
    assert far.context_lines_above == 5
    assert len(far.context_script) == 0


def test_ingest_pair_errors() -> None:
    """Тестируем ошибки загрузки пары: синтаксис и диапазон вне файла."""
    with pytest.raises(ToySyntaxError):
        ingest_pair("x = ;\n", "x = 1;\n", EditSpan(1, 1, 1, 1))
    with pytest.raises(DatasetError):
        ingest_pair("x = 1;\n", "x = 2;\n", EditSpan(1, 4, 1, 1))


def test_example_record_round_trip(rename_arg_example: Example) -> None:
    """Тестируем запись примера для хранения: идентификаторы и скрипты сохраняются."""
    record = rename_arg_example.to_record()
    assert record["gold_script"] == rename_arg_example.gold_script.to_text()
    assert Example.from_record(record) == rename_arg_example
    del record["p_after"]
    with pytest.raises(DatasetError):
        Example.from_record(record)


def test_load_corpus(corpus_dir: Path) -> None:
    """Тестируем загрузку корпуса: по примеру на пару, битая пара попадает в отчёт."""
    broken = corpus_dir / "delta" / "pair0000"
    broken.mkdir(parents=True)
    (broken / "before.toy").write_text("x = ;\n", encoding="utf-8")
    (broken / "after.toy").write_text("x = 1;\n", encoding="utf-8")
    (broken / "span.txt").write_text("before 1-1\nafter 1-1\n", encoding="utf-8")

    examples, report = load_corpus(str(corpus_dir))
    assert report.pairs == 4
    assert [e.project for e in examples] == ["alpha", "beta", "gamma"]
    assert examples[0].commit == "alpha-c0"
    assert examples[0].file == "before.toy"
    assert [(p, pair) for p, pair, _ in report.failures] == [("delta", "pair0000")]


def test_load_corpus_missing_dir(tmp_path: Path) -> None:
    """Тестируем отсутствующий каталог корпуса."""
    with pytest.raises(DatasetError):
        load_corpus(str(tmp_path / "nope"))


def test_filters(swap_example: Example, rename_arg_example: Example, rename_same_example: Example) -> None:
    """Тестируем фильтры: переименование из контекста отбрасывается, остальные примеры остаются."""
    assert filter_example(swap_example).keep
    assert filter_example(rename_arg_example).keep
    assert filter_example(rename_same_example).reason == DROP_RENAME
    assert filter_example(swap_example, max_nodes=5).reason == DROP_SIZE


def test_filter_reasons() -> None:
    """Тестируем причины: нет правки, только удаления, непредставимая вставка."""
    same = ingest_pair("x = f(a);\n", "x = f(a);\n", EditSpan(1, 1, 1, 1))
    assert filter_example(same).reason == DROP_NO_EDIT
    deleted = ingest_pair("x = f(a);\ny = 1;\n", "x = f();\ny = 1;\n", EditSpan(1, 1, 1, 1))
    assert filter_example(deleted).reason == DROP_DEL_ONLY
    fresh = ingest_pair("x = f(a);\n", "x = f(a, brandNew);\n", EditSpan(1, 1, 1, 1))
    assert filter_example(fresh).reason == DROP_UNREPRESENTABLE


def test_filter_examples_counts(
    swap_example: Example, rename_arg_example: Example, rename_same_example: Example
) -> None:
    """Тестируем подсчёт отброшенных примеров по причинам."""
    kept, dropped = filter_examples([swap_example, rename_arg_example, rename_same_example])
    assert kept == [swap_example, rename_arg_example]
    assert dropped[DROP_RENAME] == 1
    assert sum(dropped.values()) == 1


def test_split_by_project(make_example: Callable[..., Example]) -> None:
    """Тестируем разбиение: проект целиком в одном разбиении, результат зависит только от seed."""
    examples: List[Example] = []
    for p in range(10):
        examples.extend(make_example(project=f"p{p}", pair_id=str(i), commit=f"c{p}-{i}") for i in range(p + 1))
    split = split_by_project(examples, (0.8, 0.1, 0.1), seed=5)
    assert set(split.assignment) == {f"p{p}" for p in range(10)}
    assert all(split.projects(name) for name in ("train", "validation", "test"))
    assert split_by_project(examples, (0.8, 0.1, 0.1), seed=5) == split
    parts = split.partition(examples)
    assert sum(len(v) for v in parts.values()) == len(examples)
    assert len(parts["train"]) > len(parts["test"])
    for name, members in parts.items():
        assert {split.split_of(e.project) for e in members} <= {name}


def test_split_errors(make_example: Callable[..., Example]) -> None:
    """Тестируем ошибки разбиения: мало проектов, неверные доли, неизвестный проект."""
    two = [make_example(project="a"), make_example(project="b")]
    with pytest.raises(DatasetError):
        split_by_project(two)
    three = two + [make_example(project="c")]
    with pytest.raises(DatasetError):
        split_by_project(three, (0.5, 0.5, 0.5))
    with pytest.raises(DatasetError):
        SplitSpec({"a": "train"}).split_of("z")


def test_find_split_leaks(make_example: Callable[..., Example]) -> None:
    """Тестируем поиск утечек: один коммит в двух разбиениях и правка контекста как эталон в другом разбиении."""
    a = make_example(project="a", commit="shared")
    b = make_example(project="b", commit="other")
    split = SplitSpec({"a": "train", "b": "test"})
    # у swap-примеров правка контекста совпадает по тексту с эталонной правкой
    assert find_split_leaks([a, b], split) == [("a", "shared"), ("b", "other")]
    assert find_split_leaks([a], split) == []
    assert find_split_leaks([a, make_example(project="z")], split) == [("z", "c")]


def test_compute_stats(swap_example: Example, rename_arg_example: Example) -> None:
    """Тестируем статистику: доли операций и средние размеры поддеревьев."""
    stats = compute_stats([swap_example, rename_arg_example])
    assert stats.projects == 2
    assert stats.examples == 2
    assert stats.avg_ops == pytest.approx(1.0)
    assert stats.pct_mov == pytest.approx(50.0)
    assert stats.pct_upd == pytest.approx(50.0)
    assert stats.pct_del == 0.0 and stats.pct_ins == 0.0
    assert stats.avg_moved_size == pytest.approx(2.0)
    assert stats.avg_paths > 1.0
    rows = dict(stats.rows())
    assert rows["# examples"] == 2
    assert rows["Avg. number of MOV (%)"] == pytest.approx(50.0)
    with pytest.raises(DatasetError):
        compute_stats([])


def test_stats_table(swap_example: Example) -> None:
    """Тестируем таблицу статистики: показатели в строках, разбиения в столбцах."""
    stats = compute_stats([swap_example])
    table = stats_table({"train": stats, "test": stats})
    assert isinstance(table, pd.DataFrame)
    assert list(table.columns) == ["train", "test"]
    assert table.loc["# projects", "train"] == 1


def test_exact_match_accuracy() -> None:
    """Тестируем точное совпадение: засчитывается только вся последовательность целиком."""
    golds = [(1, 2), (3,), ()]
    assert exact_match_accuracy([(1, 2), (3,), ()], golds) == 1.0
    assert exact_match_accuracy([(2, 1), (3,), (4,)], golds) == pytest.approx(1 / 3)
    assert exact_match_accuracy([(1,), (3, 3), ()], golds) == pytest.approx(1 / 3)
    with pytest.raises(DatasetError):
        exact_match_accuracy([], [])
    with pytest.raises(DatasetError):
        exact_match_accuracy([(1,)], golds)


def test_accuracy_breakdown(make_example: Callable[..., Example], rename_arg_example: Example) -> None:
    """Тестируем точность по корзинам размера P_before и числа строк контекста."""
    small = rename_arg_example
    big = make_example(project="x")
    table = accuracy_breakdown([small, big, big], [(1,), (2,), (0,)], [(1,), (2,), (1,)], by="nodes", bins=(8, 50))
    assert list(table["bucket"]) == ["0-8", "9-50"]
    assert list(table["examples"]) == [1, 2]
    assert list(table["accuracy"]) == pytest.approx([1.0, 0.5])

    by_radius = accuracy_breakdown([small, big], [(1,), (2,)], [(1,), (2,)], by="radius")
    assert list(by_radius["bucket"]) == ["1-2"]
    with pytest.raises(ValueError):
        accuracy_breakdown([small], [(1,)], [(1,)], by="color")


def test_edit_scripts_are_plain_text(swap_example: Example) -> None:
    """Тестируем, что эталонный скрипт хранится текстом и разбирается обратно."""
    assert EditScript.from_text(swap_example.gold_script.to_text()) == swap_example.gold_script


def _filter_corpus_pair(rng: np.random.Generator, category: str) -> Tuple[str, str, EditSpan]:
    if category in ("swap", "rename"):
        return generate_pair(rng, category)
    names: set = set()
    x, f, a, b = (fresh_name(rng, names) for _ in range(4))
    line = EditSpan(1, 1, 1, 1)
    if category == DROP_NO_EDIT:
        text = f"{x} = {f}({a});\n"
        return text, text, line
    if category == DROP_DEL_ONLY:
        return f"{x} = {f}({a}, {b});\n", f"{x} = {f}({a});\n", line
    if category == DROP_UNREPRESENTABLE:
        return f"{x} = {f}({a});\n", f"{x} = {f}({a}, {b});\n", line
    args = [fresh_name(rng, names) for _ in range(60)]
    swapped = [args[1], args[0]] + args[2:]
    return f"{x} = {f}({', '.join(args)});\n", f"{x} = {f}({', '.join(swapped)});\n", line


def test_filters_on_constructed_corpus(tmp_path: Path) -> None:
    """Тестируем фильтры на корпусе из 60 пар: по 10 на каждый исход фильтрации."""
    expected: Dict[str, Optional[str]] = {
        "swap": None,
        "rename": DROP_RENAME,
        DROP_NO_EDIT: DROP_NO_EDIT,
        DROP_DEL_ONLY: DROP_DEL_ONLY,
        DROP_UNREPRESENTABLE: DROP_UNREPRESENTABLE,
        DROP_SIZE: DROP_SIZE,
    }
    rng = np.random.default_rng(29)
    for category in expected:
        for i in range(10):
            before, after, span = _filter_corpus_pair(rng, category)
            pair_dir = tmp_path / category / f"pair{i:04d}"
            pair_dir.mkdir(parents=True)
            (pair_dir / "before.toy").write_text(before, encoding="utf-8")
            (pair_dir / "after.toy").write_text(after, encoding="utf-8")
            (pair_dir / "span.txt").write_text(format_span_file(span, commit=f"{category}-{i}"), encoding="utf-8")

    examples, report = load_corpus(str(tmp_path))
    assert report.pairs == 60 and report.failures == []
    for example in examples:
        assert filter_example(example).reason == expected[example.project]

    kept, dropped = filter_examples(examples)
    assert sorted(e.project for e in kept) == ["swap"] * 10
    assert dropped == dict.fromkeys(DROP_REASONS, 10)
    stats = compute_stats(kept)
    assert stats.pct_mov + stats.pct_del + stats.pct_ins + stats.pct_upd == pytest.approx(100.0, abs=0.1)

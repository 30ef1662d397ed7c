from pathlib import Path

import numpy as np
import pytest

from src.ast_core import isomorphic
from src.dataset import DROP_RENAME, filter_example, ingest_pair, load_corpus, parse_span_file
from src.errors import DatasetError
from src.synthetic import FAMILIES, fresh_name, generate_corpus, generate_pair, random_pair, random_tree
from src.tree_diff import apply_script


def test_random_tree_shape() -> None:
    """Тестируем случайное дерево: размер в пределах, корень Block, прямой порядок идентификаторов."""
    rng = np.random.default_rng(0)
    for _ in range(50):
        tree = random_tree(rng, max_nodes=12)
        assert 1 <= len(tree) <= 12
        assert tree[tree.root].kind == "Block"
        assert list(tree.preorder()) == list(range(len(tree)))


def test_random_pair_is_seeded() -> None:
    """Тестируем, что пары воспроизводятся по seed."""
    first = random_pair(np.random.default_rng(11), max_nodes=10)
    second = random_pair(np.random.default_rng(11), max_nodes=10)
    assert first == second


def test_fresh_name_avoids_taken() -> None:
    """Тестируем генератор имён: имена не повторяются."""
    rng = np.random.default_rng(3)
    taken: set = set()
    names = [fresh_name(rng, taken) for _ in range(30)]
    assert len(set(names)) == 30
    assert taken == set(names)


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_generate_pair_is_ingestible(family: str) -> None:
    """Тестируем каждый шаблон: пара разбирается, эталонная правка непуста и переводит P_before в P_after."""
    before, after, span = generate_pair(np.random.default_rng(5), family)
    example = ingest_pair(before, after, span)
    assert len(example.gold_script) > 0
    assert len(example.context_script) > 0
    assert example.context_lines_above >= 1
    assert isomorphic(apply_script(example.p_before, example.gold_script), example.p_after)


def test_generated_families_and_filters() -> None:
    """Тестируем фильтры на шаблонах: переименование из контекста отбрасывается, перестановка остаётся."""
    rng = np.random.default_rng(9)
    assert filter_example(ingest_pair(*generate_pair(rng, "swap"))).keep
    assert filter_example(ingest_pair(*generate_pair(rng, "rename-arg"))).keep
    assert filter_example(ingest_pair(*generate_pair(rng, "rename"))).reason == DROP_RENAME


def test_generate_pair_unknown_family() -> None:
    """Тестируем неизвестный шаблон."""
    with pytest.raises(KeyError):
        generate_pair(np.random.default_rng(0), "teleport")


def test_generate_corpus(tmp_path: Path) -> None:
    """Тестируем запись корпуса: раскладка каталогов, метаданные, загрузка без ошибок."""
    written = generate_corpus(str(tmp_path), projects=3, pairs=2, seed=4)
    assert written == 6
    pair_dir = tmp_path / "project01" / "pair0001"
    assert (pair_dir / "before.toy").is_file() and (pair_dir / "after.toy").is_file()
    _, meta = parse_span_file((pair_dir / "span.txt").read_text(encoding="utf-8"))
    assert meta["commit"] == "project01-c0001"
    assert meta["file"][: -len(".toy")] in FAMILIES

    examples, report = load_corpus(str(tmp_path))
    assert len(examples) == 6
    assert report.failures == []


def test_generate_corpus_is_seeded(tmp_path: Path) -> None:
    """Тестируем воспроизводимость корпуса и проверку шаблонов."""
    generate_corpus(str(tmp_path / "a"), projects=1, pairs=3, seed=2, families=["swap", "reorder"])
    generate_corpus(str(tmp_path / "b"), projects=1, pairs=3, seed=2, families=["swap", "reorder"])
    for name in ("before.toy", "after.toy", "span.txt"):
        left = (tmp_path / "a" / "project00" / "pair0002" / name).read_text(encoding="utf-8")
        right = (tmp_path / "b" / "project00" / "pair0002" / name).read_text(encoding="utf-8")
        assert left == right
    with pytest.raises(DatasetError):
        generate_corpus(str(tmp_path / "c"), families=["teleport"])

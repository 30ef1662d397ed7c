"""
Построение примеров из пар «до/после»: окно контекста, фильтры, разбиение по проектам,
статистика и метрика точного совпадения.
"""

import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.ast_core import Ast, MutableTree, NestedNode
from src.edit_paths import EncodingMode, augment, enumerate_candidates, script_to_path_ops
from src.errors import (
    CoverageError,
    DatasetError,
    InvalidTreeError,
    ScriptError,
    ToySyntaxError,
    UnrepresentableError,
)
from src.interchange import parse_interchange, serialize_interchange
from src.toy import StatementSpan, parse_toy_with_lines
from src.tree_diff import VIRTUAL_ROOT, EditScript, OpKind, diff, execute_op

logger = logging.getLogger(__name__)

CONTEXT_RADIUS = 10
MAX_NODES = 50
SPLITS: Tuple[str, ...] = ("train", "validation", "test")
DEFAULT_FRACTIONS: Tuple[float, float, float] = (0.8, 0.1, 0.1)

DROP_SIZE = "size"
DROP_NO_EDIT = "no-edit"
DROP_DEL_ONLY = "del-only"
DROP_RENAME = "rename"
DROP_UNREPRESENTABLE = "unrepresentable"
DROP_REASONS: Tuple[str, ...] = (DROP_SIZE, DROP_NO_EDIT, DROP_DEL_ONLY, DROP_RENAME, DROP_UNREPRESENTABLE)


@dataclass(frozen=True)
class EditSpan:
    """Изменённые строки (с 1, включительно) в файле «до» и в файле «после»."""

    before_start: int
    before_end: int
    after_start: int
    after_end: int

    def __post_init__(self) -> None:
        if self.before_start < 1 or self.after_start < 1:
            raise DatasetError("номера строк начинаются с 1")
        if self.before_end < self.before_start or self.after_end < self.after_start:
            raise DatasetError("конец диапазона строк раньше начала")


_SPAN_LINE_RE = re.compile(r"^\s*(before|after)\s+(\d+)\s*(?:-|\s)\s*(\d+)\s*$")
_META_LINE_RE = re.compile(r"^\s*(commit|file)\s+(\S.*?)\s*$")


def parse_span_file(text: str) -> Tuple[EditSpan, Dict[str, str]]:
    """
    Разобрать span.txt:

        before 3-5
        after 3-6
        commit c0001     (необязательно)
        file Foo.toy     (необязательно)

    :raises DatasetError: нет строки before/after или неизвестная строка
    :return: диапазон правки и метаданные
    """
    ranges: Dict[str, Tuple[int, int]] = {}
    meta: Dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        span_match = _SPAN_LINE_RE.match(line)
        if span_match:
            ranges[span_match.group(1)] = (int(span_match.group(2)), int(span_match.group(3)))
            continue
        meta_match = _META_LINE_RE.match(line)
        if meta_match:
            meta[meta_match.group(1)] = meta_match.group(2)
            continue
        raise DatasetError(f"непонятная строка в span.txt: {line!r}")
    if "before" not in ranges or "after" not in ranges:
        raise DatasetError("в span.txt нужны строки before и after")
    return EditSpan(*ranges["before"], *ranges["after"]), meta


def format_span_file(span: EditSpan, commit: str = "", file: str = "") -> str:
    text = f"before {span.before_start}-{span.before_end}\nafter {span.after_start}-{span.after_end}\n"
    if commit:
        text += f"commit {commit}\n"
    if file:
        text += f"file {file}\n"
    return text


@dataclass(frozen=True)
class Example:
    """
    Обучающий пример.

    Атрибуты:
        project, pair_id, file, commit: происхождение пары.
        p_before, p_after: фрагмент P до и после правки (корень Unit).
        c_before, c_after: контекст C до и после правки (корень Unit).
        gold_script: Δ_P, переводит p_before в p_after.
        context_script: Δ_C, переводит c_before в c_after.
        context_lines_above: сколько строк между началом контекста и началом P (0, если контекста сверху нет).
    """

    project: str
    pair_id: str
    p_before: Ast
    p_after: Ast
    c_before: Ast
    c_after: Ast
    gold_script: EditScript
    context_script: EditScript
    file: str = ""
    commit: str = ""
    context_lines_above: int = 0

    def to_record(self) -> Dict[str, Any]:
        """Запись для хранения: деревья в формате обмена, скрипты построчным текстом."""
        return {
            "project": self.project,
            "pair_id": self.pair_id,
            "file": self.file,
            "commit": self.commit,
            "context_lines_above": self.context_lines_above,
            "p_before": serialize_interchange(self.p_before),
            "p_after": serialize_interchange(self.p_after),
            "c_before": serialize_interchange(self.c_before),
            "c_after": serialize_interchange(self.c_after),
            "gold_script": self.gold_script.to_text(),
            "context_script": self.context_script.to_text(),
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "Example":
        """
        :raises DatasetError: в записи нет обязательного поля
        """
        try:
            return cls(
                project=str(record["project"]),
                pair_id=str(record["pair_id"]),
                file=str(record.get("file", "")),
                commit=str(record.get("commit", "")),
                context_lines_above=int(record.get("context_lines_above", 0)),
                p_before=parse_interchange(record["p_before"]),
                p_after=parse_interchange(record["p_after"]),
                c_before=parse_interchange(record["c_before"]),
                c_after=parse_interchange(record["c_after"]),
                gold_script=EditScript.from_text(record["gold_script"]),
                context_script=EditScript.from_text(record["context_script"]),
            )
        except KeyError as e:
            raise DatasetError(f"в записи примера нет поля {e.args[0]!r}") from e


def _intersects(span: StatementSpan, start: int, end: int) -> bool:
    return span.start_line <= end and span.end_line >= start


def _unit(tree: Ast, spans: Sequence[StatementSpan]) -> Ast:
    statements: List[NestedNode] = [tree.to_nested(s.node_id) for s in spans]
    return Ast.from_nested(("Unit", statements))


def _window(
    spans: Sequence[StatementSpan], start: int, end: int, radius: int
) -> Tuple[List[StatementSpan], List[StatementSpan], List[StatementSpan]]:
    inside = [s for s in spans if _intersects(s, start, end)]
    rest = [s for s in spans if s not in inside]
    above = [s for s in rest if s.end_line < start and _intersects(s, start - radius, start - 1)]
    below = [s for s in rest if s.start_line > end and _intersects(s, end + 1, end + radius)]
    return inside, above, below


def _line_count(text: str) -> int:
    return len(text.splitlines())


def ingest_pair(
    before_text: str,
    after_text: str,
    span: EditSpan,
    *,
    radius: int = CONTEXT_RADIUS,
    project: str = "",
    pair_id: str = "",
    file: str = "",
    commit: str = "",
) -> Example:
    """
    Построить пример из пары файлов.

    P — инструкции верхнего уровня, пересекающие изменённые строки; C — инструкции,
    пересекающие до radius строк выше и ниже P. Оба фрагмента оборачиваются в Unit.

    :raises ToySyntaxError: файл не разбирается
    :raises DatasetError: диапазон вне файла или не задевает ни одной инструкции
    """
    tree_b, spans_b = parse_toy_with_lines(before_text)
    tree_a, spans_a = parse_toy_with_lines(after_text)
    if span.before_end > _line_count(before_text) or span.after_end > _line_count(after_text):
        raise DatasetError("диапазон правки выходит за пределы файла")
    p_b, above_b, below_b = _window(spans_b, span.before_start, span.before_end, radius)
    p_a, above_a, below_a = _window(spans_a, span.after_start, span.after_end, radius)
    if not p_b and not p_a:
        raise DatasetError("диапазон правки не задевает ни одной инструкции")
    p_before, p_after = _unit(tree_b, p_b), _unit(tree_a, p_a)
    c_before, c_after = _unit(tree_b, above_b + below_b), _unit(tree_a, above_a + below_a)
    p_start = p_b[0].start_line if p_b else span.before_start
    lines_above = p_start - above_b[0].start_line if above_b else 0
    return Example(
        project=project,
        pair_id=pair_id,
        file=file,
        commit=commit,
        p_before=p_before,
        p_after=p_after,
        c_before=c_before,
        c_after=c_after,
        gold_script=diff(p_before, p_after),
        context_script=diff(c_before, c_after),
        context_lines_above=lines_above,
    )


@dataclass
class IngestReport:
    """Итог загрузки корпуса: пары, которые не удалось разобрать, с причинами."""

    pairs: int = 0
    failures: List[Tuple[str, str, str]] = field(default_factory=list)


def load_corpus(root: str, *, radius: int = CONTEXT_RADIUS) -> Tuple[List[Example], IngestReport]:
    """
    Прочитать корпус `<project>/<pair-id>/{before.toy, after.toy, span.txt}`.

    Ошибки отдельных пар не прерывают загрузку и попадают в отчёт. Порядок обхода — по именам.

    :raises DatasetError: каталога нет
    """
    if not os.path.isdir(root):
        raise DatasetError(f"каталог корпуса не найден: {root}")
    examples: List[Example] = []
    report = IngestReport()
    for project in sorted(os.listdir(root)):
        project_dir = os.path.join(root, project)
        if not os.path.isdir(project_dir):
            continue
        for pair_id in sorted(os.listdir(project_dir)):
            pair_dir = os.path.join(project_dir, pair_id)
            if not os.path.isdir(pair_dir):
                continue
            report.pairs += 1
            try:
                with open(os.path.join(pair_dir, "before.toy"), "r", encoding="utf-8") as f:
                    before = f.read()
                with open(os.path.join(pair_dir, "after.toy"), "r", encoding="utf-8") as f:
                    after = f.read()
                with open(os.path.join(pair_dir, "span.txt"), "r", encoding="utf-8") as f:
                    span, meta = parse_span_file(f.read())
                examples.append(
                    ingest_pair(
                        before,
                        after,
                        span,
                        radius=radius,
                        project=project,
                        pair_id=pair_id,
                        file=meta.get("file", "before.toy"),
                        commit=meta.get("commit", pair_id),
                    )
                )
            except (OSError, ToySyntaxError, DatasetError, InvalidTreeError, ScriptError) as e:
                logger.warning("пара %s/%s пропущена: %s", project, pair_id, e)
                report.failures.append((project, pair_id, str(e)))
    logger.info("корпус %s: %d пар, %d примеров", root, report.pairs, len(examples))
    return examples, report


@dataclass(frozen=True)
class FilterResult:
    keep: bool
    reason: Optional[str] = None


def _update_pairs(tree: Ast, script: EditScript) -> Optional[Counter]:
    """Мультимножество пар (старое, новое значение) или None, если в скрипте не только UPD."""
    if not len(script) or any(op.kind is not OpKind.UPD for op in script):
        return None
    current: Dict[int, Optional[str]] = {}
    pairs: Counter = Counter()
    for op in script:
        assert op.tgt is not None
        old = current[op.tgt] if op.tgt in current else (tree[op.tgt].value if op.tgt in tree else None)
        pairs[(old, op.value)] += 1
        current[op.tgt] = op.value
    return pairs


def check_representable(example: Example) -> None:
    """
    Убедиться, что пример пригоден для модели: Δ_P выражается путями среди кандидатов,
    Δ_C — путями в меняющемся контексте.

    :raises UnrepresentableError: инструкция не выражается путём
    :raises CoverageError: операции нет среди кандидатов
    """
    aug = augment(example.p_before, example.context_script, example.c_before)
    candidates = enumerate_candidates(aug)
    for op in script_to_path_ops(aug, example.gold_script, EncodingMode.TARGET):
        if candidates.find(*op.key) is None:
            raise CoverageError(f"операции {op.key} нет среди кандидатов")
    if len(example.context_script):
        context_aug = augment(example.c_before, example.context_script)
        script_to_path_ops(context_aug, example.context_script, EncodingMode.CONTEXT)


def filter_example(example: Example, *, max_nodes: int = MAX_NODES) -> FilterResult:
    """
    Решить, оставлять ли пример. Проверки по порядку: размер P, пустая правка,
    только удаления, переименование, уже сделанное в контексте, непредставимость.
    """
    if len(example.p_before) > max_nodes:
        return FilterResult(False, DROP_SIZE)
    gold = example.gold_script
    if not len(gold):
        return FilterResult(False, DROP_NO_EDIT)
    if all(op.kind is OpKind.DEL for op in gold):
        return FilterResult(False, DROP_DEL_ONLY)
    p_updates = _update_pairs(example.p_before, gold)
    c_updates = _update_pairs(example.c_before, example.context_script)
    if p_updates is not None and c_updates is not None and not (p_updates - c_updates):
        return FilterResult(False, DROP_RENAME)
    try:
        check_representable(example)
    except (UnrepresentableError, CoverageError, ScriptError, InvalidTreeError) as e:
        logger.debug("%s/%s непредставим: %s", example.project, example.pair_id, e)
        return FilterResult(False, DROP_UNREPRESENTABLE)
    return FilterResult(True)


def filter_examples(
    examples: Iterable[Example], *, max_nodes: int = MAX_NODES
) -> Tuple[List[Example], Dict[str, int]]:
    """Отфильтровать набор; вернуть оставленные примеры и число отброшенных по каждой причине."""
    kept: List[Example] = []
    dropped = {reason: 0 for reason in DROP_REASONS}
    for example in examples:
        result = filter_example(example, max_nodes=max_nodes)
        if result.keep:
            kept.append(example)
        else:
            assert result.reason is not None
            dropped[result.reason] += 1
    return kept, dropped


@dataclass(frozen=True)
class SplitSpec:
    """Назначение проектов разбиениям train / validation / test."""

    assignment: Mapping[str, str]

    def split_of(self, project: str) -> str:
        try:
            return self.assignment[project]
        except KeyError:
            raise DatasetError(f"проект {project!r} не распределён ни в одно разбиение") from None

    def projects(self, split: str) -> List[str]:
        return sorted(p for p, s in self.assignment.items() if s == split)

    def partition(self, examples: Iterable[Example]) -> Dict[str, List[Example]]:
        parts: Dict[str, List[Example]] = {name: [] for name in SPLITS}
        for example in examples:
            parts[self.split_of(example.project)].append(example)
        return parts

    def to_dict(self) -> Dict[str, str]:
        return dict(sorted(self.assignment.items()))


def split_by_project(
    examples: Sequence[Example], fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0
) -> SplitSpec:
    """
    Разбить по проектам, приближая доли по числу примеров.

    Проекты перемешиваются генератором с seed; первые три получают по разбиению,
    остальные по очереди уходят туда, где больше всего не хватает до целевой доли.

    :raises DatasetError: меньше трёх проектов или некорректные доли
    """
    if len(fractions) != len(SPLITS) or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-6:
        raise DatasetError(f"доли должны быть тремя положительными числами с суммой 1: {tuple(fractions)}")
    sizes = Counter(e.project for e in examples)
    projects = sorted(sizes)
    if len(projects) < len(SPLITS):
        raise DatasetError(f"для разбиения нужно не меньше трёх проектов, найдено {len(projects)}")
    order = [projects[i] for i in np.random.default_rng(seed).permutation(len(projects))]
    total = sum(sizes.values())
    mass = dict.fromkeys(SPLITS, 0)
    assignment: Dict[str, str] = {}
    for i, project in enumerate(order):
        if i < len(SPLITS):
            split = SPLITS[i]
        else:
            split = max(SPLITS, key=lambda s: fractions[SPLITS.index(s)] * total - mass[s])
        assignment[project] = split
        mass[split] += sizes[project]
    logger.info("разбиение: %s", {s: mass[s] for s in SPLITS})
    return SplitSpec(assignment)


def find_split_leaks(examples: Sequence[Example], split: SplitSpec) -> List[Tuple[str, str]]:
    """
    Найти утечки между разбиениями: проекты без назначения, коммиты, примеры которых
    попали в разные разбиения, и правки, которые служат Δ_C одного примера и Δ_P другого
    в разных разбиениях.

    :return: отсортированный список (проект, коммит)
    """
    leaks = set()
    by_commit: Dict[Tuple[str, str], set] = {}
    placed: List[Tuple[Example, str]] = []
    for example in examples:
        where = split.assignment.get(example.project)
        if where is None:
            leaks.add((example.project, example.commit))
            continue
        by_commit.setdefault((example.project, example.commit), set()).add(where)
        placed.append((example, where))
    leaks.update(key for key, where in by_commit.items() if len(where) > 1)
    gold_homes: Dict[str, List[Tuple[Example, str]]] = {}
    for example, where in placed:
        if len(example.gold_script):
            gold_homes.setdefault(example.gold_script.to_text(), []).append((example, where))
    for example, where in placed:
        if not len(example.context_script):
            continue
        for other, other_where in gold_homes.get(example.context_script.to_text(), []):
            if other_where != where:
                leaks.add((example.project, example.commit))
                leaks.add((other.project, other.commit))
    return sorted(leaks)


@dataclass(frozen=True)
class DatasetStats:
    """Сводка по набору примеров (строки таблицы статистики датасета)."""

    projects: int
    examples: int
    avg_paths: float
    avg_ops: float
    pct_mov: float
    pct_del: float
    pct_ins: float
    pct_upd: float
    avg_moved_size: float
    avg_deleted_size: float
    avg_inserted_size: float

    def rows(self) -> List[Tuple[str, float]]:
        return [
            ("# projects", self.projects),
            ("# examples", self.examples),
            ("Avg. number of paths", self.avg_paths),
            ("Avg. number of edit operations", self.avg_ops),
            ("Avg. number of MOV (%)", self.pct_mov),
            ("Avg. number of DEL (%)", self.pct_del),
            ("Avg. number of INS (%)", self.pct_ins),
            ("Avg. number of UPD (%)", self.pct_upd),
            ("Avg. size of moved subtrees (MOV)", self.avg_moved_size),
            ("Avg. size of deleted subtrees (DEL)", self.avg_deleted_size),
            ("Avg. size of inserted subtrees (INS)", self.avg_inserted_size),
        ]


def _op_sizes(tree: Ast, script: EditScript) -> List[Tuple[OpKind, int]]:
    """Тип и размер поддерева каждой инструкции в меняющемся дереве (UPD — размер 1)."""
    work = MutableTree.from_ast(tree, virtual_root=VIRTUAL_ROOT)
    sizes: List[Tuple[OpKind, int]] = []
    for op in script:
        if op.kind in (OpKind.MOV, OpKind.DEL):
            assert op.src is not None
            sizes.append((op.kind, len(work.subtree_ids(op.src))))
        elif op.kind is OpKind.INS:
            assert op.subtree is not None
            sizes.append((op.kind, len(op.subtree)))
        else:
            sizes.append((op.kind, 1))
        execute_op(work, op)
    return sizes


def compute_stats(examples: Sequence[Example]) -> DatasetStats:
    """
    Посчитать статистику; проценты операций берутся по всем инструкциям набора.

    :raises DatasetError: пустой набор
    """
    if not examples:
        raise DatasetError("статистика пустого набора не определена")
    rows = []
    paths = []
    for i, example in enumerate(examples):
        aug = augment(example.p_before, example.context_script, example.c_before)
        paths.append(len(enumerate_candidates(aug)))
        for kind, size in _op_sizes(example.p_before, example.gold_script):
            rows.append({"example": i, "kind": kind.value, "size": size})
    ops = pd.DataFrame(rows, columns=["example", "kind", "size"])
    total = len(ops)
    share = ops["kind"].value_counts() if total else pd.Series(dtype=float)
    mean_size = ops.groupby("kind")["size"].mean() if total else pd.Series(dtype=float)

    def pct(kind: OpKind) -> float:
        return float(100.0 * share.get(kind.value, 0) / total) if total else 0.0

    def avg(kind: OpKind) -> float:
        return float(mean_size.get(kind.value, 0.0))

    return DatasetStats(
        projects=len({e.project for e in examples}),
        examples=len(examples),
        avg_paths=float(np.mean(paths)),
        avg_ops=total / len(examples),
        pct_mov=pct(OpKind.MOV),
        pct_del=pct(OpKind.DEL),
        pct_ins=pct(OpKind.INS),
        pct_upd=pct(OpKind.UPD),
        avg_moved_size=avg(OpKind.MOV),
        avg_deleted_size=avg(OpKind.DEL),
        avg_inserted_size=avg(OpKind.INS),
    )


def stats_table(stats_by_split: Mapping[str, DatasetStats]) -> pd.DataFrame:
    """Таблица: строки — показатели, столбцы — разбиения в порядке переданного словаря."""
    columns = {name: dict(stats.rows()) for name, stats in stats_by_split.items()}
    first = next(iter(stats_by_split.values()), None)
    index = [name for name, _ in first.rows()] if first is not None else []
    return pd.DataFrame(columns, index=index)


def _sequence_key(sequence: Sequence[Any]) -> Tuple[Any, ...]:
    return tuple(getattr(item, "key", item) for item in sequence)


def _matches(predictions: Sequence[Sequence[Any]], golds: Sequence[Sequence[Any]]) -> List[bool]:
    if not predictions or len(predictions) != len(golds):
        raise DatasetError(
            f"для точности нужны непустые выровненные списки: {len(predictions)} предсказаний, {len(golds)} эталонов"
        )
    return [_sequence_key(p) == _sequence_key(g) for p, g in zip(predictions, golds)]


def exact_match_accuracy(predictions: Sequence[Sequence[Any]], golds: Sequence[Sequence[Any]]) -> float:
    """
    Доля примеров, у которых вся последовательность операций предсказана верно.

    Операции сравниваются по (тип, источник, цель); подходят и индексы кандидатов.

    :raises DatasetError: пустые или разной длины списки
    """
    matches = _matches(predictions, golds)
    return sum(matches) / len(matches)


BREAKDOWN_BINS: Dict[str, Tuple[int, ...]] = {
    "nodes": (0, 10, 20, 30, 40, 50),
    "radius": (0, 2, 4, 6, 8, 10),
}


def accuracy_breakdown(
    examples: Sequence[Example],
    predictions: Sequence[Sequence[Any]],
    golds: Sequence[Sequence[Any]],
    by: str = "nodes",
    bins: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """
    Точность в зависимости от размера P_before (by="nodes") или от числа строк контекста
    над P (by="radius").

    :param bins: правые границы корзин (включительно); значения выше последней попадают в «>последней»
    :return: DataFrame со столбцами bucket, examples, accuracy (пустые корзины опущены)
    """
    if by not in BREAKDOWN_BINS:
        raise ValueError(f"разбивка возможна по {sorted(BREAKDOWN_BINS)}, получено {by!r}")
    matches = _matches(predictions, golds)
    if len(examples) != len(matches):
        raise DatasetError("число примеров не совпадает с числом предсказаний")
    edges = tuple(sorted(bins)) if bins is not None else BREAKDOWN_BINS[by]
    if not edges:
        raise ValueError("нужна хотя бы одна граница корзины")
    labels = [f"{lo + 1}-{hi}" for lo, hi in zip((-1,) + edges, edges)] + [f">{edges[-1]}"]
    values = [len(e.p_before) if by == "nodes" else e.context_lines_above for e in examples]
    positions = np.searchsorted(np.array(edges), np.array(values), side="left")
    buckets = pd.Categorical([labels[p] for p in positions], categories=labels, ordered=True)
    frame = pd.DataFrame({"bucket": buckets, "correct": matches})
    table = (
        frame.groupby("bucket", observed=True)
        .agg(examples=("correct", "size"), accuracy=("correct", "mean"))
        .reset_index()
    )
    table["bucket"] = table["bucket"].astype(str)
    return table

"""
Командная строка: diff, apply, ingest, train, predict, evaluate, stats, generate, candidates.

Полезный вывод идёт в stdout, сообщения об ошибках и логи — в stderr.
Коды выхода: 0 — успех, 1 — ошибка использования, 2 — ошибка данных, 3 — расхождение обучения
или внутренняя ошибка.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, NoReturn, Optional, Sequence, Tuple

from config import CHECKPOINT_PATH_STR, CORPUS_ROOT_STR, DATASET_PATH_STR, DEFAULT_SEED, LOG_LEVEL, METRICS_PATH_STR
from src.ast_core import Ast
from src.base import TreeParser
from src.dataset import (
    BREAKDOWN_BINS,
    CONTEXT_RADIUS,
    DROP_REASONS,
    MAX_NODES,
    SPLITS,
    Example,
    accuracy_breakdown,
    compute_stats,
    filter_examples,
    find_split_leaks,
    load_corpus,
    split_by_project,
)
from src.edit_paths import (
    EncodingMode,
    apply_path_ops,
    augment,
    enumerate_candidates,
    format_candidates,
    format_path_op,
    script_to_path_ops,
)
from src.errors import DatasetError, EditGardenError, TrainingDivergedError, UsageError
from src.files import Checkpoint, CheckpointSaver, Dataset, DatasetSaver
from src.interchange import InterchangeParser
from src.model import TrainConfig, predict, prepare_example
from src.synthetic import FAMILIES, generate_corpus
from src.toy import ToyParser
from src.training import evaluate, prepare_examples, train
from src.tree_diff import EditScript, apply_script, diff
from src.utils import format_key_values, format_stats, format_table, parse_fractions, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _ArgumentParser(argparse.ArgumentParser):
    """argparse с кодом 1 при ошибке использования."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: ошибка: {message}\n")


def _parser_for(path: str, lang: str) -> TreeParser:
    if lang == "toy" or (lang == "auto" and Path(path).suffix == ".toy"):
        return ToyParser()
    return InterchangeParser()


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _read_tree(path: str, lang: str) -> Ast:
    return _parser_for(path, lang).parse(_read_text(path))


def _emit(text: str) -> None:
    sys.stdout.write(text)


def _progress_enabled(args: argparse.Namespace) -> bool:
    return not getattr(args, "quiet", False) and sys.stderr.isatty()


def cmd_diff(args: argparse.Namespace) -> int:
    before = _read_tree(args.before, args.lang)
    after = _read_tree(args.after, args.lang)
    script = diff(before, after)
    if args.format == "ops":
        _emit(script.to_text())
        return EXIT_OK
    aug = augment(before)
    ops = script_to_path_ops(aug, script, EncodingMode.TARGET)
    _emit("".join(format_path_op(op, with_ids=True) + "\n" for op in ops))
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    parser = _parser_for(args.before, args.lang)
    before = parser.parse(_read_text(args.before))
    script = EditScript.from_text(_read_text(args.script))
    _emit(parser.unparse(apply_script(before, script)))
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    examples, report = load_corpus(args.corpus, radius=args.radius)
    if report.pairs == 0:
        raise DatasetError(f"в корпусе {args.corpus} нет ни одной пары")
    kept, dropped = filter_examples(examples, max_nodes=args.max_nodes)
    split = None
    if len({e.project for e in kept}) >= len(SPLITS):
        split = split_by_project(kept, args.fractions, args.seed)
        leaks = find_split_leaks(kept, split)
        if leaks:
            raise DatasetError(f"утечки между разбиениями: {leaks[:5]}")
    else:
        logger.warning("проектов меньше трёх: датасет сохраняется без разбиения")
    DatasetSaver(args.out).save(Dataset(kept, split))
    rows: List[Tuple[str, object]] = [
        ("pairs", report.pairs),
        ("parse_failures", len(report.failures)),
        ("kept", len(kept)),
    ]
    rows.extend((f"dropped.{reason}", dropped[reason]) for reason in DROP_REASONS)
    if split is not None:
        parts = split.partition(kept)
        rows.extend((f"split.{name}", len(parts[name])) for name in SPLITS)
    _emit(format_key_values(rows))
    return EXIT_OK


def _load_splits(path: str) -> Dict[str, List[Example]]:
    dataset = DatasetSaver(path).load()
    examples = dataset.examples
    if dataset.split is None:
        return {"all": examples}
    parts = dataset.split.partition(examples)
    parts["all"] = examples
    return parts


def _config_from_args(args: argparse.Namespace) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=args.lr,
            dropout=args.dropout,
            batch_size=args.batch_size,
            max_steps=args.max_steps,
            seed=args.seed,
            teacher_forcing=not args.no_teacher_forcing,
            use_context=not args.no_context,
            embedding_dim=args.embedding_dim,
            hidden_dim=args.hidden_dim,
            max_decode_length=args.max_decode_length,
            eval_every=args.eval_every,
            patience=args.patience,
            min_subtoken_freq=args.min_subtoken_freq,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    parts = _load_splits(args.dataset)
    train_set = parts.get("train") or parts["all"]
    val_set = parts.get("validation") or train_set
    if "train" not in parts:
        logger.warning("в датасете нет разбиения: обучение и валидация на всех примерах")
    lines: List[str] = []

    def sink(line: str) -> None:
        lines.append(line)
        _emit(line + "\n")

    result = train(train_set, val_set, config, metrics_sink=sink, progress=_progress_enabled(args))
    Path(args.metrics).parent.mkdir(parents=True, exist_ok=True)
    with open(args.metrics, "w", encoding="utf-8") as f:
        f.write("".join(line + "\n" for line in lines))
    CheckpointSaver(args.out).save(Checkpoint(result.params, config))
    _emit(f"best_step={result.best_step} best_val_acc={result.best_val_acc:.6f}\n")
    return EXIT_OK


def _pick_example(path: str, index: int) -> Example:
    examples = DatasetSaver(path).load().examples
    if not 0 <= index < len(examples):
        raise DatasetError(f"в {path} нет примера с индексом {index} (всего {len(examples)})")
    return examples[index]


def cmd_predict(args: argparse.Namespace) -> int:
    checkpoint = CheckpointSaver(args.checkpoint).load()
    example = _pick_example(args.examples, args.index)
    prepared = prepare_example(example)
    prediction = predict(prepared, checkpoint.params, checkpoint.config)
    if args.emit == "script":
        _emit("".join(format_path_op(op, with_ids=True) + "\n" for op in prediction.ops))
        return EXIT_OK
    edited = apply_path_ops(prepared.aug, list(prediction.ops))
    _emit(ToyParser().unparse(edited))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint = CheckpointSaver(args.checkpoint).load()
    parts = _load_splits(args.dataset)
    examples = parts.get(args.split, [])
    if not examples:
        raise DatasetError(f"разбиение {args.split!r} пусто")
    prepared = prepare_examples(examples)
    accuracy, predictions = evaluate(prepared, checkpoint.params, checkpoint.config)
    _emit(f"split={args.split} examples={len(examples)} accuracy={accuracy:.6f}\n")
    if args.breakdown:
        table = accuracy_breakdown(
            examples,
            [p.script_indices for p in predictions],
            [p.gold for p in prepared],
            by=args.breakdown,
        )
        _emit(format_table(table))
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    parts = _load_splits(args.dataset)
    if not parts["all"]:
        raise DatasetError(f"датасет {args.dataset} пуст")
    names = [name for name in SPLITS if parts.get(name)] or ["all"]
    _emit(format_stats({name: compute_stats(parts[name]) for name in names}, pretty=args.pretty))
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    written = generate_corpus(
        args.out, projects=args.projects, pairs=args.pairs, seed=args.seed, families=args.families
    )
    _emit(format_key_values([("pairs", written), ("out", args.out)]))
    return EXIT_OK


def cmd_candidates(args: argparse.Namespace) -> int:
    tree = _read_tree(args.before, args.lang)
    if args.context_before and args.context_after:
        c_before = _read_tree(args.context_before, args.lang)
        c_after = _read_tree(args.context_after, args.lang)
        aug = augment(tree, diff(c_before, c_after), c_before)
    else:
        aug = augment(tree)
    _emit(format_candidates(enumerate_candidates(aug)))
    return EXIT_OK


def _fractions_arg(s: str) -> Tuple[float, float, float]:
    try:
        return parse_fractions(s)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _families_arg(s: str) -> List[str]:
    families = [f.strip() for f in s.split(",") if f.strip()]
    unknown = [f for f in families if f not in FAMILIES]
    if unknown or not families:
        raise argparse.ArgumentTypeError(f"неизвестные шаблоны: {unknown}; доступны {sorted(FAMILIES)}")
    return families


def _add_lang(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--lang", choices=("auto", "toy", "sexpr"), default="auto", help="формат входа (auto: .toy — демо-язык)"
    )


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    parser = _ArgumentParser(prog="edit-garden", description="Предсказание правок кода по правкам контекста.")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="уровень логирования (по умолчанию из окружения)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diff", help="скрипт правок между двумя деревьями")
    p.add_argument("before")
    p.add_argument("after")
    p.add_argument("--format", choices=("ops", "paths"), default="ops")
    _add_lang(p)
    p.set_defaults(handler=cmd_diff)

    p = sub.add_parser("apply", help="применить скрипт правок")
    p.add_argument("before")
    p.add_argument("script")
    _add_lang(p)
    p.set_defaults(handler=cmd_apply)

    p = sub.add_parser("ingest", help="собрать датасет из корпуса пар")
    p.add_argument("corpus", nargs="?", default=CORPUS_ROOT_STR)
    p.add_argument("--out", default=DATASET_PATH_STR)
    p.add_argument("--radius", type=int, default=CONTEXT_RADIUS)
    p.add_argument("--max-nodes", type=int, default=MAX_NODES)
    p.add_argument("--fractions", type=_fractions_arg, default="0.8,0.1,0.1", help="доли train/validation/test")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train", help="обучить модель")
    p.add_argument("dataset", nargs="?", default=DATASET_PATH_STR)
    p.add_argument("--out", default=CHECKPOINT_PATH_STR)
    p.add_argument("--metrics", default=METRICS_PATH_STR)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--no-context", action="store_true", help="не использовать правки контекста")
    p.add_argument("--no-teacher-forcing", action="store_true")
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--dropout", type=float, default=defaults.dropout)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--max-steps", type=int, default=defaults.max_steps)
    p.add_argument("--embedding-dim", type=int, default=defaults.embedding_dim)
    p.add_argument("--hidden-dim", type=int, default=defaults.hidden_dim)
    p.add_argument("--max-decode-length", type=int, default=defaults.max_decode_length)
    p.add_argument("--eval-every", type=int, default=defaults.eval_every)
    p.add_argument("--patience", type=int, default=defaults.patience)
    p.add_argument("--min-subtoken-freq", type=int, default=defaults.min_subtoken_freq)
    p.add_argument("--quiet", action="store_true", help="без индикатора прогресса")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="предсказать правку примера")
    p.add_argument("checkpoint")
    p.add_argument("examples", help="файл датасета")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--emit", choices=("script", "code"), default="script")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="точность точного совпадения")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--split", choices=SPLITS + ("all",), default="test")
    p.add_argument("--breakdown", choices=tuple(BREAKDOWN_BINS))
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("stats", help="статистика датасета")
    p.add_argument("dataset", nargs="?", default=DATASET_PATH_STR)
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("generate", help="синтетический корпус")
    p.add_argument("out")
    p.add_argument("--projects", type=int, default=4)
    p.add_argument("--pairs", type=int, default=25)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--families", type=_families_arg, help=f"через запятую из {','.join(FAMILIES)}")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("candidates", help="пронумерованные кандидаты расширенного дерева")
    p.add_argument("before")
    p.add_argument("context_before", nargs="?")
    p.add_argument("context_after", nargs="?")
    _add_lang(p)
    p.set_defaults(handler=cmd_candidates)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    try:
        setup_logging(args.log_level)
    except ValueError as e:
        print(f"edit-garden: {e}", file=sys.stderr)
        return EXIT_USAGE
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except TrainingDivergedError as e:
        print(f"edit-garden: {e}; диагностика: {e.diagnostics}", file=sys.stderr)
        return EXIT_INTERNAL
    except UsageError as e:
        print(f"edit-garden: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (EditGardenError, OSError) as e:
        print(f"edit-garden: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        logger.exception("внутренняя ошибка")
        return EXIT_INTERNAL

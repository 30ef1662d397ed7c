import re
from typing import List, NamedTuple, Optional, Tuple

from src.ast_core import Ast, GrammarVocab, NestedNode
from src.base import TreeParser
from src.errors import InvalidTreeError, ToySyntaxError

TOY_TERMINALS = ("Name", "Literal", "Op")
TOY_VOCAB = GrammarVocab(
    symbols=(
        "Unit",
        "Block",
        "If",
        "Return",
        "Assign",
        "Expr",
        "Call",
        "ArgList",
        "Arg",
        "Navigation",
        "Binary",
        "Unary",
        "Name",
        "Literal",
        "Op",
    ),
    terminals=TOY_TERMINALS,
)

STATEMENT_KINDS = frozenset({"If", "Return", "Assign", "Expr"})
KEYWORDS = frozenset({"if", "else", "return", "true", "false", "null"})

# приоритеты бинарных операторов: чем больше, тем сильнее связывает
_BINARY_LEVELS: Tuple[Tuple[str, ...], ...] = (
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", ">", "<=", ">="),
    ("+", "-"),
    ("*", "/", "%"),
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<string>"(?:\\.|[^"\\\n])*")
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|&&|\|\||[-+*/%<>!=(){};,.])
    """,
    re.VERBOSE,
)


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


class StatementSpan(NamedTuple):
    """Верхнеуровневая инструкция: идентификатор узла и строки (с 1, включительно)."""

    node_id: int
    start_line: int
    end_line: int


def tokenize(source: str) -> List[Token]:
    """
    Разбить исходный текст на токены; пробелы и комментарии выбрасываются.

    :raises ToySyntaxError: неизвестный символ или незакрытая строка
    """
    tokens: List[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ToySyntaxError(f"неожиданный символ {source[pos]!r}", line, pos - line_start + 1)
        group = match.lastgroup or ""
        if group == "nl":
            line += 1
            line_start = match.end()
        elif group not in ("ws", "comment"):
            kind = group
            if group == "ident" and match.group(0) in KEYWORDS:
                kind = "keyword"
            tokens.append(Token(kind, match.group(0), line, pos - line_start + 1))
        pos = match.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _ToyReader:
    """Рекурсивный спуск по списку токенов."""

    def __init__(self, tokens: List[Token]) -> None:
        self.tokens = tokens
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, token: Optional[Token] = None) -> ToySyntaxError:
        at = token or self.current
        found = repr(at.text) if at.kind != "eof" else "конец текста"
        return ToySyntaxError(f"{message}, найдено {found}", at.line, at.column)

    def at(self, text: str) -> bool:
        tok = self.current
        return tok.kind in ("op", "keyword") and tok.text == text

    def take(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"ожидалось {text!r}")
        tok = self.current
        self.pos += 1
        return tok

    def statements_until(self, closing: Optional[str]) -> List[Tuple[NestedNode, int, int]]:
        result: List[Tuple[NestedNode, int, int]] = []
        while not (self.current.kind == "eof" if closing is None else self.at(closing)):
            if self.current.kind == "eof":
                raise self.error(f"ожидалось {closing!r}")
            first = self.current
            node = self.statement()
            last = self.tokens[self.pos - 1]
            result.append((node, first.line, last.line))
        return result

    def statement(self) -> NestedNode:
        if self.at("if"):
            return self.if_statement()
        if self.at("return"):
            self.take("return")
            if self.at(";"):
                self.take(";")
                return ("Return", [])
            value = self.expression()
            self.take(";")
            return ("Return", [value])
        start = self.current
        expr = self.expression()
        if self.at("="):
            if expr[0] not in ("Name", "Navigation"):
                raise self.error("присваивать можно только имени или полю", start)
            self.take("=")
            value = self.expression()
            self.take(";")
            return ("Assign", [expr, value])
        self.take(";")
        return ("Expr", [expr])

    def if_statement(self) -> NestedNode:
        self.take("if")
        self.take("(")
        cond = self.expression()
        self.take(")")
        children: List[NestedNode] = [cond, self.block()]
        if self.at("else"):
            self.take("else")
            children.append(self.if_statement() if self.at("if") else self.block())
        return ("If", children)

    def block(self) -> NestedNode:
        self.take("{")
        body = [node for node, _, _ in self.statements_until("}")]
        self.take("}")
        return ("Block", body)

    def expression(self, level: int = 0) -> NestedNode:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.expression(level + 1)
        while self.current.kind == "op" and self.current.text in _BINARY_LEVELS[level]:
            op = self.current.text
            self.pos += 1
            right = self.expression(level + 1)
            left = ("Binary", [left, ("Op", op), right])
        return left

    def unary(self) -> NestedNode:
        if self.current.kind == "op" and self.current.text in ("!", "-"):
            op = self.current.text
            self.pos += 1
            return ("Unary", [("Op", op), self.unary()])
        return self.postfix()

    def postfix(self) -> NestedNode:
        node = self.primary()
        while True:
            if self.at("."):
                self.take(".")
                tok = self.current
                if tok.kind != "ident":
                    raise self.error("ожидалось имя поля")
                self.pos += 1
                node = ("Navigation", [node, ("Name", tok.text)])
            elif self.at("("):
                self.take("(")
                args: List[NestedNode] = []
                if not self.at(")"):
                    args.append(("Arg", [self.expression()]))
                    while self.at(","):
                        self.take(",")
                        args.append(("Arg", [self.expression()]))
                self.take(")")
                node = ("Call", [node, ("ArgList", args)])
            else:
                return node

    def primary(self) -> NestedNode:
        tok = self.current
        if tok.kind == "ident":
            self.pos += 1
            return ("Name", tok.text)
        if tok.kind in ("number", "string") or (tok.kind == "keyword" and tok.text in ("true", "false", "null")):
            self.pos += 1
            return ("Literal", tok.text)
        if self.at("("):
            self.take("(")
            inner = self.expression()
            self.take(")")
            return inner
        raise self.error("ожидалось выражение")


def parse_toy_with_lines(source: str) -> Tuple[Ast, List[StatementSpan]]:
    """
    Разобрать программу и вернуть строки каждой верхнеуровневой инструкции.

    :param source: текст на демонстрационном языке
    :raises ToySyntaxError: синтаксическая ошибка с позицией
    :return: дерево с корнем Unit и список StatementSpan в порядке инструкций
    """
    reader = _ToyReader(tokenize(source))
    statements = reader.statements_until(None)
    tree = Ast.from_nested(("Unit", [node for node, _, _ in statements]))
    spans = [
        StatementSpan(node_id, start, end)
        for node_id, (_, start, end) in zip(tree[tree.root].children, statements)
    ]
    return tree, spans


def parse_toy(source: str) -> Ast:
    """
    Разобрать программу на демонстрационном языке.

    Пример: "return f(x);" → Unit(Return(Call(Name f, ArgList(Arg(Name x)))))
    """
    return parse_toy_with_lines(source)[0]


class _Printer:
    def __init__(self, tree: Ast) -> None:
        self.tree = tree
        self.lines: List[str] = []

    def fail(self, node_id: int) -> InvalidTreeError:
        node = self.tree[node_id]
        return InvalidTreeError(f"узел {node_id} ({node.kind}) не соответствует демонстрационной грамматике")

    def kids(self, node_id: int, count: Optional[int] = None) -> Tuple[int, ...]:
        children = self.tree[node_id].children
        if count is not None and len(children) != count:
            raise self.fail(node_id)
        return children

    def statement(self, node_id: int, depth: int) -> None:
        node = self.tree[node_id]
        pad = "    " * depth
        if node.kind == "If":
            self.if_chain(node_id, depth, pad)
        elif node.kind == "Return":
            children = self.kids(node_id)
            if len(children) > 1:
                raise self.fail(node_id)
            tail = " " + self.expr(children[0]) if children else ""
            self.lines.append(f"{pad}return{tail};")
        elif node.kind == "Assign":
            target, value = self.kids(node_id, 2)
            self.lines.append(f"{pad}{self.expr(target)} = {self.expr(value)};")
        elif node.kind == "Expr":
            (inner,) = self.kids(node_id, 1)
            self.lines.append(f"{pad}{self.expr(inner)};")
        else:
            raise self.fail(node_id)

    def if_chain(self, node_id: int, depth: int, prefix: str) -> None:
        children = self.kids(node_id)
        if len(children) not in (2, 3) or self.tree[children[1]].kind != "Block":
            raise self.fail(node_id)
        pad = "    " * depth
        self.lines.append(f"{prefix}if ({self.expr(children[0])}) {{")
        for stmt in self.tree[children[1]].children:
            self.statement(stmt, depth + 1)
        if len(children) == 2:
            self.lines.append(pad + "}")
            return
        other = self.tree[children[2]]
        if other.kind == "If":
            self.if_chain(other.id, depth, pad + "} else ")
        elif other.kind == "Block":
            self.lines.append(pad + "} else {")
            for stmt in other.children:
                self.statement(stmt, depth + 1)
            self.lines.append(pad + "}")
        else:
            raise self.fail(other.id)

    def operand(self, node_id: int) -> str:
        text = self.expr(node_id)
        return f"({text})" if self.tree[node_id].kind in ("Binary", "Unary") else text

    def expr(self, node_id: int) -> str:
        node = self.tree[node_id]
        if node.kind in ("Name", "Literal") and node.value is not None:
            return node.value
        if node.kind == "Binary":
            left, op, right = self.kids(node_id, 3)
            return f"{self.operand(left)} {self.op(op)} {self.operand(right)}"
        if node.kind == "Unary":
            op, inner = self.kids(node_id, 2)
            return f"{self.op(op)}{self.operand(inner)}"
        if node.kind == "Navigation":
            base, field = self.kids(node_id, 2)
            if self.tree[field].kind != "Name":
                raise self.fail(node_id)
            return f"{self.operand(base)}.{self.expr(field)}"
        if node.kind == "Call":
            callee, arglist = self.kids(node_id, 2)
            if self.tree[arglist].kind != "ArgList":
                raise self.fail(node_id)
            args = []
            for arg in self.tree[arglist].children:
                if self.tree[arg].kind != "Arg":
                    raise self.fail(arg)
                (inner,) = self.kids(arg, 1)
                args.append(self.expr(inner))
            return f"{self.operand(callee)}({', '.join(args)})"
        raise self.fail(node_id)

    def op(self, node_id: int) -> str:
        node = self.tree[node_id]
        if node.kind != "Op" or node.value is None:
            raise self.fail(node_id)
        return node.value


def pretty_print_toy(tree: Ast) -> str:
    """
    Напечатать дерево демонстрационного языка; результат разбирается в изоморфное дерево.

    Вложенные бинарные и унарные выражения всегда берутся в скобки. Корень Block
    печатается как последовательность его инструкций без скобок и разбирается обратно
    в Unit с теми же детьми; Block на месте инструкции в грамматике не встречается.

    :raises InvalidTreeError: дерево не соответствует грамматике
    """
    printer = _Printer(tree)
    root = tree[tree.root]
    if root.kind in ("Unit", "Block"):
        for child in root.children:
            printer.statement(child, 0)
    elif root.kind in STATEMENT_KINDS:
        printer.statement(root.id, 0)
    else:
        return printer.expr(root.id) + "\n"
    return "".join(line + "\n" for line in printer.lines)


class ToyParser(TreeParser):
    """Фронтенд демонстрационного языка (вместо парсера настоящего языка)."""

    def parse(self, text: str) -> Ast:
        return parse_toy(text)

    def unparse(self, tree: Ast) -> str:
        return pretty_print_toy(tree)

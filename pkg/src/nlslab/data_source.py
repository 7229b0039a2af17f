from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from parsimonious.exceptions import ParseError, VisitationError
from parsimonious.grammar import Grammar
from parsimonious.nodes import NodeVisitor

from .errors import InvalidParameterError


__all__ = ["DataSource", "SourceKind", "parse_data_source"]


_SOURCE_GRAMMAR = Grammar(
    r"""
    source = builtin / path
    builtin = "builtin:" (lambda_q / gaussian)
    lambda_q = "lambdaQ:" number
    gaussian = "gaussian:" number ":" number
    number = ~"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?"
    path = !"builtin:" ~".+"
    """,
)


class SourceKind(str, Enum):
    FILE = "file"
    SOLITON = "lambdaQ"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class DataSource:
    """Where an evolution datum comes from: a CSV field file or a built-in profile."""

    kind: SourceKind
    path: Path | None = None
    lam: float | None = None
    amplitude: float | None = None
    width: float | None = None

    def describe(self) -> str:
        if self.kind == SourceKind.FILE:
            return str(self.path)
        if self.kind == SourceKind.SOLITON:
            return f"builtin:lambdaQ:{self.lam:g}"
        return f"builtin:gaussian:{self.amplitude:g}:{self.width:g}"


class _SourceVisitor(NodeVisitor):
    unwrapped_exceptions = (InvalidParameterError,)

    def visit_source(self, _node, visited_children):
        (source,) = visited_children
        return source

    def visit_builtin(self, _node, visited_children):
        _, (source,) = visited_children
        return source

    def visit_lambda_q(self, _node, visited_children):
        _, lam = visited_children
        if not lam > 0:
            raise InvalidParameterError(f"soliton scale must be positive, got {lam!r}")
        return DataSource(SourceKind.SOLITON, lam=lam)

    def visit_gaussian(self, _node, visited_children):
        _, amplitude, _, width = visited_children
        if not width > 0:
            raise InvalidParameterError(f"gaussian width must be positive, got {width!r}")
        return DataSource(SourceKind.GAUSSIAN, amplitude=amplitude, width=width)

    def visit_number(self, node, _visited_children):
        return float(node.text)

    def visit_path(self, node, _visited_children):
        return DataSource(SourceKind.FILE, path=Path(node.text.strip()).expanduser())

    def generic_visit(self, node, visited_children):
        return visited_children or node.text


def parse_data_source(raw: str) -> DataSource:
    text = (raw or "").strip()
    try:
        tree = _SOURCE_GRAMMAR.parse(text)
        return _SourceVisitor().visit(tree)
    except VisitationError as exc:
        raise InvalidParameterError(f"cannot read data source {raw!r}") from exc
    except ParseError as exc:
        raise InvalidParameterError(
            f"data source {raw!r} is neither a path nor builtin:lambdaQ:<scale> "
            "or builtin:gaussian:<amplitude>:<width>"
        ) from exc

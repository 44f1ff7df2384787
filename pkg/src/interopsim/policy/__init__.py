"""Declarative access-control: parser, AST, evaluator, aggregates."""

from .ast import (
    AndExpr,
    ArithExpr,
    Builtin,
    CmpExpr,
    Lit,
    NotExpr,
    OrExpr,
    Policy,
    Rule,
    conjuncts,
    expr_str,
    print_policy,
)
from .evaluator import (
    AccessRequest,
    AggExpr,
    ChainEvalContext,
    Decision,
    EvalContext,
    MapEvalContext,
    eval_aggregate,
    evaluate,
    match_resource,
)
from .parser import parse_policy, tokenize

__all__ = [
    "AccessRequest",
    "AggExpr",
    "AndExpr",
    "ArithExpr",
    "Builtin",
    "ChainEvalContext",
    "CmpExpr",
    "Decision",
    "EvalContext",
    "Lit",
    "MapEvalContext",
    "NotExpr",
    "OrExpr",
    "Policy",
    "Rule",
    "conjuncts",
    "eval_aggregate",
    "evaluate",
    "expr_str",
    "match_resource",
    "parse_policy",
    "print_policy",
    "tokenize",
]

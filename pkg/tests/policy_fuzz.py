"""Random generator of grammatically valid policy programs."""

from __future__ import annotations

import random

ACTIONS = ["read", "write", "invoke"]
IDENTS = ["bids", "auction", "escrow", "balance", "agg", "x9", "_tmp", "status"]
STRINGS = ["open", "closed", "a.b", "", "he\\\"llo", "line\\nbreak", "bids."]
RELOPS = ["==", "!=", "<", "<=", ">", ">="]


def gen_term(rng: random.Random, depth: int) -> str:
    choices = ["int", "string", "true", "false", "null", "builtin"]
    if depth > 0:
        choices.append("arith")
    kind = rng.choice(choices)
    if kind == "int":
        return str(rng.randint(0, 10_000))
    if kind == "string":
        return f'"{rng.choice(STRINGS)}"'
    if kind in ("true", "false", "null"):
        return kind
    if kind == "arith":
        op = rng.choice(["+", "-"])
        return f"{gen_term(rng, depth - 1)} {op} {gen_term(rng, depth - 1)}"
    name = rng.choice(
        ["caller.id", "caller.chain", "block.height", "state", "exists", "count", "sum", "avg"]
    )
    if name in ("caller.id", "caller.chain", "block.height"):
        return name
    if name in ("state", "exists", "avg"):
        return f"{name}({gen_term(rng, depth - 1)})"
    if name == "count":
        args = ", ".join(gen_term(rng, depth - 1) for _ in range(3))
        return f"count({args})"
    # sum: 1-arg or 3-arg form
    if rng.random() < 0.5:
        return f"sum({gen_term(rng, depth - 1)})"
    args = ", ".join(gen_term(rng, depth - 1) for _ in range(3))
    return f"sum({args})"


def gen_expr(rng: random.Random, depth: int) -> str:
    kind = rng.choice(["cmp", "term", "not", "and", "or", "paren"] if depth > 0 else ["cmp", "term"])
    if kind == "cmp":
        return f"{gen_term(rng, depth)} {rng.choice(RELOPS)} {gen_term(rng, depth)}"
    if kind == "term":
        return gen_term(rng, depth)
    if kind == "not":
        return "!" + gen_expr(rng, 0)  # operand stays at cmp level
    if kind == "and":
        return f"{gen_expr(rng, depth - 1)} && {gen_expr(rng, depth - 1)}"
    if kind == "or":
        return f"{gen_expr(rng, depth - 1)} || {gen_expr(rng, depth - 1)}"
    return f"({gen_expr(rng, depth - 1)})"


def gen_resource(rng: random.Random) -> str:
    segs = [rng.choice(IDENTS) for _ in range(rng.randint(1, 4))]
    if rng.random() < 0.3:
        segs.append("*")
    return ".".join(segs)


def gen_rule(rng: random.Random) -> str:
    rule = f"allow {rng.choice(ACTIONS)} on {gen_resource(rng)}"
    if rng.random() < 0.7:
        rule += f" when {gen_expr(rng, rng.randint(0, 3))}"
    return rule + ";"


def gen_policy(rng: random.Random) -> str:
    lines = []
    if rng.random() < 0.2:
        lines.append("# generated policy")
    for _ in range(rng.randint(1, 4)):
        lines.append(gen_rule(rng))
    return "\n".join(lines) + "\n"

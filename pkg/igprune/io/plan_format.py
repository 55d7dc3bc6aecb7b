"""Prune plan directive files.

One directive per line::

    RETAIN 0
    DISCARD 3
    MERGE 2 INTO 1
    RATIO 0.5

Blank lines and ``#`` comments are ignored. ``RATIO`` appears exactly once.
"""

import os

from igprune.importance.plan import PlanError, PrunePlan

__all__ = ["PlanFormatError", "format_plan", "parse_plan", "save_plan", "load_plan"]


class PlanFormatError(ValueError):
    pass


def format_plan(plan: PrunePlan) -> str:
    lines = [f"RETAIN {j}" for j in plan.retained]
    lines += [f"DISCARD {j}" for j in plan.pruned_discard]
    lines += [f"MERGE {j} INTO {plan.merge_target[j]}" for j in plan.pruned_merge]
    lines.append(f"RATIO {plan.achieved_ratio!r}")
    return "\n".join(lines) + "\n"


def _index(token: str, lineno: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise PlanFormatError(f"line {lineno}: {token!r} is not a layer index") from None
    if value < 0:
        raise PlanFormatError(f"line {lineno}: layer index must be ≥ 0, got {value}")
    return value


def parse_plan(text: str) -> PrunePlan:
    retained: list[int] = []
    discard: list[int] = []
    merge: dict[int, int] = {}
    ratio = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        match words:
            case ["RETAIN", j]:
                retained.append(_index(j, lineno))
            case ["DISCARD", j]:
                discard.append(_index(j, lineno))
            case ["MERGE", j, "INTO", i]:
                donor = _index(j, lineno)
                if donor in merge:
                    raise PlanFormatError(f"line {lineno}: layer {donor} is merged twice")
                merge[donor] = _index(i, lineno)
            case ["RATIO", x]:
                if ratio is not None:
                    raise PlanFormatError(f"line {lineno}: second RATIO directive")
                try:
                    ratio = float(x)
                except ValueError:
                    raise PlanFormatError(f"line {lineno}: {x!r} is not a number") from None
            case _:
                raise PlanFormatError(f"line {lineno}: unknown directive {raw.strip()!r}")
    if ratio is None:
        raise PlanFormatError("plan has no RATIO directive")
    try:
        return PrunePlan(tuple(retained), tuple(discard), tuple(sorted(merge)), merge, ratio)
    except PlanError as e:
        raise PlanFormatError(f"inconsistent plan: {e}") from None


def save_plan(path: str | os.PathLike, plan: PrunePlan) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_plan(plan))


def load_plan(path: str | os.PathLike) -> PrunePlan:
    with open(path, encoding="utf-8") as f:
        return parse_plan(f.read())

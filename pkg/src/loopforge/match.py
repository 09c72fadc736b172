"""Match expressions targeting rule-expansion stacks and instructions.

A pattern like ``g$three < h$two`` reads innermost-first: the first
level names the innermost expansion frame, ``<`` separates outer
levels, ``...`` matches any number of frames.  The match anchors at the
innermost frame and is open-ended outward.  Globs are shell-style.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass

from .errors import ParseError


@dataclass(frozen=True)
class LevelPattern:
    id_glob: str
    tag_glob: str | None = None


class Ellipsis_:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "..."


ELLIPSIS = Ellipsis_()


@dataclass(frozen=True)
class MatchExpr:
    levels: tuple  # innermost first; LevelPattern or ELLIPSIS

    def __post_init__(self):
        if not any(isinstance(p, LevelPattern) for p in self.levels):
            raise ParseError("match expression needs at least one level")
        for a, b in zip(self.levels, self.levels[1:]):
            if a is ELLIPSIS and b is ELLIPSIS:
                raise ParseError("adjacent '...' in match expression")


@dataclass(frozen=True)
class StackFrame:
    kind: str         # "rule-invocation" or "instruction"
    id: str
    tag: object = None  # invocation tag (str or None) / instruction tag set


def parse_match(text):
    levels = []
    for part in text.split("<"):
        part = part.strip()
        if not part:
            raise ParseError(f"empty level in match expression {text!r}")
        if part == "...":
            levels.append(ELLIPSIS)
            continue
        if "$" in part:
            id_glob, tag_glob = part.split("$", 1)
            id_glob = id_glob.strip()
            tag_glob = tag_glob.strip()
            if not id_glob or not tag_glob:
                raise ParseError(f"malformed level {part!r}")
            levels.append(LevelPattern(id_glob, tag_glob))
        else:
            levels.append(LevelPattern(part))
    return MatchExpr(tuple(levels))


def as_match(obj):
    """Accept an already-parsed MatchExpr or pattern text."""
    if isinstance(obj, MatchExpr):
        return obj
    return parse_match(obj)


def _glob(pattern, text):
    return fnmatch.fnmatchcase(text, pattern)


def _level_matches(pattern, frame):
    if not _glob(pattern.id_glob, frame.id):
        return False
    if pattern.tag_glob is None:
        return True
    if frame.kind == "instruction":
        tags = frame.tag or ()
        if not tags:
            return pattern.tag_glob == "*"
        return any(_glob(pattern.tag_glob, t) for t in tags)
    if frame.tag is None:
        # a tagless invocation satisfies only the unconstrained glob
        return pattern.tag_glob == "*"
    return _glob(pattern.tag_glob, frame.tag)


def matches(match_expr, stack):
    """Match against a stack ordered innermost-first.

    The level sequence must match a prefix of the stack starting at the
    innermost frame; frames beyond the last level are ignored.
    """
    levels = match_expr.levels
    n_levels, n_stack = len(levels), len(stack)

    def rec(li, si):
        if li == n_levels:
            return True  # open outward
        if levels[li] is ELLIPSIS:
            return any(rec(li + 1, sj) for sj in range(si, n_stack + 1))
        if si >= n_stack:
            return False
        if not _level_matches(levels[li], stack[si]):
            return False
        return rec(li + 1, si + 1)

    return rec(0, 0)


def instruction_frame(insn):
    return StackFrame("instruction", insn.id, frozenset(insn.tags))


def invocation_frame(invocation):
    return StackFrame("rule-invocation", invocation.rule, invocation.tag)

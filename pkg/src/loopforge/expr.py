"""Expression IR, parsers for the native kernel language, substitution.

Expression trees are immutable dataclasses.  The same parser serves the
native kernel language and (via ``dialect="fortran"``) the Fortran
front-end; in the Fortran dialect ``name(args)`` always parses as a
provisional :class:`Call`, to be reclassified by the lowering pass, and
the dotted comparison operators (``.ge.`` etc.) map onto the normal
:class:`Compare` nodes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError, ValidationError
from .polyset import AffineExpr


# {{{ node types

@dataclass(frozen=True)
class Expression:
    pass


@dataclass(frozen=True)
class IntLit(Expression):
    value: int


@dataclass(frozen=True)
class FloatLit(Expression):
    value: float


@dataclass(frozen=True)
class VarRef(Expression):
    name: str


@dataclass(frozen=True)
class Subscript(Expression):
    array: str
    index: tuple


@dataclass(frozen=True)
class Call(Expression):
    function: str
    args: tuple


@dataclass(frozen=True)
class RuleInvocation(Expression):
    rule: str
    tag: str | None
    args: tuple


@dataclass(frozen=True)
class BinOp(Expression):
    op: str  # + - * / **
    left: Expression
    right: Expression


@dataclass(frozen=True)
class UnOp(Expression):
    op: str  # neg, not
    operand: Expression


@dataclass(frozen=True)
class Compare(Expression):
    op: str  # < <= > >= == !=
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Reduction(Expression):
    op: str  # sum, product, min, max
    iname: str
    body: Expression


REDUCTION_OPS = ("sum", "product", "min", "max")

INTRINSICS = ("sqrt", "sin", "cos", "exp", "abs", "min", "max")

# }}}


# {{{ substitution rules and statements

@dataclass(frozen=True)
class SubstitutionRule:
    """Named expression macro: ``name(params) := body``.

    *free_iname_map* holds canonically renamed free inames of the body
    (e.g. ``i_0``) together with the expression each re-binds to at the
    invocation site; transforms that rewrite iname uses also rewrite
    these bindings.
    """

    name: str
    params: tuple
    body: Expression
    free_iname_map: tuple = ()  # ((renamed_name, Expression), ...)

    def __post_init__(self):
        if len(set(self.params)) != len(self.params):
            raise ValidationError(
                f"rule {self.name}: duplicate parameters {self.params}")


@dataclass(frozen=True)
class InstructionStmt:
    lhs: Expression
    rhs: Expression
    is_temporary_decl: bool = False


@dataclass(frozen=True)
class RuleStmt:
    rule: SubstitutionRule

# }}}


# {{{ tokenizer

_NUM_RE = re.compile(
    r"(?:\d+\.\d*|\.\d+|\d+)(?:[eEdD][+-]?\d+)?")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_DOTOP_RE = re.compile(r"\.(ge|le|gt|lt|eq|ne|not|and|or)\.", re.I)

_DOTOP_MAP = {"ge": ">=", "le": "<=", "gt": ">", "lt": "<",
              "eq": "==", "ne": "!="}

_SYMBOLS = ("**", ":=", "<>", "<=", ">=", "==", "!=",
            "<", ">", "=", "+", "-", "*", "/", "(", ")", "[", "]",
            ",", "$")


class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind, text, pos):
        self.kind = kind  # num, name, op, end
        self.text = text
        self.pos = pos

    def __repr__(self):
        return f"<{self.kind} {self.text!r}@{self.pos}>"


def tokenize(text, dialect="native"):
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        if dialect == "fortran":
            m = _DOTOP_RE.match(text, pos)
            if m:
                word = m.group(1).lower()
                if word in ("and", "or", "not"):
                    raise ParseError(
                        f"logical operator .{word}. is not supported",
                        span=(None, None, pos))
                toks.append(_Token("op", _DOTOP_MAP[word], pos))
                pos = m.end()
                continue
        m = _NUM_RE.match(text, pos)
        if m:
            toks.append(_Token("num", m.group(), pos))
            pos = m.end()
            continue
        m = _NAME_RE.match(text, pos)
        if m:
            toks.append(_Token("name", m.group(), pos))
            pos = m.end()
            continue
        for sym in _SYMBOLS:
            if text.startswith(sym, pos):
                if sym == "$" and dialect == "fortran":
                    raise ParseError("'$' tags are not Fortran syntax",
                                     span=(None, None, pos))
                toks.append(_Token("op", sym, pos))
                pos += len(sym)
                break
        else:
            raise ParseError(f"unexpected character {ch!r}",
                             span=(None, None, pos))
    toks.append(_Token("end", "", n))
    return toks

# }}}


# {{{ expression parser

_CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")


class _ExprParser:
    def __init__(self, toks, dialect="native"):
        self.toks = toks
        self.i = 0
        self.dialect = dialect

    def peek(self, ahead=0):
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.advance()
        if t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text!r}",
                             span=(None, None, t.pos))
        return t

    def at_end(self):
        return self.peek().kind == "end"

    def parse_expression(self):
        left = self.parse_sum()
        if self.peek().text in _CMP_OPS:
            op = self.advance().text
            right = self.parse_sum()
            return Compare(op, left, right)
        return left

    def parse_sum(self):
        e = self.parse_product()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            e = BinOp(op, e, self.parse_product())
        return e

    def parse_product(self):
        e = self.parse_unary()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            e = BinOp(op, e, self.parse_unary())
        return e

    def parse_unary(self):
        if self.peek().text == "-":
            self.advance()
            return UnOp("neg", self.parse_unary())
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        if self.peek().text == "**":
            self.advance()
            return BinOp("**", base, self.parse_unary())
        return base

    def parse_atom(self):
        t = self.advance()
        if t.kind == "num":
            return _number(t)
        if t.text == "(":
            e = self.parse_expression()
            self.expect(")")
            return e
        if t.kind == "name":
            return self.parse_name_atom(t)
        raise ParseError(f"expected expression, found {t.text!r}",
                         span=(None, None, t.pos))

    def parse_name_atom(self, t):
        name = t.text
        tag = None
        if self.peek().text == "$":
            self.advance()
            tagtok = self.advance()
            if tagtok.kind != "name":
                raise ParseError("expected tag after '$'",
                                 span=(None, None, tagtok.pos))
            tag = tagtok.text
        if self.peek().text == "(":
            self.advance()
            args = self.parse_args(")")
            if tag is not None:
                return RuleInvocation(name, tag, tuple(args))
            if (self.dialect == "native" and name in ("sum", "product")
                    and len(args) == 2 and isinstance(args[0], VarRef)):
                return Reduction(name, args[0].name, args[1])
            return Call(name, tuple(args))
        if tag is not None:
            raise ParseError(f"tagged reference {name}${tag} needs arguments",
                             span=(None, None, t.pos))
        if self.peek().text == "[":
            self.advance()
            idx = self.parse_args("]")
            if not idx:
                raise ParseError("empty subscript",
                                 span=(None, None, self.peek().pos))
            return Subscript(name, tuple(idx))
        return VarRef(name)

    def parse_args(self, closer):
        args = []
        if self.peek().text == closer:
            self.advance()
            return args
        args.append(self.parse_expression())
        while self.peek().text == ",":
            self.advance()
            args.append(self.parse_expression())
        self.expect(closer)
        return args


def _number(tok):
    text = tok.text.lower().replace("d", "e")
    if re.fullmatch(r"\d+", text):
        return IntLit(int(text))
    return FloatLit(float(text))


def parse_expr(text, dialect="native"):
    p = _ExprParser(tokenize(text, dialect), dialect)
    e = p.parse_expression()
    if not p.at_end():
        t = p.peek()
        raise ParseError(f"trailing input {t.text!r}",
                         span=(None, None, t.pos))
    return e

# }}}


# {{{ statement parsing

def parse_statement(text):
    """Classify one line of the native kernel language.

    ``name(args) := expr`` and ``name := expr`` define rules,
    ``<> name = expr`` declares an auto-typed temporary, any other
    ``lvalue = expr`` is an instruction.
    """
    toks = tokenize(text)
    # rule definitions: ':=' at top level
    depth = 0
    assign_idx = None
    for i, t in enumerate(toks):
        if t.text in ("(", "["):
            depth += 1
        elif t.text in (")", "]"):
            depth -= 1
        elif t.text == ":=" and depth == 0:
            return _parse_rule_stmt(toks, i)
        elif t.text == "=" and depth == 0 and assign_idx is None:
            assign_idx = i
    if assign_idx is None:
        raise ParseError("statement is neither assignment nor rule "
                         f"definition: {text!r}")
    return _parse_instruction_stmt(toks, assign_idx)


def _parse_rule_stmt(toks, op_idx):
    head = toks[:op_idx]
    if not head or head[0].kind != "name":
        pos = head[0].pos if head else 0
        raise ParseError("rule head must be an identifier",
                         span=(None, None, pos))
    name = head[0].text
    params = []
    if len(head) > 1:
        if head[1].text != "(" or head[-1].text != ")":
            raise ParseError("malformed rule parameter list",
                             span=(None, None, head[1].pos))
        expect_name = True
        for t in head[2:-1]:
            if expect_name:
                if t.kind != "name":
                    raise ParseError("expected parameter name",
                                     span=(None, None, t.pos))
                params.append(t.text)
            elif t.text != ",":
                raise ParseError("expected ','", span=(None, None, t.pos))
            expect_name = not expect_name
        if params and expect_name:
            raise ParseError("trailing ',' in parameter list",
                             span=(None, None, head[-1].pos))
    body = _parse_remainder(toks, op_idx + 1)
    return RuleStmt(SubstitutionRule(name, tuple(params), body))


def _parse_instruction_stmt(toks, op_idx):
    is_temp = False
    head = toks[:op_idx]
    if head and head[0].text == "<>":
        is_temp = True
        head = head[1:]
        if len(head) != 1 or head[0].kind != "name":
            pos = head[0].pos if head else 0
            raise ParseError("'<>' declares a single scalar name",
                             span=(None, None, pos))
    p = _ExprParser(head + [_Token("end", "", 0)])
    lhs = p.parse_expression()
    if not p.at_end():
        raise ParseError("malformed assignment target")
    if not isinstance(lhs, (VarRef, Subscript)):
        raise ParseError(
            f"cannot assign to {type(lhs).__name__}: not a variable or "
            "subscript")
    rhs = _parse_remainder(toks, op_idx + 1)
    return InstructionStmt(lhs, rhs, is_temp)


def _parse_remainder(toks, start):
    p = _ExprParser(toks[start:])
    e = p.parse_expression()
    if not p.at_end():
        t = p.peek()
        raise ParseError(f"trailing input {t.text!r}",
                         span=(None, None, t.pos))
    return e


def split_body_lines(body):
    """Physical lines -> logical statements: '#' comments, '\\' joins."""
    logical = []
    pending = ""
    for raw in body.splitlines():
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip() and not pending:
            continue
        if line.endswith("\\"):
            pending += line[:-1] + " "
            continue
        logical.append((pending + line).strip())
        pending = ""
    if pending.strip():
        logical.append(pending.strip())
    return [ln for ln in logical if ln]

# }}}


# {{{ tree walks

def children(e):
    if isinstance(e, (BinOp, Compare)):
        return (e.left, e.right)
    if isinstance(e, UnOp):
        return (e.operand,)
    if isinstance(e, Subscript):
        return e.index
    if isinstance(e, (Call, RuleInvocation)):
        return e.args
    if isinstance(e, Reduction):
        return (e.body,)
    return ()


def rebuild(e, new_children):
    if isinstance(e, Compare):
        return Compare(e.op, *new_children)
    if isinstance(e, BinOp):
        return BinOp(e.op, *new_children)
    if isinstance(e, UnOp):
        return UnOp(e.op, new_children[0])
    if isinstance(e, Subscript):
        return Subscript(e.array, tuple(new_children))
    if isinstance(e, Call):
        return Call(e.function, tuple(new_children))
    if isinstance(e, RuleInvocation):
        return RuleInvocation(e.rule, e.tag, tuple(new_children))
    if isinstance(e, Reduction):
        return Reduction(e.op, e.iname, new_children[0])
    assert not new_children
    return e


def free_variables(e):
    """Array names, scalar names and inames appearing free.

    Callee names of Call/RuleInvocation nodes are not variables;
    reduction inames are bound.
    """
    out = set()

    def walk(node, bound):
        if isinstance(node, VarRef):
            if node.name not in bound:
                out.add(node.name)
            return
        if isinstance(node, Subscript):
            out.add(node.array)
        if isinstance(node, Reduction):
            walk(node.body, bound | {node.iname})
            return
        for ch in children(node):
            walk(ch, bound)

    walk(e, frozenset())
    return out


def substitute(e, bindings):
    """Capture-avoiding substitution of variable names by expressions.

    Reduction inames shadow same-named bindings.  An actual capture (a
    binding value mentioning a reduction iname it gets moved under) is an
    error here; kernel-level expansion renames reduction inames first.
    """
    if not bindings:
        return e

    def walk(node, live):
        if isinstance(node, VarRef):
            repl = live.get(node.name)
            return repl if repl is not None else node
        if isinstance(node, Reduction):
            inner = {k: v for k, v in live.items() if k != node.iname}
            for k, v in inner.items():
                if node.iname in free_variables(v):
                    raise ValidationError(
                        f"substituting {k} captures reduction iname "
                        f"'{node.iname}'")
            if not inner:
                return node
            return Reduction(node.op, node.iname, walk(node.body, inner))
        ch = children(node)
        if not ch:
            return node
        new = [walk(c, live) for c in ch]
        if all(a is b for a, b in zip(new, ch)):
            return node
        return rebuild(node, new)

    return walk(e, dict(bindings))


def rename_reduction_iname(e, old, new):
    def walk(node):
        if isinstance(node, Reduction) and node.iname == old:
            return Reduction(node.op, new,
                             substitute(walk(node.body),
                                        {old: VarRef(new)}))
        ch = children(node)
        if not ch:
            return node
        return rebuild(node, [walk(c) for c in ch])

    return walk(e)


def reduction_inames(e):
    out = set()

    def walk(node):
        if isinstance(node, Reduction):
            out.add(node.iname)
        for ch in children(node):
            walk(ch)

    walk(e)
    return out

# }}}


# {{{ rendering

_PREC = {"cmp": 1, "+": 2, "-": 2, "*": 3, "/": 3, "neg": 4, "**": 5}


def render_expr(e):
    """Deterministic text form in the native language (IR dumps)."""
    return _render(e, 0)


def _render(e, parent_prec):
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, FloatLit):
        return repr(e.value)
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, Subscript):
        return f"{e.array}[{', '.join(render_expr(i) for i in e.index)}]"
    if isinstance(e, Call):
        return f"{e.function}({', '.join(render_expr(a) for a in e.args)})"
    if isinstance(e, RuleInvocation):
        head = e.rule if e.tag is None else f"{e.rule}${e.tag}"
        return f"{head}({', '.join(render_expr(a) for a in e.args)})"
    if isinstance(e, Reduction):
        return f"{e.op}({e.iname}, {render_expr(e.body)})"
    if isinstance(e, Compare):
        text = f"{_render(e.left, _PREC['cmp'] + 1)} {e.op} " \
               f"{_render(e.right, _PREC['cmp'] + 1)}"
        return f"({text})" if parent_prec > _PREC["cmp"] else text
    if isinstance(e, UnOp):
        prec = _PREC["neg"]
        if e.op == "neg":
            text = f"-{_render(e.operand, prec)}"
        else:
            text = f"not {_render(e.operand, prec)}"
        return f"({text})" if parent_prec > prec else text
    if isinstance(e, BinOp):
        prec = _PREC[e.op]
        if e.op == "**":
            # right-associative
            lhs = _render(e.left, prec + 1)
            rhs = _render(e.right, prec)
            text = f"{lhs}**{rhs}"
        elif e.op in ("*", "/"):
            lhs = _render(e.left, prec)
            rhs = _render(e.right, prec + 1)
            text = f"{lhs}{e.op}{rhs}"
        else:
            lhs = _render(e.left, prec)
            rhs = _render(e.right, prec + 1)
            text = f"{lhs} {e.op} {rhs}"
        return f"({text})" if parent_prec > prec else text
    raise AssertionError(f"unrenderable node {e!r}")

# }}}


# {{{ affine bridge and folding

def expression_to_affine(e):
    """Affine view of an integer expression, or None if not affine."""
    if isinstance(e, IntLit):
        return AffineExpr.const(e.value)
    if isinstance(e, VarRef):
        return AffineExpr.var(e.name)
    if isinstance(e, UnOp) and e.op == "neg":
        a = expression_to_affine(e.operand)
        return None if a is None else -a
    if isinstance(e, BinOp):
        left = expression_to_affine(e.left)
        right = expression_to_affine(e.right)
        if left is None or right is None:
            return None
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            if right.is_constant():
                return left * right.constant
            if left.is_constant():
                return right * left.constant
    return None


def affine_to_expression(a):
    """Render an AffineExpr as an Expression: constant first, vars sorted."""
    terms = []
    if a.constant:
        terms.append(IntLit(a.constant))
    for name in sorted(a.coeffs):
        c = a.coeffs[name]
        if c == 1:
            terms.append(VarRef(name))
        elif c == -1:
            terms.append(UnOp("neg", VarRef(name)))
        else:
            terms.append(BinOp("*", IntLit(c), VarRef(name)))
    if not terms:
        return IntLit(0)
    out = terms[0]
    for t in terms[1:]:
        out = BinOp("+", out, t)
    return out


def fold_index_expr(e):
    """Simplify integer index arithmetic where it is affine."""
    a = expression_to_affine(e)
    return affine_to_expression(a) if a is not None else e

# }}}

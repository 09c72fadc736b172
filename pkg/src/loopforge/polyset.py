"""Restricted integer-set engine for loop domains.

A :class:`BasicSet` is a conjunction of affine equality/inequality
constraints over a tuple of set dimensions (inames) and symbolic
parameters.  This deliberately covers only what loop domains need:

* no unions, no explicit existential quantifiers,
* projection is Fourier-Motzkin over the rationals with integer
  tightening of constant bounds (exact for the single-constraint cases
  that dominate in practice, an over-approximation otherwise),
* divisibility assumptions (``n mod 16 = 0``) are stored as facts and
  used to simplify quasi-affine bounds and to prove constraints
  redundant; they are never encoded as existentials.

All values are immutable; operations return new values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from math import gcd

from .errors import NonAffineError, ParseError, ValidationError

EQ = "eq"
INEQ = "ineq"

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


# {{{ affine expressions

class AffineExpr:
    """Integer-coefficient affine expression: sum of coeff*var plus constant.

    Zero coefficients are never stored.
    """

    __slots__ = ("coeffs", "constant")

    def __init__(self, coeffs=None, constant=0):
        clean = {}
        for name, c in (coeffs or {}).items():
            if not name or not _IDENT_RE.fullmatch(name):
                raise ValueError(f"bad variable name: {name!r}")
            if c:
                clean[name] = int(c)
        self.coeffs = clean
        self.constant = int(constant)

    def coeff(self, name):
        return self.coeffs.get(name, 0)

    @property
    def variables(self):
        return frozenset(self.coeffs)

    def is_constant(self):
        return not self.coeffs

    def __add__(self, other):
        if isinstance(other, int):
            return AffineExpr(self.coeffs, self.constant + other)
        coeffs = dict(self.coeffs)
        for name, c in other.coeffs.items():
            coeffs[name] = coeffs.get(name, 0) + c
        return AffineExpr(coeffs, self.constant + other.constant)

    def __sub__(self, other):
        if isinstance(other, int):
            return AffineExpr(self.coeffs, self.constant - other)
        return self + (other * -1)

    def __mul__(self, k):
        k = int(k)
        return AffineExpr({n: c * k for n, c in self.coeffs.items()},
                          self.constant * k)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def substitute(self, mapping):
        """Replace variables by AffineExprs (or ints) from *mapping*."""
        out = AffineExpr({}, self.constant)
        for name, c in self.coeffs.items():
            repl = mapping.get(name)
            if repl is None:
                out = out + AffineExpr({name: c})
            elif isinstance(repl, int):
                out = out + AffineExpr({}, c * repl)
            else:
                out = out + repl * c
        return out

    def eval(self, env):
        val = self.constant
        for name, c in self.coeffs.items():
            val += c * env[name]
        return val

    def sort_key(self):
        return (tuple(sorted(self.coeffs.items())), self.constant)

    def __eq__(self, other):
        return (isinstance(other, AffineExpr)
                and self.coeffs == other.coeffs
                and self.constant == other.constant)

    def __hash__(self):
        return hash(self.sort_key())

    def render(self):
        """Deterministic text form: constant first, then vars by name."""
        parts = []
        if self.constant or not self.coeffs:
            parts.append(str(self.constant))
        for name in sorted(self.coeffs):
            c = self.coeffs[name]
            if c == 1:
                parts.append(name)
            elif c == -1:
                parts.append(f"-{name}")
            else:
                parts.append(f"{c}*{name}")
        out = parts[0]
        for p in parts[1:]:
            out += f" + {p}" if not p.startswith("-") else f" - {p[1:]}"
        return out

    def __repr__(self):
        return f"AffineExpr({self.render()})"

    @staticmethod
    def var(name):
        return AffineExpr({name: 1})

    @staticmethod
    def const(v):
        return AffineExpr({}, v)


def _content(expr):
    g = 0
    for c in expr.coeffs.values():
        g = gcd(g, abs(c))
    return gcd(g, abs(expr.constant))

# }}}


# {{{ constraints

@dataclass(frozen=True)
class Constraint:
    """``expr = 0`` (kind EQ) or ``expr >= 0`` (kind INEQ)."""

    kind: str
    expr: AffineExpr

    def canonicalized(self):
        """Normalize: divide by content; integer-tighten inequalities.

        For an inequality whose variable coefficients share a gcd g > 1,
        dividing the coefficients by g and flooring the constant is exact
        over the integers and is what turns ``16*i + 15 >= 0`` into
        ``i >= 0``.
        """
        expr = self.expr
        if not expr.coeffs:
            return Constraint(self.kind, AffineExpr({}, expr.constant))
        g = 0
        for c in expr.coeffs.values():
            g = gcd(g, abs(c))
        if self.kind == INEQ:
            if g > 1:
                expr = AffineExpr(
                    {n: c // g for n, c in expr.coeffs.items()},
                    expr.constant // g)  # floor: exact integer tightening
            return Constraint(INEQ, expr)
        # equality: normalize sign, divide by full content when possible
        first = min(expr.coeffs)
        if expr.coeffs[first] < 0:
            expr = -expr
        full = gcd(g, abs(expr.constant))
        if full > 1:
            expr = AffineExpr(
                {n: c // full for n, c in expr.coeffs.items()},
                expr.constant // full)
        return Constraint(EQ, expr)

    def is_trivially_true(self):
        return not self.expr.coeffs and (
            self.expr.constant == 0 if self.kind == EQ
            else self.expr.constant >= 0)

    def is_trivially_false(self):
        return not self.expr.coeffs and (
            self.expr.constant != 0 if self.kind == EQ
            else self.expr.constant < 0)

    def sort_key(self):
        return (0 if self.kind == EQ else 1,) + self.expr.sort_key()

    def satisfied(self, env):
        v = self.expr.eval(env)
        return v == 0 if self.kind == EQ else v >= 0

    def render(self):
        pos = AffineExpr({n: c for n, c in self.expr.coeffs.items() if c > 0},
                         max(self.expr.constant, 0))
        neg = AffineExpr({n: -c for n, c in self.expr.coeffs.items() if c < 0},
                         max(-self.expr.constant, 0))
        op = "=" if self.kind == EQ else "<="
        return f"{neg.render()} {op} {pos.render()}"

# }}}


# {{{ assumptions

@dataclass(frozen=True)
class Assumptions:
    """Divisibility facts plus affine constraints over parameters only."""

    divisibility: tuple = ()       # (AffineExpr over params, modulus >= 2)
    param_constraints: tuple = ()  # Constraints over params only

    @staticmethod
    def empty():
        return Assumptions()

    def with_divisibility(self, expr, modulus):
        if modulus < 2:
            raise ValidationError(f"modulus must be >= 2, got {modulus}")
        return Assumptions(self.divisibility + ((expr, int(modulus)),),
                           self.param_constraints)

    def with_constraint(self, constraint):
        return Assumptions(self.divisibility,
                           self.param_constraints + (constraint,))

    def apply_to(self, constraints):
        """Rewrite *constraints* so rational elimination can use the facts.

        A fact ``p mod K = 0`` over a single parameter substitutes
        ``p := K*t`` with a fresh symbol, after which integer tightening
        of the rewritten constraints recovers the divisibility reasoning.
        Facts over compound expressions are appended as equalities.
        """
        mapping = {}
        extra = []
        for idx, (expr, modulus) in enumerate(self.divisibility):
            t = f"_div{idx}"
            if len(expr.coeffs) == 1 and expr.constant == 0 \
                    and next(iter(expr.coeffs.values())) == 1:
                (name,) = expr.coeffs
                mapping[name] = AffineExpr({t: modulus})
            else:
                extra.append(Constraint(EQ, expr - AffineExpr({t: modulus})))
        out = [Constraint(c.kind, c.expr.substitute(mapping))
               for c in list(constraints) + list(self.param_constraints)]
        return out + extra

    def satisfied_by(self, env):
        for expr, modulus in self.divisibility:
            if expr.eval(env) % modulus != 0:
                return False
        return all(c.satisfied(env) for c in self.param_constraints)

# }}}


# {{{ rational elimination core

def _eliminate_var(constraints, var):
    eqs = [c for c in constraints
           if c.kind == EQ and c.expr.coeff(var)]
    if eqs:
        pivot = min(eqs, key=lambda c: (abs(c.expr.coeff(var)),
                                        c.expr.sort_key()))
        a = pivot.expr.coeff(var)
        sign = 1 if a > 0 else -1
        out = []
        for c in constraints:
            if c is pivot:
                continue
            b = c.expr.coeff(var)
            if not b:
                out.append(c)
                continue
            out.append(Constraint(
                c.kind, c.expr * abs(a) - pivot.expr * (b * sign)))
        return out
    lowers, uppers, rest = [], [], []
    for c in constraints:
        b = c.expr.coeff(var)
        if b > 0:
            lowers.append(c)
        elif b < 0:
            uppers.append(c)
        else:
            rest.append(c)
    for lo in lowers:
        for up in uppers:
            a = lo.expr.coeff(var)
            b = -up.expr.coeff(var)
            rest.append(Constraint(INEQ, lo.expr * b + up.expr * a))
    return rest


def _normalize(constraints):
    seen = set()
    out = []
    for c in constraints:
        c = c.canonicalized()
        if c.is_trivially_true():
            continue
        key = c.sort_key()
        if key in seen:
            continue
        seen.add(key)
        out.append(c)
    out.sort(key=Constraint.sort_key)
    return tuple(out)


def _rationally_empty(constraints):
    """True only if the constraint system provably has no integer point."""
    cs = list(_normalize(constraints))
    variables = sorted({v for c in cs for v in c.expr.variables})
    for var in variables:
        cs = _normalize(_eliminate_var(cs, var))
        if any(c.is_trivially_false() for c in cs):
            return True
    return any(c.is_trivially_false() for c in cs)


def constraint_implied(candidate, context, assumptions=None):
    """Is *candidate* implied by *context* (given the assumptions)?

    Decided by checking ``context and not candidate`` for emptiness.
    Only inequalities are supported; equalities report False.
    """
    if candidate.kind != INEQ:
        return False
    ctx = list(context) + [Constraint(INEQ, -candidate.expr - 1)]
    if assumptions is not None:
        ctx = assumptions.apply_to(ctx)
    return _rationally_empty(ctx)


def prune_redundant(constraints, extra_context=(), assumptions=None):
    """Drop constraints implied by the remaining ones plus the context."""
    kept = []
    remaining = list(constraints)
    for i, c in enumerate(remaining):
        others = kept + remaining[i + 1:] + list(extra_context)
        if not constraint_implied(c, others, assumptions):
            kept.append(c)
    return kept

# }}}


# {{{ quasi-affine bounds

@dataclass(frozen=True)
class QuasiAffineBound:
    """``floor(numerator / divisor) + offset``.

    *exact* marks bounds where the division is provably exact (after
    divisibility simplification), so code generation may render a plain
    division instead of the floor-division helper.  Lower bounds encode
    ceiling division as ``floor((e + c - 1)/c)`` before construction.
    """

    numerator: AffineExpr
    divisor: int = 1
    offset: int = 0
    exact: bool = False

    def eval(self, env):
        return self.numerator.eval(env) // self.divisor + self.offset

    def is_plain_affine(self):
        return self.divisor == 1

    def as_affine(self):
        assert self.divisor == 1
        return self.numerator + self.offset

    def simplified(self, assumptions):
        """Fold constants; use divisibility facts to prove exact division."""
        num, div, off = self.numerator, self.divisor, self.offset
        if div == 1:
            return QuasiAffineBound(num + off, 1, 0, True)
        if num.is_constant():
            return QuasiAffineBound(
                AffineExpr({}, num.constant // div + off), 1, 0, True)
        if _divides_var_part(num, div, assumptions):
            k = num.constant
            new_num = num - k + div * (k // div)
            return QuasiAffineBound(new_num, div, off, True)
        return self

    def sort_key(self):
        return (self.divisor, self.numerator.sort_key(), self.offset)


def _divides_var_part(num, div, assumptions):
    facts = {}
    if assumptions is not None:
        for expr, modulus in assumptions.divisibility:
            if len(expr.coeffs) == 1 and expr.constant == 0:
                ((name, c),) = expr.coeffs.items()
                if c == 1:
                    facts[name] = gcd(facts.get(name, 0), modulus) \
                        if name in facts else modulus
    for name, c in num.coeffs.items():
        if c % div == 0:
            continue
        k = facts.get(name)
        if k is None or (c * k) % div != 0:
            return False
    return True

# }}}


# {{{ BasicSet

class BasicSet:
    """Conjunction of affine constraints over ordered dims and params."""

    __slots__ = ("set_dims", "params", "constraints")

    def __init__(self, set_dims, params, constraints):
        self.set_dims = tuple(set_dims)
        self.params = tuple(params)
        self.constraints = _normalize(constraints)
        seen = set(self.set_dims) | set(self.params)
        if len(seen) != len(self.set_dims) + len(self.params):
            raise ValidationError(
                f"dims/params not disjoint and duplicate-free: "
                f"dims={self.set_dims} params={self.params}")
        for c in self.constraints:
            loose = c.expr.variables - seen
            if loose:
                raise ValidationError(
                    f"constraint references unknown names {sorted(loose)}")

    def __eq__(self, other):
        return (isinstance(other, BasicSet)
                and self.set_dims == other.set_dims
                and self.params == other.params
                and self.constraints == other.constraints)

    def __hash__(self):
        return hash((self.set_dims, self.params, self.constraints))

    def __repr__(self):
        return f"BasicSet({self.render()})"

    def render(self):
        dims = ", ".join(self.set_dims)
        body = " and ".join(c.render() for c in self.constraints)
        return "{ [%s] : %s }" % (dims, body) if body else "{ [%s] }" % dims

    def with_constraints(self, extra):
        return BasicSet(self.set_dims, self.params,
                        self.constraints + tuple(extra))

    # {{{ dimension splitting

    def split_dim(self, iname, factor, outer, inner):
        if iname not in self.set_dims:
            raise ValidationError(f"unknown iname: {iname}")
        if factor < 1:
            raise ValidationError(f"split factor must be positive: {factor}")
        taken = set(self.set_dims) | set(self.params)
        for name in (outer, inner):
            if name in taken:
                raise ValidationError(f"name collision: {name}")
        repl = {iname: AffineExpr({outer: factor, inner: 1})}
        new_cs = [Constraint(c.kind, c.expr.substitute(repl))
                  for c in self.constraints]
        new_cs.append(Constraint(INEQ, AffineExpr({inner: 1})))
        new_cs.append(Constraint(
            INEQ, AffineExpr({inner: -1}, factor - 1)))
        dims = tuple(d for d in self.set_dims if d != iname) + (outer, inner)
        return BasicSet(dims, self.params, new_cs)

    # }}}

    def project_out(self, iname):
        """Fourier-Motzkin elimination of *iname* over the rationals.

        The result over-approximates the integer projection; loop bodies
        emitted against bounds from such sets are guarded.
        """
        if iname not in self.set_dims:
            raise ValidationError(f"unknown iname: {iname}")
        cs = _eliminate_var(list(self.constraints), iname)
        dims = tuple(d for d in self.set_dims if d != iname)
        return BasicSet(dims, self.params, cs)

    def is_empty(self):
        return _rationally_empty(list(self.constraints))

    # {{{ bound derivation

    def bounds_for(self, iname, fixed_order, assumptions=None, prune=True):
        """Derive loop bounds of *iname* with *fixed_order* dims symbolic.

        Dims that are neither fixed nor *iname* are projected out first.
        Returns ``(lower_bounds, upper_bounds)``, both lists of
        :class:`QuasiAffineBound`; the loop range is the intersection
        (max of lowers, min of uppers).
        """
        if iname not in self.set_dims:
            raise ValidationError(f"unknown iname: {iname}")
        s = self
        for d in self.set_dims:
            if d != iname and d not in fixed_order:
                s = s.project_out(d)
        cs = list(s.constraints)
        if prune:
            # the projection supplies the fixed dims' own ranges, which
            # the raw constraints may only imply jointly with *iname*
            ctx = s.project_out(iname).constraints
            cs = prune_redundant(cs, extra_context=ctx,
                                 assumptions=assumptions)
        lowers, uppers = [], []
        for c in cs:
            coef = c.expr.coeff(iname)
            if not coef:
                continue
            rest = c.expr - AffineExpr({iname: coef})
            if c.kind == EQ:
                rest_pairs = [(coef, rest), (-coef, -rest)]
            else:
                rest_pairs = [(coef, rest)]
            for cf, rst in rest_pairs:
                if cf > 0:
                    # cf*i + rst >= 0  =>  i >= ceil(-rst/cf)
                    b = QuasiAffineBound(-rst + (cf - 1), cf, 0)
                    lowers.append(b.simplified(assumptions))
                else:
                    # i <= floor(rst/|cf|), rendered floor((rst+m)/m) - 1
                    m = -cf
                    if m == 1:
                        b = QuasiAffineBound(rst, 1, 0)
                    else:
                        b = QuasiAffineBound(rst + m, m, -1)
                    uppers.append(b.simplified(assumptions))
        if not lowers or not uppers:
            side = "lower" if not lowers else "upper"
            raise ValidationError(
                f"iname '{iname}' has no finite {side} bound")
        lowers.sort(key=QuasiAffineBound.sort_key)
        uppers.sort(key=QuasiAffineBound.sort_key)
        return lowers, uppers

    # }}}

    # {{{ point enumeration

    def enumerate_points(self, param_values):
        """All integer points, lexicographically in set_dims order."""
        missing = [p for p in self.params if p not in param_values]
        if missing:
            raise ValidationError(f"unbound params: {missing}")
        subst = {p: int(param_values[p]) for p in self.params}
        cs = _normalize(
            Constraint(c.kind, c.expr.substitute(subst))
            for c in self.constraints)
        if any(c.is_trivially_false() for c in cs):
            return []
        boxes = []
        for d in self.set_dims:
            only_d = list(cs)
            for other in self.set_dims:
                if other != d:
                    only_d = _normalize(_eliminate_var(only_d, other))
            lo, hi = None, None
            for c in only_d:
                coef = c.expr.coeff(d)
                if not coef:
                    if c.is_trivially_false():
                        return []
                    continue
                k = c.expr.constant
                if c.kind == EQ:
                    if (-k) % coef == 0:
                        v = -k // coef
                        lo = v if lo is None else max(lo, v)
                        hi = v if hi is None else min(hi, v)
                    else:
                        return []
                elif coef > 0:
                    v = (-k + coef - 1) // coef  # ceil(-k/coef)
                    lo = v if lo is None else max(lo, v)
                else:
                    v = k // (-coef)
                    hi = v if hi is None else min(hi, v)
            if lo is None or hi is None:
                raise ValidationError(
                    f"set is unbounded in '{d}' under {param_values}")
            boxes.append(range(lo, hi + 1))

        points = []

        def rec(idx, env, acc):
            if idx == len(self.set_dims):
                if all(c.satisfied(env) for c in cs):
                    points.append(tuple(acc))
                return
            d = self.set_dims[idx]
            for v in boxes[idx]:
                env[d] = v
                acc.append(v)
                rec(idx + 1, env, acc)
                acc.pop()
            env.pop(d, None)

        rec(0, {}, [])
        return points

    # }}}

# }}}


# {{{ domain tree

@dataclass(frozen=True)
class DomainTree:
    """Nested loop domains; children may reference ancestor inames."""

    nodes: tuple = ()
    parent: tuple = ()  # parallel to nodes; entry is an index or None

    def __post_init__(self):
        seen = {}
        for i, node in enumerate(self.nodes):
            for d in node.set_dims:
                if d in seen:
                    raise ValidationError(
                        f"iname '{d}' introduced by nodes {seen[d]} and {i}")
                seen[d] = i
        # a node's params may name inames, but only ancestor-introduced ones
        for i, node in enumerate(self.nodes):
            ancestors = set()
            j = self.parent[i]
            while j is not None:
                ancestors |= set(self.nodes[j].set_dims)
                j = self.parent[j]
            for p in node.params:
                if p in seen and p not in ancestors:
                    raise ValidationError(
                        f"node {i} references iname '{p}' of a "
                        f"non-ancestor node")

    @property
    def all_dims(self):
        out = []
        for node in self.nodes:
            out.extend(node.set_dims)
        return tuple(out)

    @property
    def all_params(self):
        dims = set(self.all_dims)
        out = []
        for node in self.nodes:
            for p in node.params:
                if p not in dims and p not in out:
                    out.append(p)
        return tuple(out)

    def node_index_of(self, iname):
        for i, node in enumerate(self.nodes):
            if iname in node.set_dims:
                return i
        raise ValidationError(f"unknown iname: {iname}")

    def node_of(self, iname):
        return self.nodes[self.node_index_of(iname)]

    def ancestor_dims(self, idx):
        out = []
        j = self.parent[idx]
        while j is not None:
            out = list(self.nodes[j].set_dims) + out
            j = self.parent[j]
        return tuple(out)

    def with_node_replaced(self, idx, node):
        nodes = list(self.nodes)
        nodes[idx] = node
        return DomainTree(tuple(nodes), self.parent)

    def with_node_added(self, node, parent=None):
        return DomainTree(self.nodes + (node,), self.parent + (parent,))

    def render(self):
        return "\n".join(n.render() for n in self.nodes)

# }}}


# {{{ set-text parsing

class _Tok:
    def __init__(self, kind, text, pos):
        self.kind = kind
        self.text = text
        self.pos = pos


_SET_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|[{}\[\]():,+\-*<>=]))")


def _tokenize_set(text):
    pos = 0
    toks = []
    while pos < len(text):
        m = _SET_TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise ParseError(
                    f"unexpected character {text[pos]!r} at offset {pos}")
            break
        pos = m.end()
        if m.lastgroup == "num":
            toks.append(_Tok("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            name = m.group("name")
            kind = "kw" if name in ("and", "mod") else "name"
            toks.append(_Tok(kind, name, m.start("name")))
        else:
            toks.append(_Tok("op", m.group("op"), m.start("op")))
    toks.append(_Tok("end", "", len(text)))
    return toks


class _SetParser:
    """Recursive-descent parser for ``{ [i,j] : constraints }`` text."""

    def __init__(self, text):
        self.text = text
        self.toks = _tokenize_set(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.next()
        if t.text != text:
            raise ParseError(
                f"expected {text!r}, found {t.text!r} at offset {t.pos}")
        return t

    def parse_set(self):
        self.expect("{")
        self.expect("[")
        dims = [self.expect_name()]
        while self.peek().text == ",":
            self.next()
            dims.append(self.expect_name())
        self.expect("]")
        constraints = []
        if self.peek().text == ":":
            self.next()
            constraints.extend(self.parse_chain())
            while self.peek().text == "and":
                self.next()
                constraints.extend(self.parse_chain())
        self.expect("}")
        if self.peek().kind != "end":
            t = self.peek()
            raise ParseError(
                f"trailing input {t.text!r} at offset {t.pos}")
        return dims, constraints

    def expect_name(self):
        t = self.next()
        if t.kind != "name":
            raise ParseError(
                f"expected identifier, found {t.text!r} at offset {t.pos}")
        return t.text

    def parse_chain(self):
        groups = [self.parse_expr_list()]
        ops = []
        while self.peek().text in ("<", "<=", ">", ">=", "="):
            ops.append(self.next().text)
            groups.append(self.parse_expr_list())
        if not ops:
            t = self.peek()
            raise ParseError(
                f"expected comparison at offset {t.pos}")
        out = []
        for (lhs_group, op, rhs_group) in zip(groups, ops, groups[1:]):
            for a in lhs_group:
                for b in rhs_group:
                    out.append(_chain_constraint(a, op, b))
        return out

    def parse_expr_list(self):
        exprs = [self.parse_affine()]
        while self.peek().text == ",":
            self.next()
            exprs.append(self.parse_affine())
        return exprs

    def parse_affine(self):
        e = self.parse_term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.parse_term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def parse_term(self):
        e = self.parse_factor()
        while self.peek().text == "*":
            self.next()
            rhs = self.parse_factor()
            if e.coeffs and rhs.coeffs:
                raise NonAffineError(
                    "non-affine term: product of two variables "
                    f"near offset {self.peek().pos}")
            e = e * rhs.constant if rhs.is_constant() else rhs * e.constant
        return e

    def parse_factor(self):
        t = self.next()
        if t.text == "-":
            return -self.parse_factor()
        if t.text == "(":
            e = self.parse_affine()
            self.expect(")")
            return e
        if t.kind == "num":
            return AffineExpr.const(int(t.text))
        if t.kind == "name":
            return AffineExpr.var(t.text)
        raise ParseError(
            f"expected expression, found {t.text!r} at offset {t.pos}")


def _chain_constraint(a, op, b):
    if op == "=":
        return Constraint(EQ, a - b)
    if op == "<=":
        return Constraint(INEQ, b - a)
    if op == "<":
        return Constraint(INEQ, b - a - 1)
    if op == ">=":
        return Constraint(INEQ, a - b)
    if op == ">":
        return Constraint(INEQ, a - b - 1)
    raise AssertionError(op)


def parse_set(text):
    """Parse ``{[i,...]: constraints}``; free identifiers become params.

    Constraint chains (``a <= b < c``) expand pairwise, and comma lists
    share bounds: ``0<=i,j<n`` yields four inequalities.
    """
    dims, constraints = _SetParser(text).parse_set()
    params = []
    dimset = set(dims)
    for c in constraints:
        for v in sorted(c.expr.variables,
                        key=lambda n: _first_occurrence(text, n)):
            if v not in dimset and v not in params:
                params.append(v)
    return BasicSet(dims, params, constraints)


def _first_occurrence(text, name):
    m = re.search(rf"\b{re.escape(name)}\b", text)
    return m.start() if m else len(text)


def parse_param_constraint(text):
    """Parse a bare constraint chain (no braces) over parameters."""
    p = _SetParser("{ [__dummy] : " + text + " }")
    dims, constraints = p.parse_set()
    return [c for c in constraints]

# }}}


def affine_min_max_over_box(expr, box_bounds):
    """Symbolic (min, max) of an affine expr over a box.

    *box_bounds* maps var -> (lo AffineExpr, hi AffineExpr) for the vars
    to sweep; other vars remain symbolic.
    """
    lo = AffineExpr({}, expr.constant)
    hi = AffineExpr({}, expr.constant)
    for name, c in sorted(expr.coeffs.items()):
        if name in box_bounds:
            blo, bhi = box_bounds[name]
            lo = lo + (blo if c > 0 else bhi) * c
            hi = hi + (bhi if c > 0 else blo) * c
        else:
            lo = lo + AffineExpr({name: c})
            hi = hi + AffineExpr({name: c})
    return lo, hi

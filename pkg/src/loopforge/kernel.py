"""Kernel values: domain tree + instructions + rules + declarations.

Kernels are immutable; construction runs the §-style pipeline: parse
domains, build the rule table, reclassify provisional calls, declare
``<>`` temporaries, auto-declare arguments, then infer within-inames and
dependencies for instructions that do not specify them.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

from . import expr as ex
from .errors import ValidationError
from .polyset import (AffineExpr, Assumptions, BasicSet, DomainTree,
                      parse_set)

F32, F64, I32 = "f32", "f64", "i32"
_DTYPE_RANK = {I32: 0, F32: 1, F64: 2}

PARALLEL_TAG_RE = re.compile(r"[gl]\.\d+$")
VALID_TAGS = ("unroll", "sequential")


def promote_dtype(a, b):
    return a if _DTYPE_RANK[a] >= _DTYPE_RANK[b] else b


def is_parallel_tag(tag):
    return tag is not None and PARALLEL_TAG_RE.match(tag) is not None


# {{{ declarations

@dataclass(frozen=True)
class ArgDecl:
    name: str
    kind: str                 # "global-array" or "scalar-value"
    dtype: str
    shape: tuple = ()         # AffineExprs over params
    strides: tuple = ()       # element units
    is_output: bool = False

    def __post_init__(self):
        if len(self.shape) != len(self.strides):
            raise ValidationError(
                f"arg {self.name}: shape/strides rank mismatch")


@dataclass(frozen=True)
class TemporaryDecl:
    name: str
    dtype: str
    shape: tuple = ()         # empty = scalar
    address_space: str = "private"
    base_offsets: tuple = ()


@dataclass(frozen=True)
class Instruction:
    id: str
    lhs: ex.Expression
    rhs: ex.Expression
    within_inames: frozenset | None = None   # None = infer
    depends_on: frozenset | None = None      # None = infer
    tags: frozenset = frozenset()
    predicates: frozenset = frozenset()      # (flag_name, negated) pairs

    def assignee_name(self):
        if isinstance(self.lhs, ex.VarRef):
            return self.lhs.name
        if isinstance(self.lhs, ex.Subscript):
            return self.lhs.array
        raise ValidationError(f"instruction {self.id}: bad assignee")

    def read_expressions(self):
        out = [self.rhs]
        if isinstance(self.lhs, ex.Subscript):
            out.extend(self.lhs.index)
        return out

# }}}


# {{{ kernel

@dataclass(frozen=True)
class Kernel:
    name: str
    domains: DomainTree
    instructions: tuple = ()
    rules: dict = field(default_factory=dict)         # name -> rule
    args: tuple = ()
    temporaries: dict = field(default_factory=dict)   # name -> decl
    assumptions: Assumptions = field(default_factory=Assumptions.empty)
    iname_tags: dict = field(default_factory=dict)    # iname -> tag

    def copy(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    @property
    def all_inames(self):
        return self.domains.all_dims

    @property
    def param_names(self):
        out = list(self.domains.all_params)
        for expr, _mod in self.assumptions.divisibility:
            for v in sorted(expr.variables):
                if v not in out:
                    out.append(v)
        for c in self.assumptions.param_constraints:
            for v in sorted(c.expr.variables):
                if v not in out:
                    out.append(v)
        for a in self.args:
            for e in tuple(a.shape) + tuple(a.strides):
                for v in sorted(e.variables):
                    if v not in out and v not in self.domains.all_dims:
                        out.append(v)
        return tuple(out)

    def arg_map(self):
        return {a.name: a for a in self.args}

    def instruction_map(self):
        return {i.id: i for i in self.instructions}

    def writer_map(self):
        out = {}
        for insn in self.instructions:
            out.setdefault(insn.assignee_name(), []).append(insn.id)
        return out

    def iname_order(self, inames):
        order = {n: i for i, n in enumerate(self.all_inames)}
        return sorted(inames, key=lambda n: order[n])

    # {{{ analysis-time rule expansion

    def expand_for_analysis(self, e, _visiting=frozenset()):
        """Inline all rule invocations (analysis only, not a transform)."""
        if isinstance(e, ex.RuleInvocation) and e.rule in self.rules:
            if e.rule in _visiting:
                raise ValidationError(
                    f"recursion among substitution rules at '{e.rule}'")
            rule = self.rules[e.rule]
            if len(e.args) != len(rule.params):
                raise ValidationError(
                    f"rule {e.rule} expects {len(rule.params)} args, "
                    f"got {len(e.args)}")
            visiting = _visiting | {e.rule}
            body = self.expand_for_analysis(rule.body, visiting)
            bindings = {p: self.expand_for_analysis(a, _visiting)
                        for p, a in zip(rule.params, e.args)}
            for renamed, target in rule.free_iname_map:
                bindings[renamed] = target
            return ex.substitute(body, bindings)
        ch = ex.children(e)
        if not ch:
            return e
        return ex.rebuild(
            e, [self.expand_for_analysis(c, _visiting) for c in ch])

    def referenced_inames(self, insn):
        inames = set(self.all_inames)
        seen = set()
        for e in [insn.lhs] + insn.read_expressions():
            seen |= ex.free_variables(self.expand_for_analysis(e))
        return frozenset(seen & inames)

    # }}}

    def fresh_name(self, base, extra_used=()):
        used = set(self.all_inames) | set(self.param_names) \
            | {a.name for a in self.args} | set(self.temporaries) \
            | set(self.rules) | {i.id for i in self.instructions} \
            | set(extra_used)
        for rule in self.rules.values():
            used |= {renamed for renamed, _ in rule.free_iname_map}
        if base not in used:
            return base
        k = 0
        while f"{base}_{k}" in used:
            k += 1
        return f"{base}_{k}"

    def rendered_domains(self):
        return [node.render() for node in self.domains.nodes]

# }}}


# {{{ dtype inference

def infer_expr_dtype(kernel, e):
    if isinstance(e, ex.IntLit):
        return I32
    if isinstance(e, ex.FloatLit):
        return F32
    if isinstance(e, ex.VarRef):
        return _name_dtype(kernel, e.name)
    if isinstance(e, ex.Subscript):
        return _name_dtype(kernel, e.array)
    if isinstance(e, ex.Compare):
        return I32
    if isinstance(e, ex.UnOp):
        return infer_expr_dtype(kernel, e.operand)
    if isinstance(e, ex.BinOp):
        left = infer_expr_dtype(kernel, e.left)
        right = infer_expr_dtype(kernel, e.right)
        if e.op == "/":
            return promote_dtype(promote_dtype(left, right), F32)
        if e.op == "**":
            if left == I32 and right == I32:
                return I32
            return promote_dtype(left, right)
        return promote_dtype(left, right)
    if isinstance(e, ex.Reduction):
        return infer_expr_dtype(kernel, e.body)
    if isinstance(e, ex.Call):
        args = [infer_expr_dtype(kernel, a) for a in e.args]
        if e.function in ("sqrt", "sin", "cos", "exp"):
            return promote_dtype(args[0], F32)
        out = args[0]
        for a in args[1:]:
            out = promote_dtype(out, a)
        return out
    if isinstance(e, ex.RuleInvocation):
        return infer_expr_dtype(kernel, kernel.expand_for_analysis(e))
    raise ValidationError(f"cannot infer dtype of {e!r}")


def _name_dtype(kernel, name):
    if name in kernel.temporaries:
        return kernel.temporaries[name].dtype
    amap = kernel.arg_map()
    if name in amap:
        return amap[name].dtype
    if name in kernel.all_inames or name in kernel.param_names:
        return I32
    raise ValidationError(f"unknown name '{name}' in dtype inference")

# }}}


# {{{ inference heuristics

def infer_within_inames(kernel):
    """Fill missing within-iname sets: all inames an instruction references."""
    new = []
    for insn in kernel.instructions:
        if insn.within_inames is None:
            new.append(dataclasses.replace(
                insn, within_inames=kernel.referenced_inames(insn)))
        else:
            new.append(insn)
    return kernel.copy(instructions=tuple(new))


def infer_dependencies(kernel):
    """Fill missing dependency sets: writers of everything that is read."""
    writers = kernel.writer_map()
    new = []
    for insn in kernel.instructions:
        if insn.depends_on is not None:
            new.append(insn)
            continue
        reads = set()
        for e in insn.read_expressions():
            reads |= ex.free_variables(kernel.expand_for_analysis(e))
        for flag, _neg in insn.predicates:
            reads.add(flag)
        deps = set()
        for var in reads:
            deps.update(writers.get(var, ()))
        deps.discard(insn.id)
        new.append(dataclasses.replace(insn, depends_on=frozenset(deps)))
    out = kernel.copy(instructions=tuple(new))
    cycle = find_dependency_cycle(out)
    if cycle:
        raise ValidationError(
            "dependency cycle: " + " -> ".join(cycle))
    return out


def find_dependency_cycle(kernel):
    state = {}
    imap = kernel.instruction_map()
    stack = []

    def visit(iid):
        state[iid] = 1
        stack.append(iid)
        for dep in sorted(imap[iid].depends_on or ()):
            if dep not in imap:
                continue
            st = state.get(dep)
            if st == 1:
                return stack[stack.index(dep):] + [dep]
            if st is None:
                found = visit(dep)
                if found:
                    return found
        stack.pop()
        state[iid] = 2
        return None

    for insn in kernel.instructions:
        if state.get(insn.id) is None:
            found = visit(insn.id)
            if found:
                return found
    return None

# }}}


# {{{ construction

def make_kernel(domain_texts, body, name="loopy_kernel", args=(),
                temporaries=(), dtype_default=F32):
    """Build a kernel from domain text(s) and native-language statements.

    Undeclared subscripted names become global array arguments with
    footprint-derived shapes; undeclared scalars become value arguments.
    """
    if isinstance(domain_texts, str):
        domain_texts = [domain_texts]
    domains = _build_domain_tree([parse_set(t) for t in domain_texts])

    statements = [ex.parse_statement(line)
                  for line in ex.split_body_lines(body)]
    rules = {}
    for st in statements:
        if isinstance(st, ex.RuleStmt):
            if st.rule.name in rules:
                raise ValidationError(
                    f"duplicate rule name '{st.rule.name}'")
            rules[st.rule.name] = st.rule

    inames = set(domains.all_dims)
    resolve = _CallResolver(rules, inames)
    rules = {n: dataclasses.replace(r, body=resolve(r.body))
             for n, r in rules.items()}

    kernel = Kernel(name=name, domains=domains, rules=rules,
                    args=tuple(args),
                    temporaries={t.name: t for t in temporaries})

    instructions = []
    counter = 0
    temp_rhs = {}
    for st in statements:
        if isinstance(st, ex.RuleStmt):
            continue
        lhs = resolve(st.lhs)
        rhs = resolve(st.rhs)
        iid = f"insn_{counter}"
        counter += 1
        instructions.append(Instruction(id=iid, lhs=lhs, rhs=rhs))
        if st.is_temporary_decl:
            temp_rhs[lhs.name] = rhs

    kernel = kernel.copy(instructions=tuple(instructions))
    kernel = _auto_declare_args(kernel, temp_rhs, dtype_default)

    # `<>` temporaries: dtype by forward propagation from the rhs, in
    # statement order so later temporaries may reference earlier ones
    for tname, rhs in temp_rhs.items():
        if tname in kernel.temporaries:
            continue
        decl = TemporaryDecl(name=tname,
                             dtype=infer_expr_dtype(kernel, rhs))
        kernel = kernel.copy(
            temporaries={**kernel.temporaries, tname: decl})

    kernel = infer_within_inames(kernel)
    kernel = infer_dependencies(kernel)
    validate_kernel(kernel)
    return kernel


class _CallResolver:
    """Rewrite provisional calls: rule names and min/max reductions."""

    def __init__(self, rules, inames):
        self.rules = rules
        self.inames = inames

    def __call__(self, e):
        ch = ex.children(e)
        new = [self(c) for c in ch]
        if isinstance(e, ex.Call):
            if e.function in self.rules:
                return ex.RuleInvocation(e.function, None, tuple(new))
            if (e.function in ("min", "max") and len(new) == 2
                    and isinstance(new[0], ex.VarRef)
                    and new[0].name in self.inames):
                return ex.Reduction(e.function, new[0].name, new[1])
        if not ch:
            return e
        return ex.rebuild(e, new)


def _build_domain_tree(sets):
    tree = DomainTree()
    introduced = {}
    for s in sets:
        parent = None
        for p in s.params:
            if p in introduced:
                idx = introduced[p]
                parent = idx if parent is None else max(parent, idx)
        tree = tree.with_node_added(s, parent)
        for d in s.set_dims:
            introduced[d] = len(tree.nodes) - 1
    return tree


def _auto_declare_args(kernel, temp_rhs, dtype_default):
    known = set(kernel.all_inames) | set(kernel.param_names) \
        | {a.name for a in kernel.args} | set(kernel.temporaries) \
        | set(temp_rhs)
    array_names, scalar_names, written = [], [], set()
    subscript_ranks = {}

    def note(e):
        for node in _walk_all(e):
            if isinstance(node, ex.Subscript):
                if node.array not in known \
                        and node.array not in array_names:
                    array_names.append(node.array)
                subscript_ranks.setdefault(node.array, len(node.index))
                if len(node.index) != subscript_ranks[node.array]:
                    raise ValidationError(
                        f"array '{node.array}' used with inconsistent rank")

    for insn in kernel.instructions:
        note(insn.lhs)
        note(insn.rhs)
        if isinstance(insn.lhs, ex.Subscript):
            written.add(insn.lhs.array)
        else:
            written.add(insn.lhs.name)
    for rule in kernel.rules.values():
        note(rule.body)

    bound_in_rules = set()
    for rule in kernel.rules.values():
        bound_in_rules |= set(rule.params)
        bound_in_rules |= {renamed for renamed, _ in rule.free_iname_map}

    for insn in kernel.instructions:
        for e in [insn.lhs] + insn.read_expressions():
            for v in sorted(ex.free_variables(kernel.expand_for_analysis(e))):
                if v not in known and v not in array_names \
                        and v not in scalar_names:
                    scalar_names.append(v)

    new_args = list(kernel.args)
    for aname in array_names:
        shape = _infer_array_shape(kernel, aname, subscript_ranks[aname])
        new_args.append(ArgDecl(
            name=aname, kind="global-array", dtype=dtype_default,
            shape=shape, strides=_row_major_strides(shape),
            is_output=aname in written))
    for sname in scalar_names:
        if sname in bound_in_rules:
            continue
        new_args.append(ArgDecl(
            name=sname, kind="scalar-value", dtype=dtype_default,
            is_output=sname in written))
    return kernel.copy(args=tuple(new_args))


def _walk_all(e):
    yield e
    for c in ex.children(e):
        yield from _walk_all(c)


def _infer_array_shape(kernel, aname, rank):
    """Per-dim extent: max accessed index over the domain box, plus one."""
    boxes = iname_box_bounds(kernel)
    inames = set(kernel.all_inames)
    # scan instructions with rules expanded; raw rule bodies carry
    # unresolved formal parameters and cannot be bounded
    roots = []
    for insn in kernel.instructions:
        roots.append(insn.lhs)
        roots.append(insn.rhs)
    dims = []
    for d in range(rank):
        best = None
        for root in roots:
            expanded = kernel.expand_for_analysis(root) \
                if _has_invocation(root) else root
            for node in _walk_all(expanded):
                if isinstance(node, ex.Subscript) and node.array == aname:
                    aff = ex.expression_to_affine(node.index[d])
                    if aff is None:
                        raise ValidationError(
                            f"cannot infer shape of '{aname}': "
                            "non-affine subscript")
                    hi = _affine_upper(aff, boxes, inames, aname)
                    best = hi if best is None else _affine_max(best, hi)
        if best is None:
            raise ValidationError(f"array '{aname}' never subscripted")
        dims.append(best + 1)
    return tuple(dims)


def _has_invocation(e):
    return any(isinstance(n, ex.RuleInvocation) for n in _walk_all(e))


def _affine_upper(aff, boxes, inames, aname):
    out = AffineExpr({}, aff.constant)
    for name, c in sorted(aff.coeffs.items()):
        if name in boxes:
            lo, hi = boxes[name]
            out = out + (hi if c > 0 else lo) * c
        elif name in inames:
            raise ValidationError(
                f"cannot infer shape of '{aname}': no bounds for iname "
                f"'{name}'")
        else:
            out = out + AffineExpr({name: c})
    return out


def _affine_max(a, b):
    if a == b:
        return a
    diff = a - b
    if diff.is_constant():
        return a if diff.constant >= 0 else b
    raise ValidationError(
        f"cannot compare bounds {a.render()} and {b.render()}")


def iname_box_bounds(kernel):
    """Per-iname [lo, hi] over params only (rectangular over-approximation)."""
    boxes = {}
    inames = set(kernel.all_inames)
    for node_idx, node in enumerate(kernel.domains.nodes):
        for iname in node.set_dims:
            fixed = [d for d in node.set_dims if d != iname]
            fixed += list(kernel.domains.ancestor_dims(node_idx))
            try:
                lowers, uppers = node.bounds_for(
                    iname, fixed, kernel.assumptions)
            except ValidationError:
                continue
            lo = _resolve_affine_bound(lowers, boxes, inames, want_low=True)
            hi = _resolve_affine_bound(uppers, boxes, inames, want_low=False)
            if lo is not None and hi is not None:
                boxes[iname] = (lo, hi)
    return boxes


def _resolve_affine_bound(bounds, boxes, inames, want_low):
    candidates = []
    for b in bounds:
        if not b.is_plain_affine():
            return None
        aff = b.as_affine()
        resolved = AffineExpr({}, aff.constant)
        for name, c in sorted(aff.coeffs.items()):
            if name in boxes:
                lo, hi = boxes[name]
                pick = (lo if (c > 0) == want_low else hi)
                resolved = resolved + pick * c
            elif name in inames:
                return None  # depends on an iname without a box yet
            else:
                resolved = resolved + AffineExpr({name: c})
        candidates.append(resolved)
    if not candidates:
        return None
    best = candidates[0]
    for cand in candidates[1:]:
        diff = cand - best
        if not diff.is_constant():
            return None
        if (diff.constant > 0) != want_low:
            best = cand
    return best


def _row_major_strides(shape):
    if not shape:
        return ()
    strides = [AffineExpr.const(1)]
    for extent in reversed(shape[1:]):
        prev = strides[-1]
        if extent.is_constant():
            strides.append(prev * extent.constant)
        elif prev.is_constant():
            strides.append(extent * prev.constant)
        else:
            raise ValidationError(
                "stride product of two symbolic extents is not affine")
    return tuple(reversed(strides))

# }}}


# {{{ validation

def validate_kernel(kernel):
    """Closed-world well-formedness check; raises ValidationError."""
    inames = set(kernel.all_inames)
    params = set(kernel.param_names)
    argnames = {a.name for a in kernel.args}
    temps = set(kernel.temporaries)
    rulenames = set(kernel.rules)

    groups = [("iname", inames), ("arg", argnames),
              ("temporary", temps), ("rule", rulenames)]
    for i, (kind_a, group_a) in enumerate(groups):
        for kind_b, group_b in groups[i + 1:]:
            overlap = group_a & group_b
            if overlap:
                raise ValidationError(
                    f"{kind_a}/{kind_b} name collision: {sorted(overlap)}")

    imap = kernel.instruction_map()
    if len(imap) != len(kernel.instructions):
        raise ValidationError("duplicate instruction ids")

    for rule in kernel.rules.values():
        _check_expr_names(kernel, rule.body,
                          extra=set(rule.params)
                          | {rn for rn, _ in rule.free_iname_map},
                          where=f"rule {rule.name}")

    for insn in kernel.instructions:
        if not isinstance(insn.lhs, (ex.VarRef, ex.Subscript)):
            raise ValidationError(
                f"instruction {insn.id}: assignee must be variable or "
                "subscript")
        if insn.within_inames is None or insn.depends_on is None:
            raise ValidationError(
                f"instruction {insn.id}: inference incomplete")
        bad = insn.within_inames - inames
        if bad:
            raise ValidationError(
                f"instruction {insn.id}: unknown within-inames {sorted(bad)}")
        missing = insn.depends_on - set(imap)
        if missing:
            raise ValidationError(
                f"instruction {insn.id}: depends on unknown ids "
                f"{sorted(missing)}")
        for e in [insn.lhs] + insn.read_expressions():
            _check_expr_names(kernel, e, extra=set(),
                              where=f"instruction {insn.id}")
        refd = kernel.referenced_inames(insn)
        loose = refd - insn.within_inames
        if loose:
            raise ValidationError(
                f"instruction {insn.id}: references inames {sorted(loose)} "
                "outside its within-iname set")
        red = set()
        for e in [insn.lhs] + insn.read_expressions():
            red |= ex.reduction_inames(kernel.expand_for_analysis(e))
        bad_red = red - inames
        if bad_red:
            raise ValidationError(
                f"instruction {insn.id}: reduction inames {sorted(bad_red)} "
                "not in the domain tree")
        for flag, _neg in insn.predicates:
            if flag not in temps:
                raise ValidationError(
                    f"instruction {insn.id}: predicate flag '{flag}' is "
                    "not a temporary")
        # within must include ancestor inames its nodes depend on
        for w in insn.within_inames:
            idx = kernel.domains.node_index_of(w)
            node = kernel.domains.nodes[idx]
            needed = set(node.params) & inames
            gap = needed - insn.within_inames
            if gap:
                raise ValidationError(
                    f"instruction {insn.id}: iname {w} requires ancestor "
                    f"inames {sorted(gap)} in the within set")

    cycle = find_dependency_cycle(kernel)
    if cycle:
        raise ValidationError("dependency cycle: " + " -> ".join(cycle))

    _check_predicate_flags_written(kernel, imap)
    return True


def _check_expr_names(kernel, e, extra, where):
    known = set(kernel.all_inames) | set(kernel.param_names) \
        | {a.name for a in kernel.args} | set(kernel.temporaries) | extra
    expanded = kernel.expand_for_analysis(e)
    loose = ex.free_variables(expanded) - known
    if loose:
        raise ValidationError(
            f"{where}: undefined variable(s) {sorted(loose)}")
    for node in _walk_all(e):
        if isinstance(node, ex.RuleInvocation):
            if node.rule not in kernel.rules:
                raise ValidationError(
                    f"{where}: invocation of undefined rule '{node.rule}'")
        if isinstance(node, ex.Call) and node.function in kernel.rules:
            raise ValidationError(
                f"{where}: rule '{node.function}' used as plain call")


def _check_predicate_flags_written(kernel, imap):
    for insn in kernel.instructions:
        if not insn.predicates:
            continue
        reachable = set()
        frontier = list(insn.depends_on)
        while frontier:
            dep = frontier.pop()
            if dep in reachable or dep not in imap:
                continue
            reachable.add(dep)
            frontier.extend(imap[dep].depends_on)
        writers = {imap[d].assignee_name() for d in reachable}
        for flag, _neg in insn.predicates:
            if flag not in writers:
                raise ValidationError(
                    f"instruction {insn.id}: predicate flag '{flag}' not "
                    "written by any transitive dependency")

# }}}


# {{{ IR dump

def ir_dump(kernel):
    lines = [f"kernel: {kernel.name}"]
    lines.append("domains:")
    for node in kernel.domains.nodes:
        lines.append(f"  {node.render()}")
    if kernel.param_names:
        lines.append("params: " + ", ".join(kernel.param_names))
    asm = kernel.assumptions
    if asm.divisibility or asm.param_constraints:
        lines.append("assumptions:")
        for expr, mod in asm.divisibility:
            lines.append(f"  {expr.render()} mod {mod} = 0")
        for c in asm.param_constraints:
            lines.append(f"  {c.render()}")
    if kernel.args:
        lines.append("args:")
        for a in kernel.args:
            extent = ""
            if a.kind == "global-array":
                shape = ", ".join(s.render() for s in a.shape)
                strides = ", ".join(s.render() for s in a.strides)
                extent = f" shape=({shape}) strides=({strides})"
            out = " output" if a.is_output else ""
            lines.append(f"  {a.name}: {a.dtype} {a.kind}{extent}{out}")
    if kernel.temporaries:
        lines.append("temporaries:")
        for tname in sorted(kernel.temporaries):
            t = kernel.temporaries[tname]
            shape = "scalar" if not t.shape else \
                "(" + ", ".join(s.render() for s in t.shape) + ")"
            lines.append(
                f"  {t.name}: {t.dtype} {t.address_space} {shape}")
    if kernel.rules:
        lines.append("rules:")
        for rname in sorted(kernel.rules):
            rule = kernel.rules[rname]
            head = rname if not rule.params else \
                f"{rname}({', '.join(rule.params)})"
            lines.append(f"  {head} := {ex.render_expr(rule.body)}")
    if kernel.instructions:
        lines.append("instructions:")
        for insn in kernel.instructions:
            meta = []
            meta.append("within=" +
                        ",".join(kernel.iname_order(insn.within_inames)))
            meta.append("deps=" + ",".join(sorted(insn.depends_on)))
            if insn.tags:
                meta.append("tags=" + ",".join(sorted(insn.tags)))
            if insn.predicates:
                rendered = ("%s%s" % ("!" if neg else "", flag)
                            for flag, neg in sorted(insn.predicates))
                meta.append("preds=" + ",".join(rendered))
            lines.append(
                f"  {insn.id}: {ex.render_expr(insn.lhs)} = "
                f"{ex.render_expr(insn.rhs)}  {{{'; '.join(meta)}}}")
    if kernel.iname_tags:
        lines.append("iname tags:")
        for iname in kernel.iname_order(kernel.iname_tags):
            lines.append(f"  {iname}: {kernel.iname_tags[iname]}")
    return "\n".join(lines) + "\n"

# }}}

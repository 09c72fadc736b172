"""Kernel-to-kernel transformation library.

Every transform is a pure function returning a new validated kernel.
Transforms that select program points take match expressions (or plain
rule names) over the rule expansion stack; zero matches warn rather
than fail so scripts stay reusable across kernel families.
"""

from __future__ import annotations

import dataclasses
import logging
import re

from . import expr as ex
from .errors import TransformError, ValidationError
from .kernel import (Instruction, TemporaryDecl, infer_expr_dtype,
                     is_parallel_tag, validate_kernel, VALID_TAGS)
from .match import (as_match, instruction_frame, invocation_frame, matches)
from .polyset import (AffineExpr, BasicSet, Constraint, INEQ,
                      parse_param_constraint)

logger = logging.getLogger(__name__)


def _namelist(value):
    if value is None:
        return []
    if isinstance(value, str):
        return [p.strip() for p in value.split(",") if p.strip()]
    return list(value)


def _check_tag(tag):
    if tag is None:
        return None
    if tag in VALID_TAGS or is_parallel_tag(tag):
        return tag
    raise TransformError(
        f"bad iname tag {tag!r}; expected g.N, l.N, unroll or sequential")


# {{{ split_iname

def split_iname(kernel, iname, factor, outer_tag=None, inner_tag=None):
    """Replace *iname* by ``factor*outer + inner`` with 0 <= inner < factor."""
    if iname not in kernel.all_inames:
        raise TransformError(f"unknown iname: {iname}")
    if is_parallel_tag(kernel.iname_tags.get(iname)):
        raise TransformError(
            f"iname '{iname}' is already tagged parallel")
    if factor < 1:
        raise TransformError(f"split factor must be positive: {factor}")
    _check_tag(outer_tag)
    _check_tag(inner_tag)

    outer = kernel.fresh_name(f"{iname}_outer")
    inner = kernel.fresh_name(f"{iname}_inner", extra_used=(outer,))

    idx = kernel.domains.node_index_of(iname)
    node = kernel.domains.nodes[idx].split_dim(iname, factor, outer, inner)
    domains = kernel.domains.with_node_replaced(idx, node)

    repl = ex.BinOp("+", ex.VarRef(inner),
                    ex.BinOp("*", ex.VarRef(outer), ex.IntLit(factor)))

    def rewrite(e):
        if isinstance(e, ex.VarRef) and e.name == iname:
            return repl
        if isinstance(e, ex.Reduction) and e.iname == iname:
            return ex.Reduction(e.op, outer,
                                ex.Reduction(e.op, inner, rewrite(e.body)))
        ch = ex.children(e)
        if not ch:
            return e
        return ex.rebuild(e, [rewrite(c) for c in ch])

    instructions = []
    for insn in kernel.instructions:
        within = insn.within_inames
        if iname in within:
            within = (within - {iname}) | {outer, inner}
        instructions.append(dataclasses.replace(
            insn, lhs=rewrite(insn.lhs), rhs=rewrite(insn.rhs),
            within_inames=within))

    rules = {}
    for name, rule in kernel.rules.items():
        rules[name] = dataclasses.replace(
            rule, body=rewrite(rule.body),
            free_iname_map=tuple((rn, rewrite(target))
                                 for rn, target in rule.free_iname_map))

    iname_tags = {k: v for k, v in kernel.iname_tags.items() if k != iname}
    if outer_tag is not None:
        iname_tags[outer] = outer_tag
    if inner_tag is not None:
        iname_tags[inner] = inner_tag

    out = kernel.copy(domains=domains, instructions=tuple(instructions),
                      rules=rules, iname_tags=iname_tags)
    validate_kernel(out)
    return out

# }}}


# {{{ assume

_MOD_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s+mod\s+(\d+)\s*=\s*0\s*$")


def assume(kernel, text):
    """Record ``param mod K = 0`` or an affine constraint over params."""
    inames = set(kernel.all_inames)
    m = _MOD_RE.match(text)
    if m:
        name, modulus = m.group(1), int(m.group(2))
        if name in inames:
            raise TransformError(
                f"assumption mentions iname '{name}'")
        asm = kernel.assumptions.with_divisibility(
            AffineExpr.var(name), modulus)
        return kernel.copy(assumptions=asm)
    constraints = parse_param_constraint(text)
    asm = kernel.assumptions
    for c in constraints:
        bad = c.expr.variables & inames
        if bad:
            raise TransformError(
                f"assumption mentions iname(s) {sorted(bad)}")
        asm = asm.with_constraint(c.canonicalized())
    return kernel.copy(assumptions=asm)

# }}}


# {{{ tag_instructions

def tag_instructions(kernel, match, tag):
    match = as_match(match)
    hits = 0
    instructions = []
    for insn in kernel.instructions:
        if matches(match, [instruction_frame(insn)]):
            hits += 1
            instructions.append(dataclasses.replace(
                insn, tags=insn.tags | {tag}))
        else:
            instructions.append(insn)
    if not hits:
        logger.warning("tag_instructions: no instruction matched")
    return kernel.copy(instructions=tuple(instructions))

# }}}


# {{{ extract_subst

def extract_subst(kernel, rule_name, template_text, parameters):
    """Unify a template against subexpressions; rewrite matches to rule
    invocations.

    Parameter names in the template are pattern variables; everything
    else is literal.  Non-parameter free inames of the template are
    canonically renamed in the stored rule body and re-bound at each
    invocation site through the rule's free-iname map.
    """
    parameters = tuple(_namelist(parameters))
    template = ex.parse_expr(template_text)
    free = ex.free_variables(template)
    missing = [p for p in parameters if p not in free]
    if missing:
        raise TransformError(
            f"template parameter(s) {missing} do not occur in "
            f"{template_text!r}")
    if rule_name in kernel.rules:
        rule_name = kernel.fresh_name(rule_name)

    paramset = set(parameters)

    def try_match(e):
        bindings = {}

        def m(t, node):
            if isinstance(t, ex.VarRef) and t.name in paramset:
                if t.name in bindings:
                    return bindings[t.name] == node
                bindings[t.name] = node
                return True
            if type(t) is not type(node):
                return False
            if isinstance(t, (ex.IntLit, ex.FloatLit)):
                return t.value == node.value
            if isinstance(t, ex.VarRef):
                return t.name == node.name
            if isinstance(t, ex.Subscript) and t.array != node.array:
                return False
            if isinstance(t, ex.Call) and t.function != node.function:
                return False
            if isinstance(t, ex.RuleInvocation) and \
                    (t.rule != node.rule or t.tag != node.tag):
                return False
            if isinstance(t, (ex.BinOp, ex.Compare)) and t.op != node.op:
                return False
            if isinstance(t, ex.UnOp) and t.op != node.op:
                return False
            if isinstance(t, ex.Reduction) and \
                    (t.op != node.op or t.iname != node.iname):
                return False
            tch, nch = ex.children(t), ex.children(node)
            if len(tch) != len(nch):
                return False
            return all(m(a, b) for a, b in zip(tch, nch))

        return bindings if m(template, e) else None

    hits = 0

    def rewrite(e):
        nonlocal hits
        b = try_match(e)
        if b is not None:
            hits += 1
            return ex.RuleInvocation(
                rule_name, None, tuple(rewrite(b[p]) for p in parameters))
        ch = ex.children(e)
        if not ch:
            return e
        return ex.rebuild(e, [rewrite(c) for c in ch])

    instructions = tuple(
        dataclasses.replace(insn, rhs=rewrite(insn.rhs))
        for insn in kernel.instructions)
    rules = {name: dataclasses.replace(rule, body=rewrite(rule.body))
             for name, rule in kernel.rules.items()}
    if not hits:
        logger.warning("extract_subst: template %r matched nothing",
                       template_text)

    # canonical renaming of non-parameter free inames in the stored body
    inames = set(kernel.all_inames)
    body = template
    iname_map = []
    used = set(free) | paramset
    for name in sorted(free - paramset):
        if name in inames:
            renamed = kernel.fresh_name(f"{name}_0", extra_used=used)
            used.add(renamed)
            body = ex.substitute(body, {name: ex.VarRef(renamed)})
            iname_map.append((renamed, ex.VarRef(name)))

    rules[rule_name] = ex.SubstitutionRule(
        rule_name, parameters, body, tuple(iname_map))
    out = kernel.copy(instructions=instructions, rules=rules)
    validate_kernel(out)
    return out

# }}}


# {{{ wrap_variable_access

def wrap_variable_access(kernel, var, rule_name=None):
    """Wrap every reading access to an array or scalar in a new rule."""
    amap = kernel.arg_map()
    if var in amap:
        rank = len(amap[var].shape)
    elif var in kernel.temporaries:
        rank = len(kernel.temporaries[var].shape)
    else:
        raise TransformError(f"'{var}' is not an argument or temporary")
    if rule_name is None:
        rule_name = kernel.fresh_name(f"{var}_subst")
    if rank:
        params = [f"p{d}" for d in range(rank)]
        template = f"{var}[{', '.join(params)}]"
    else:
        params = []
        template = var
    return extract_subst(kernel, rule_name, template, params)

# }}}


# {{{ temporary_to_subst

def temporary_to_subst(kernel, temp_name):
    """Turn the single definition of a temporary into a substitution rule."""
    if temp_name not in kernel.temporaries:
        raise TransformError(f"unknown temporary '{temp_name}'")
    writers = [i for i in kernel.instructions
               if i.assignee_name() == temp_name]
    if len(writers) != 1:
        raise TransformError(
            f"temporary '{temp_name}' written by {len(writers)} "
            "instructions; need exactly one")
    deff = writers[0]
    if deff.predicates:
        raise TransformError(
            f"definition of '{temp_name}' is predicated")

    if isinstance(deff.lhs, ex.Subscript):
        def_subscript = []
        for idx in deff.lhs.index:
            if not isinstance(idx, ex.VarRef) \
                    or idx.name not in kernel.all_inames:
                raise TransformError(
                    f"definition of '{temp_name}' has a non-iname "
                    "subscript")
            def_subscript.append(idx.name)
        if len(set(def_subscript)) != len(def_subscript):
            raise TransformError(
                f"definition of '{temp_name}' repeats an iname subscript")
    else:
        def_subscript = []

    used = ex.free_variables(kernel.expand_for_analysis(deff.rhs)) \
        | set(def_subscript)
    params = tuple(i for i in kernel.iname_order(deff.within_inames)
                   if i in used)
    if def_subscript and set(params) != set(def_subscript):
        raise TransformError(
            f"definition of '{temp_name}' depends on inames "
            f"{sorted(set(params) - set(def_subscript))} not in its "
            "subscript")

    rule_name = kernel.fresh_name(f"{temp_name}_subst")
    rule = ex.SubstitutionRule(rule_name, params, deff.rhs)

    def rewrite(e, reader):
        if isinstance(e, ex.VarRef) and e.name == temp_name:
            if set(params) - reader.within_inames:
                raise TransformError(
                    f"read of '{temp_name}' in {reader.id} lies outside "
                    f"the defining inames {params}")
            return ex.RuleInvocation(
                rule_name, None, tuple(ex.VarRef(p) for p in params))
        if isinstance(e, ex.Subscript) and e.array == temp_name:
            if len(e.index) != len(def_subscript):
                raise TransformError(
                    f"read of '{temp_name}' in {reader.id} has wrong rank")
            pos = {}
            for def_iname, idx in zip(def_subscript, e.index):
                if not isinstance(idx, ex.VarRef) \
                        or idx.name not in kernel.all_inames:
                    raise TransformError(
                        f"read of '{temp_name}' in {reader.id} is not a "
                        "plain iname tuple")
                pos[def_iname] = idx
            return ex.RuleInvocation(
                rule_name, None, tuple(pos[p] for p in params))
        ch = ex.children(e)
        if not ch:
            return e
        return ex.rebuild(e, [rewrite(c, reader) for c in ch])

    instructions = []
    for insn in kernel.instructions:
        if insn.id == deff.id:
            continue
        deps = insn.depends_on
        if deff.id in deps:
            deps = (deps - {deff.id}) | deff.depends_on
        new_lhs = insn.lhs
        if isinstance(insn.lhs, ex.Subscript):
            new_lhs = ex.Subscript(
                insn.lhs.array,
                tuple(rewrite(i, insn) for i in insn.lhs.index))
        instructions.append(dataclasses.replace(
            insn, lhs=new_lhs, rhs=rewrite(insn.rhs, insn),
            depends_on=deps))

    rules = {name: dataclasses.replace(r, body=rewrite(r.body, deff))
             for name, r in kernel.rules.items()}
    rules[rule_name] = rule
    temporaries = {k: v for k, v in kernel.temporaries.items()
                   if k != temp_name}
    out = kernel.copy(instructions=tuple(instructions), rules=rules,
                      temporaries=temporaries)
    validate_kernel(out)
    return out

# }}}


# {{{ expand_subst

class _RuleExpander:
    """Rule-aware walker: inline matching invocations, copying shared
    rules on divergence (h -> h_0) so unmatched sites stay untouched."""

    def __init__(self, kernel, match_expr):
        self.kernel = kernel
        self.match = match_expr
        self.rules = dict(kernel.rules)
        self.copy_cache = {}
        self.hits = 0

    def walk(self, e, stack):
        if isinstance(e, ex.RuleInvocation):
            return self.walk_invocation(e, stack)
        ch = ex.children(e)
        if not ch:
            return e
        return ex.rebuild(e, [self.walk(c, stack) for c in ch])

    def walk_invocation(self, e, stack):
        if e.rule not in self.rules:
            raise TransformError(f"invocation of unknown rule '{e.rule}'")
        new_args = tuple(self.walk(a, stack) for a in e.args)
        frame_stack = (invocation_frame(e),) + tuple(stack)
        rule = self.rules[e.rule]
        new_body = self.walk(rule.body, frame_stack)
        if matches(self.match, frame_stack):
            self.hits += 1
            return self.inline(rule, new_body, new_args, stack)
        if new_body != rule.body:
            copy_name = self.copy_of(e.rule, rule, new_body)
            return ex.RuleInvocation(copy_name, e.tag, new_args)
        return ex.RuleInvocation(e.rule, e.tag, new_args)

    def inline(self, rule, body, args, stack):
        if len(args) != len(rule.params):
            raise TransformError(
                f"rule {rule.name} expects {len(rule.params)} arguments, "
                f"got {len(args)}")
        bindings = dict(zip(rule.params, args))
        for renamed, target in rule.free_iname_map:
            bindings[renamed] = self.walk(target, stack)
        body = self.uncapture(body, bindings)
        return ex.substitute(body, bindings)

    def uncapture(self, body, bindings):
        conflicts = set()
        for r in ex.reduction_inames(body):
            for v in bindings.values():
                if r in ex.free_variables(v):
                    conflicts.add(r)
        for old in sorted(conflicts):
            new = self.kernel.fresh_name(old)
            self.kernel = _duplicate_domain_iname(self.kernel, old, new)
            body = ex.rename_reduction_iname(body, old, new)
        return body

    def copy_of(self, name, rule, new_body):
        key = (name, new_body)
        if key not in self.copy_cache:
            copy_name = self.kernel.copy(rules=self.rules) \
                .fresh_name(name)
            copy = dataclasses.replace(rule, name=copy_name, body=new_body)
            self.rules[copy_name] = copy
            self.copy_cache[key] = copy_name
        return self.copy_cache[key]

    def run(self):
        instructions = []
        for insn in self.kernel.instructions:
            stack = (instruction_frame(insn),)
            instructions.append(dataclasses.replace(
                insn, lhs=self.walk(insn.lhs, stack),
                rhs=self.walk(insn.rhs, stack)))
        return self.kernel.copy(instructions=tuple(instructions),
                                rules=self.rules)


def _duplicate_domain_iname(kernel, old, new):
    idx = kernel.domains.node_index_of(old)
    node = kernel.domains.nodes[idx]
    extra = [Constraint(c.kind, c.expr.substitute(
        {old: AffineExpr.var(new)}))
        for c in node.constraints if c.expr.coeff(old)]
    grown = node.__class__(node.set_dims + (new,), node.params,
                           node.constraints + tuple(extra))
    return kernel.copy(
        domains=kernel.domains.with_node_replaced(idx, grown))


def expand_subst(kernel, match):
    """Inline rule invocations whose expansion stack matches."""
    expander = _RuleExpander(kernel, as_match(match))
    out = expander.run()
    if not expander.hits:
        logger.warning("expand_subst: nothing matched")
    validate_kernel(out)
    return out


def expand_all_rules(kernel):
    """Inline every rule invocation; drop the rule table."""
    _check_rule_recursion(kernel)
    out = kernel
    for _ in range(100):
        expander = _RuleExpander(out, as_match("*"))
        out = expander.run()
        if not expander.hits:
            break
    else:
        raise TransformError("rule expansion did not terminate")
    out = out.copy(rules={})
    validate_kernel(out)
    return out


def _check_rule_recursion(kernel):
    def refs(rule):
        out = set()
        stack = [rule.body]
        while stack:
            node = stack.pop()
            if isinstance(node, ex.RuleInvocation):
                out.add(node.rule)
            stack.extend(ex.children(node))
        return out

    graph = {name: refs(rule) & set(kernel.rules)
             for name, rule in kernel.rules.items()}
    state = {}

    def visit(name, trail):
        state[name] = 1
        for dep in sorted(graph[name]):
            if state.get(dep) == 1:
                raise TransformError(
                    "recursion among substitution rules: "
                    + " -> ".join(trail + [dep]))
            if state.get(dep) is None:
                visit(dep, trail + [dep])
        state[name] = 2

    for name in sorted(graph):
        if state.get(name) is None:
            visit(name, [name])

# }}}


# {{{ precompute

def precompute(kernel, rule_or_match, sweep_inames, default_tag="sequential"):
    """Materialize a rule's values over the sweep footprint.

    Allocates a temporary sized by the rectangular access footprint of
    the rule parameters over the sweep box, emits one fetch instruction
    driven by fresh inames, and redirects matching invocation sites to
    the temporary.
    """
    sweep = _namelist(sweep_inames)
    match = as_match(rule_or_match)
    sites = _collect_sites(kernel, match)
    if not sites:
        plain = rule_or_match if isinstance(rule_or_match, str) else None
        if plain and plain.isidentifier() and plain not in kernel.rules:
            raise TransformError(f"no such rule: {plain}")
        logger.warning("precompute: nothing matched")
        return kernel
    rule_names = {site.invocation.rule for site in sites}
    if len(rule_names) > 1:
        raise TransformError(
            f"precompute matched several rules: {sorted(rule_names)}")
    (rule_name,) = rule_names
    rule = kernel.rules[rule_name]

    consumers = {site.insn.id for site in sites}
    consumers_within = set()
    for site in sites:
        consumers_within |= site.insn.within_inames
    for s in sweep:
        if s not in consumers_within:
            raise TransformError(
                f"sweep iname '{s}' is not an iname of the invocation "
                "sites")
    non_swept = consumers_within - set(sweep)

    args_affine = []
    for site in sites:
        row = []
        for arg in site.invocation.args:
            aff = ex.expression_to_affine(arg)
            if aff is None:
                raise TransformError(
                    f"invocation argument {ex.render_expr(arg)!r} is not "
                    "affine in the inames")
            row.append(aff)
        args_affine.append(row)

    sweep_bounds = {s: _sweep_bounds(kernel, s, sweep) for s in sweep}
    axes = [_axis_footprint(kernel, rule, k,
                            [row[k] for row in args_affine],
                            sweep, sweep_bounds, len(sites))
            for k in range(len(rule.params))]

    temp_name = kernel.fresh_name(rule_name)
    dtype = infer_expr_dtype(
        kernel, kernel.expand_for_analysis(sites[0].invocation))
    space = "workgroup" if any(
        (kernel.iname_tags.get(s) or "").startswith("l.")
        for s in sweep) else "private"

    # fetch inames and their domain node
    new_inames = []
    used = set()
    for k, axis in enumerate(axes):
        name = kernel.fresh_name(rule.params[k], extra_used=used)
        used.add(name)
        new_inames.append(name)
    node, parent = _fetch_domain(kernel, new_inames, axes)
    domains = kernel.domains
    if node is not None:
        domains = domains.with_node_added(node, parent)

    # fetch instruction
    fetch_bindings = {}
    for param, iname, axis in zip(rule.params, new_inames, axes):
        fetch_bindings[param] = ex.affine_to_expression(
            axis.base + AffineExpr.var(iname))
    for renamed, target in rule.free_iname_map:
        fetch_bindings[renamed] = target
    fetch_rhs = ex.substitute(rule.body, fetch_bindings)
    if new_inames:
        fetch_lhs = ex.Subscript(
            temp_name, tuple(ex.VarRef(n) for n in new_inames))
    else:
        fetch_lhs = ex.VarRef(temp_name)
    fetch_id = _fresh_insn_id(kernel, f"{temp_name}_fetch")
    writers = kernel.writer_map()
    fetch_reads = ex.free_variables(
        kernel.copy(domains=domains).expand_for_analysis(fetch_rhs))
    fetch_deps = set()
    for var in fetch_reads:
        fetch_deps.update(writers.get(var, ()))
    fetch_insn = Instruction(
        id=fetch_id, lhs=fetch_lhs, rhs=fetch_rhs,
        within_inames=frozenset(non_swept) | frozenset(new_inames),
        depends_on=frozenset(fetch_deps))

    # rewrite invocation sites (matched by object identity)
    site_rewrites = {}
    for site, row in zip(sites, args_affine):
        if new_inames:
            idx = tuple(ex.affine_to_expression(aff - axis.base)
                        for aff, axis in zip(row, axes))
            repl = ex.Subscript(temp_name, idx)
        else:
            repl = ex.VarRef(temp_name)
        site_rewrites[id(site.invocation)] = repl

    def rewrite(e):
        if id(e) in site_rewrites:
            return site_rewrites[id(e)]
        ch = ex.children(e)
        if not ch:
            return e
        return ex.rebuild(e, [rewrite(c) for c in ch])

    instructions = []
    insert_at = min(i for i, insn in enumerate(kernel.instructions)
                    if insn.id in consumers)
    for i, insn in enumerate(kernel.instructions):
        if i == insert_at:
            instructions.append(fetch_insn)
        if insn.id in consumers:
            insn = dataclasses.replace(
                insn, lhs=rewrite(insn.lhs), rhs=rewrite(insn.rhs),
                depends_on=insn.depends_on | {fetch_id})
        instructions.append(insn)

    temporaries = dict(kernel.temporaries)
    temporaries[temp_name] = TemporaryDecl(
        name=temp_name, dtype=dtype,
        shape=tuple(AffineExpr.const(a.extent) for a in axes),
        address_space=space,
        base_offsets=tuple(a.base for a in axes))

    iname_tags = dict(kernel.iname_tags)
    tag = "sequential" if default_tag is None else _check_tag(default_tag)
    for n in new_inames:
        iname_tags[n] = tag

    out = kernel.copy(domains=domains, instructions=tuple(instructions),
                      temporaries=temporaries, iname_tags=iname_tags)
    validate_kernel(out)
    return out


@dataclasses.dataclass
class _Site:
    insn: Instruction
    invocation: ex.RuleInvocation


@dataclasses.dataclass
class _Axis:
    base: AffineExpr          # affine in non-swept inames and params
    extent: int
    sweep_iname: str | None
    residual_uppers: tuple    # QABs on the swept iname beyond the box
    lo: AffineExpr | None


def _collect_sites(kernel, match):
    sites = []
    for insn in kernel.instructions:
        stack = (instruction_frame(insn),)

        def walk(e, depth):
            if isinstance(e, ex.RuleInvocation):
                frame_stack = (invocation_frame(e),) + stack
                if matches(match, frame_stack):
                    if depth:
                        raise TransformError(
                            "precompute target occurs inside a rule "
                            "body; expand the outer rule first")
                    sites.append(_Site(insn, e))
                rule = kernel.rules.get(e.rule)
                if rule is not None:
                    walk(rule.body, depth + 1)
                for a in e.args:
                    walk(a, depth)
                return
            for c in ex.children(e):
                walk(c, depth)

        walk(insn.rhs, 0)
    return sites


def _sweep_bounds(kernel, s, sweep):
    idx = kernel.domains.node_index_of(s)
    node = kernel.domains.nodes[idx]
    fixed = [d for d in node.set_dims if d != s]
    fixed += [d for d in kernel.domains.ancestor_dims(idx)]
    lowers, uppers = node.bounds_for(s, fixed, kernel.assumptions)
    if len(lowers) != 1 or not lowers[0].is_plain_affine():
        raise TransformError(
            f"sweep iname '{s}' needs a single affine lower bound")
    lo = lowers[0].as_affine()
    if lo.variables & set(sweep):
        raise TransformError(
            f"footprint is not rectangular: bound of '{s}' references "
            "other sweep inames")
    box_uppers, residual = [], []
    for u in uppers:
        if u.is_plain_affine() and (u.as_affine() - lo).is_constant():
            box_uppers.append(u.as_affine())
        else:
            residual.append(u)
    if not box_uppers:
        raise TransformError(
            f"unbounded footprint: sweep iname '{s}' has no constant "
            "extent")
    ext = min((u - lo).constant for u in box_uppers) + 1
    if ext <= 0:
        raise TransformError(f"sweep iname '{s}' has empty range")
    return lo, ext, tuple(residual)


def _axis_footprint(kernel, rule, k, affs, sweep, sweep_bounds, n_sites):
    sweepset = set(sweep)
    sweep_vars = set()
    for aff in affs:
        sweep_vars |= aff.variables & sweepset
    if len(sweep_vars) > 1:
        raise TransformError(
            f"axis {rule.params[k]}: footprint mixes sweep inames "
            f"{sorted(sweep_vars)}")
    s = next(iter(sweep_vars)) if sweep_vars else None

    rests = []
    for aff in affs:
        coeff = aff.coeff(s) if s else 0
        if s is not None and coeff not in (0, 1):
            raise TransformError(
                f"axis {rule.params[k]}: sweep iname coefficient must "
                f"be 1, got {coeff}")
        rest = aff - AffineExpr({s: coeff}) if s else aff
        rests.append(rest)
    base_rest = rests[0]
    for rest in rests[1:]:
        if not (rest - base_rest).is_constant():
            raise TransformError(
                f"axis {rule.params[k]}: sites differ non-constantly")
    cmin = min((rest - base_rest).constant for rest in rests)
    cmax = max((rest - base_rest).constant for rest in rests)

    if s is None:
        base = base_rest + cmin
        return _Axis(base=base, extent=cmax - cmin + 1, sweep_iname=None,
                     residual_uppers=(), lo=None)

    lo, ext, residual = sweep_bounds[s]
    if residual and n_sites > 1:
        raise TransformError(
            f"axis {rule.params[k]}: partial tiles with several "
            "invocation sites are not supported")
    base = base_rest + cmin + lo
    return _Axis(base=base, extent=ext + (cmax - cmin),
                 sweep_iname=s, residual_uppers=residual, lo=lo)


def _fetch_domain(kernel, new_inames, axes):
    if not new_inames:
        return None, None
    constraints = []
    params = []
    for iname, axis in zip(new_inames, axes):
        constraints.append(Constraint(INEQ, AffineExpr({iname: 1})))
        constraints.append(Constraint(
            INEQ, AffineExpr({iname: -1}, axis.extent - 1)))
        if axis.sweep_iname is not None:
            for u in axis.residual_uppers:
                # p <= floor(num/div) + off - lo  <=>  div*p <= num + div*(off - lo)
                shifted = u.numerator + (u.offset * u.divisor) \
                    - axis.lo * u.divisor
                constraints.append(Constraint(
                    INEQ, shifted - AffineExpr({iname: u.divisor})))
    for c in constraints:
        for v in sorted(c.expr.variables):
            if v not in new_inames and v not in params:
                params.append(v)
    node = BasicSet(new_inames, params, constraints)
    parent = None
    for p in params:
        if p in kernel.all_inames:
            idx = kernel.domains.node_index_of(p)
            parent = idx if parent is None else max(parent, idx)
    return node, parent


def _fresh_insn_id(kernel, base):
    ids = {i.id for i in kernel.instructions}
    if base not in ids:
        return base
    k = 0
    while f"{base}_{k}" in ids:
        k += 1
    return f"{base}_{k}"

# }}}


TRANSFORM_VERBS = {
    "split_iname": split_iname,
    "assume": assume,
    "tag_instructions": tag_instructions,
    "extract_subst": extract_subst,
    "wrap_variable_access": wrap_variable_access,
    "temporary_to_subst": temporary_to_subst,
    "expand_subst": expand_subst,
    "expand_all_rules": expand_all_rules,
    "precompute": precompute,
}

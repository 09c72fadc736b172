"""Deterministic scheduler and C/OpenCL emitters.

Scheduling builds a loop tree over the *sequential* inames only:
parallel-tagged inames (g.N / l.N) are hardware axes that wrap the whole
kernel body — emitted as index definitions plus a guard for OpenCL, and
as ordinary outermost loops when emitting plain C or interpreting.

The greedy scheduler processes instructions in a dependency-respecting
order (ties broken by original position) and opens/closes loops lazily
so consecutive instructions sharing inames share loop nests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import expr as ex
from .errors import CodegenError, ScheduleError
from .kernel import (F32, F64, I32, infer_expr_dtype, is_parallel_tag,
                     validate_kernel)
from .polyset import (AffineExpr, Constraint, INEQ, QuasiAffineBound,
                      constraint_implied)
from .transforms import expand_all_rules

FLOOR_DIV_HELPER = "int_floor_div_pos_b"

_CTYPE = {F64: "double", F32: "float", I32: "int"}


# {{{ schedule tree

@dataclass
class Statement:
    insn_id: str


@dataclass
class Loop:
    iname: str
    children: list = field(default_factory=list)


@dataclass
class Conditional:
    predicates: frozenset  # (flag, negated) pairs
    children: list = field(default_factory=list)


@dataclass
class Block:
    children: list = field(default_factory=list)

# }}}


# {{{ scheduling

def sequential_inames_of(kernel, insn):
    return [i for i in kernel.iname_order(insn.within_inames)
            if not is_parallel_tag(kernel.iname_tags.get(i))]


def parallel_inames_of(kernel):
    return [i for i in kernel.all_inames
            if is_parallel_tag(kernel.iname_tags.get(i))]


def _topo_order(kernel):
    imap = kernel.instruction_map()
    order = {insn.id: i for i, insn in enumerate(kernel.instructions)}
    placed = set()
    remaining = list(kernel.instructions)
    out = []
    while remaining:
        ready = [i for i in remaining
                 if set(i.depends_on) <= placed]
        if not ready:
            raise ScheduleError(
                "instructions not schedulable (dependency cycle?): "
                + ", ".join(i.id for i in remaining))
        nxt = min(ready, key=lambda i: order[i.id])
        out.append(nxt)
        placed.add(nxt.id)
        remaining.remove(nxt)
    del imap
    return out


def schedule(kernel):
    """Greedy deterministic schedule; rules must be expanded first."""
    if kernel.rules:
        kernel = expand_all_rules(kernel)
    ordered = _topo_order(kernel)
    scalars = {t.name for t in kernel.temporaries.values() if not t.shape}

    root = Block()
    open_loops = []   # (iname, container, scalar_writes set)

    def scalar_reads(insn):
        reads = set()
        for e in insn.read_expressions():
            reads |= ex.free_variables(e)
        for flag, _neg in insn.predicates:
            reads.add(flag)
        return reads & scalars

    def reenters(insn, iname):
        if iname in insn.within_inames:
            return True
        red = set()
        for e in [insn.lhs] + insn.read_expressions():
            red |= ex.reduction_inames(e)
        return iname in red

    def close_to(depth, upcoming):
        while len(open_loops) > depth:
            iname, _container, writes = open_loops.pop()
            if not writes:
                continue
            # reading a scalar after its loop closed yields the final
            # iteration's value, which is fine; what cannot be scheduled
            # is re-entering the loop while consuming per-iteration state
            for scalar in sorted(writes):
                for later in upcoming:
                    if scalar in scalar_reads(later) \
                            and reenters(later, iname):
                        raise ScheduleError(
                            f"instruction '{later.id}' re-enters loop "
                            f"'{iname}' but reads scalar '{scalar}' "
                            "carrying per-iteration state; no valid "
                            "nesting")
                    if later.assignee_name() == scalar:
                        break

    for pos, insn in enumerate(ordered):
        want = sequential_inames_of(kernel, insn)
        common = 0
        for (have, _c, _w), need in zip(open_loops, want):
            if have != need:
                break
            common += 1
        close_to(common, ordered[pos:])
        for iname in want[common:]:
            container = open_loops[-1][1] if open_loops else root
            loop = Loop(iname)
            container.children.append(loop)
            open_loops.append((iname, loop, set()))
        container = open_loops[-1][1] if open_loops else root
        stmt = Statement(insn.id)
        if insn.predicates:
            container.children.append(
                Conditional(frozenset(insn.predicates), [stmt]))
        else:
            container.children.append(stmt)
        if isinstance(insn.lhs, ex.VarRef) and insn.lhs.name in scalars:
            for _iname, _c, writes in open_loops:
                writes.add(insn.lhs.name)
    close_to(0, [])
    return root

# }}}


# {{{ predicate grouping

def _common_predicates(node):
    if isinstance(node, Statement):
        return frozenset()
    if isinstance(node, Conditional):
        return node.predicates
    if isinstance(node, (Loop, Block)):
        sets = [_common_predicates(c) for c in node.children]
        if not sets or any(not s for s in sets):
            return frozenset()
        out = sets[0]
        for s in sets[1:]:
            out = out & s
        return frozenset(out)
    raise AssertionError(node)


def _strip_predicates(node, preds):
    if isinstance(node, Conditional):
        rest = node.predicates - preds
        children = [_strip_predicates(c, frozenset())
                    for c in node.children]
        if rest:
            return Conditional(rest, children)
        if len(children) == 1:
            return children[0]
        return Block(children)
    if isinstance(node, Loop):
        return Loop(node.iname,
                    [_strip_predicates(c, preds) for c in node.children])
    if isinstance(node, Block):
        return Block([_strip_predicates(c, preds) for c in node.children])
    return node


def group_predicates(node):
    """Merge maximal runs of siblings sharing a common predicate set."""
    if isinstance(node, Statement):
        return node
    if isinstance(node, Conditional):
        return Conditional(node.predicates,
                           [group_predicates(c) for c in node.children])
    children = [group_predicates(c) for c in node.children]
    merged = []
    i = 0
    while i < len(children):
        common = _common_predicates(children[i])
        if not common:
            merged.append(children[i])
            i += 1
            continue
        j = i + 1
        while j < len(children):
            nxt = _common_predicates(children[j]) & common
            if not nxt:
                break
            common = nxt
            j += 1
        run = children[i:j]
        if len(run) == 1 and isinstance(run[0], Conditional) \
                and run[0].predicates == common:
            merged.append(run[0])
        else:
            merged.append(Conditional(
                frozenset(common),
                [_strip_predicates(c, frozenset(common)) for c in run]))
        i = j
    if isinstance(node, Loop):
        return Loop(node.iname, merged)
    return Block(merged)

# }}}


# {{{ loop bounds

def loop_bounds(kernel, iname, visible):
    """Bounds of *iname* given the currently-open *visible* inames."""
    idx = kernel.domains.node_index_of(iname)
    node = kernel.domains.nodes[idx]
    fixed = [d for d in kernel.domains.ancestor_dims(idx)
             if d in visible]
    fixed += [d for d in node.set_dims if d != iname and d in visible]
    return node.bounds_for(iname, fixed, kernel.assumptions)


def launch_guaranteed_constraints(kernel, iname, visible):
    """Ranges of a parallel iname that the launch configuration enforces.

    Hardware ids are nonnegative; the host sizes group counts from the
    projected domain bounds (so g.N uppers hold), while a workgroup size
    is a single constant (so only constant l.N uppers hold).  Everything
    else needs a guard.
    """
    lowers, uppers = loop_bounds(kernel, iname, visible)
    tag = kernel.iname_tags[iname]
    out = []
    if len(lowers) == 1 and lowers[0].is_plain_affine() \
            and lowers[0].as_affine() == AffineExpr.const(0):
        out.append(Constraint(INEQ, AffineExpr({iname: 1})))
    for b in uppers:
        if tag.startswith("l.") and not (
                b.is_plain_affine() and b.as_affine().is_constant()):
            continue
        # v <= floor(n/d) + off  <=>  d*v <= n + d*off
        out.append(Constraint(
            INEQ,
            b.numerator + b.offset * b.divisor
            - AffineExpr({iname: b.divisor})))
    return out

# }}}


# {{{ C expression rendering

_C_PREC = {"cmp": 1, "+": 2, "-": 2, "*": 3, "/": 3, "neg": 4}

_FLOAT_FUNCS = {"sqrt": ("sqrtf", "sqrt"), "sin": ("sinf", "sin"),
                "cos": ("cosf", "cos"), "exp": ("expf", "exp"),
                "abs": ("fabsf", "fabs"), "min": ("fminf", "fmin"),
                "max": ("fmaxf", "fmax"), "pow": ("powf", "pow")}


class _CExprRenderer:
    def __init__(self, kernel, arrays):
        self.kernel = kernel
        self.arrays = arrays  # name -> (strides tuple) for linearization

    def dtype(self, e):
        return infer_expr_dtype(self.kernel, e)

    def render(self, e, prec=0, ctx=None):
        if isinstance(e, ex.IntLit):
            if ctx == F32:
                return f"{e.value}.0f" if e.value >= 0 \
                    else f"-{-e.value}.0f"
            if ctx == F64:
                return f"{e.value}.0" if e.value >= 0 else f"-{-e.value}.0"
            return str(e.value)
        if isinstance(e, ex.FloatLit):
            text = repr(e.value)
            return text + "f" if (ctx or F32) == F32 else text
        if isinstance(e, ex.VarRef):
            return e.name
        if isinstance(e, ex.Subscript):
            return self.render_subscript(e)
        if isinstance(e, ex.Compare):
            text = (f"{self.render(e.left, _C_PREC['cmp'] + 1)} {e.op} "
                    f"{self.render(e.right, _C_PREC['cmp'] + 1)}")
            return f"({text})" if prec > _C_PREC["cmp"] else text
        if isinstance(e, ex.UnOp):
            if e.op == "not":
                return f"!{self.render(e.operand, _C_PREC['neg'])}"
            text = f"-{self.render(e.operand, _C_PREC['neg'], ctx)}"
            return f"({text})" if prec > _C_PREC["neg"] else text
        if isinstance(e, ex.Call):
            return self.render_call(e)
        if isinstance(e, ex.BinOp):
            return self.render_binop(e, prec, ctx)
        if isinstance(e, ex.Reduction):
            raise CodegenError(
                "internal: reductions must be lowered before rendering")
        raise CodegenError(f"cannot render {e!r} as C")

    def render_binop(self, e, prec, ctx):
        dtype = self.dtype(e)
        inner_ctx = dtype if dtype in (F32, F64) else None
        if e.op == "**":
            return self.render_power(e, inner_ctx)
        if e.op == "-" and inner_ctx is not None:
            # float subtraction prints as + -1.0f * x
            one = "-1.0f" if inner_ctx == F32 else "-1.0"
            lhs = self.render(e.left, _C_PREC["+"], inner_ctx)
            rhs = self.render(e.right, _C_PREC["*"] + 1, inner_ctx)
            text = f"{lhs} + {one} * {rhs}"
            return f"({text})" if prec > _C_PREC["+"] else text
        p = _C_PREC[e.op]
        if e.op in ("+", "-"):
            lhs = self.render(e.left, p, inner_ctx)
            rhs = self.render(e.right, p + 1, inner_ctx)
            text = f"{lhs} {e.op} {rhs}"
        else:
            lhs = self.render(e.left, p, inner_ctx)
            rhs = self.render(e.right, p + 1, inner_ctx)
            text = f"{lhs} {e.op} {rhs}"
        return f"({text})" if prec > p else text

    def render_power(self, e, ctx):
        if isinstance(e.right, ex.IntLit) and 0 <= e.right.value <= 4:
            n = e.right.value
            if n == 0:
                return "1" if ctx is None else \
                    ("1.0f" if ctx == F32 else "1.0")
            base = self.render(e.left, _C_PREC["*"] + 1, ctx)
            return "(" + " * ".join([base] * n) + ")" if n > 1 else base
        fn = _FLOAT_FUNCS["pow"][0 if (ctx or F32) == F32 else 1]
        return (f"{fn}({self.render(e.left, 0, ctx)}, "
                f"{self.render(e.right, 0, ctx)})")

    def render_call(self, e):
        args = list(e.args)
        dtypes = [self.dtype(a) for a in args]
        joint = I32
        for d in dtypes:
            joint = d if _rank(d) > _rank(joint) else joint
        if e.function in _FLOAT_FUNCS:
            joint = joint if joint in (F32, F64) else F32
            fn = _FLOAT_FUNCS[e.function][0 if joint == F32 else 1]
            return f"{fn}(" + ", ".join(
                self.render(a, 0, joint) for a in args) + ")"
        raise CodegenError(f"no C mapping for function '{e.function}'")

    def render_subscript(self, e):
        strides = self.arrays.get(e.array)
        if strides is None:
            raise CodegenError(f"no strides known for array '{e.array}'")
        flat = self.linearize(e.index, strides)
        return f"{e.array}[{flat}]"

    def linearize(self, index, strides):
        total = AffineExpr.const(0)
        parts = []
        affine_ok = True
        for idx, stride in zip(index, strides):
            aff = ex.expression_to_affine(idx)
            if aff is None or not stride.is_constant() \
                    and not aff.is_constant():
                affine_ok = False
                break
            if stride.is_constant():
                total = total + aff * stride.constant
            else:
                total = total + stride * aff.constant
        if affine_ok:
            return render_affine_c(total)
        parts = []
        for idx, stride in zip(index, strides):
            idx_text = self.render(idx, _C_PREC["*"] + 1)
            if stride == AffineExpr.const(1):
                parts.append(idx_text)
            else:
                parts.append(f"{render_affine_c(stride, wrap=True)} * "
                             f"{idx_text}")
        return " + ".join(parts)


def _rank(dtype):
    return {I32: 0, F32: 1, F64: 2}[dtype]


def render_affine_c(aff, wrap=False):
    parts = []
    if aff.constant or not aff.coeffs:
        parts.append(str(aff.constant))
    for name in sorted(aff.coeffs):
        c = aff.coeffs[name]
        if c == 1:
            parts.append(name)
        elif c == -1:
            parts.append(f"-{name}")
        else:
            parts.append(f"{c} * {name}")
    text = parts[0]
    for p in parts[1:]:
        text += f" + {p}"
    if wrap and (len(parts) > 1 or aff.constant < 0):
        return f"({text})"
    return text


def render_bound_c(bound, used_helpers):
    if bound.divisor == 1:
        return render_affine_c(bound.numerator + bound.offset)
    num = render_affine_c(bound.numerator)
    if bound.exact:
        core = f"{num} / {bound.divisor}" if _atomic(bound.numerator) \
            else f"({num}) / {bound.divisor}"
    else:
        used_helpers.add(FLOOR_DIV_HELPER)
        core = f"{FLOOR_DIV_HELPER}({num}, {bound.divisor})"
    if bound.offset == 0:
        return core
    return f"{bound.offset} + {core}"


def _atomic(aff):
    return (len(aff.coeffs) == 1 and aff.constant == 0
            and next(iter(aff.coeffs.values())) == 1) or not aff.coeffs


def render_constraint_c(c):
    pos = AffineExpr({n: v for n, v in c.expr.coeffs.items() if v > 0},
                     max(c.expr.constant, 0))
    neg = AffineExpr({n: -v for n, v in c.expr.coeffs.items() if v < 0},
                     max(-c.expr.constant, 0))
    op = "==" if c.kind == "eq" else "<="
    return f"{render_affine_c(neg)} {op} {render_affine_c(pos)}"

# }}}


# {{{ emitter

class _Emitter:
    def __init__(self, kernel, target):
        if target not in ("c", "opencl"):
            raise CodegenError(f"unknown target {target!r}")
        if kernel.rules:
            kernel = expand_all_rules(kernel)
        validate_kernel(kernel)
        self.kernel = kernel
        self.target = target
        self.lines = []
        self.indent = 0
        self.used_helpers = set()
        self.visible = []
        self.tmp_counter = 0
        arrays = {}
        for a in kernel.args:
            if a.kind == "global-array":
                arrays[a.name] = a.strides
        for t in kernel.temporaries.values():
            if t.shape:
                arrays[t.name] = _temp_strides(t)
        self.expr = _CExprRenderer(kernel, arrays)
        self.imap = kernel.instruction_map()

    def line(self, text=""):
        self.lines.append("  " * self.indent + text if text else "")

    def emit(self):
        tree = group_predicates(schedule(self.kernel))
        body = self.render_body(tree)
        header = self.render_signature()
        pre = []
        if FLOOR_DIV_HELPER in self.used_helpers:
            qual = "static " if self.target == "c" else ""
            pre.append(
                f"{qual}int {FLOOR_DIV_HELPER}(int a, int b)")
            pre.append("{")
            pre.append("  return (a - (a < 0 ? b - 1 : 0)) / b;")
            pre.append("}")
            pre.append("")
        return "\n".join(pre + [header] + body) + "\n"

    def render_signature(self):
        params = []
        arg_names = set()
        for a in self.kernel.args:
            ctype = _CTYPE[a.dtype]
            arg_names.add(a.name)
            if a.kind == "global-array":
                qual = "__global " if self.target == "opencl" else ""
                const = "" if a.is_output else "const "
                params.append(f"{qual}{ctype} {const}*{a.name}")
            else:
                params.append(f"{ctype} {a.name}")
        for p in sorted(self.kernel.param_names):
            if p not in arg_names:
                params.append(f"int {p}")
        kw = "__kernel void" if self.target == "opencl" else "void"
        return f"{kw} {self.kernel.name}({', '.join(params)})"

    def render_body(self, tree):
        self.lines = []
        self.indent = 1
        for line in self.render_temp_decls():
            self.line(line)
        if self.lines:
            self.line()

        parallel = parallel_inames_of(self.kernel)
        if self.target == "opencl":
            self.emit_opencl_prologue(parallel)
            guard = self.opencl_guard(parallel)
            if guard:
                self.line(f"if ({guard})")
                self.line("{")
                self.indent += 1
                self.walk(tree)
                self.indent -= 1
                self.line("}")
            else:
                self.walk(tree)
        else:
            self.emit_c_wrappers(parallel, tree)
        body = ["{"] + self.lines + ["}"]
        return body

    def render_temp_decls(self):
        out = []
        for name in sorted(self.kernel.temporaries):
            t = self.kernel.temporaries[name]
            ctype = _CTYPE[t.dtype]
            qual = ""
            if self.target == "opencl" and t.address_space == "workgroup":
                qual = "__local "
            if not t.shape:
                out.append(f"{qual}{ctype} {name};")
                continue
            total = 1
            symbolic = None
            for extent in t.shape:
                if extent.is_constant():
                    total *= extent.constant
                elif symbolic is None and len(t.shape) == 1:
                    symbolic = render_affine_c(extent)
                else:
                    raise CodegenError(
                        f"temporary '{name}' needs constant extents")
            size = symbolic if symbolic is not None else str(total)
            out.append(f"{qual}{ctype} {name}[{size}];")
        return out

    def emit_opencl_prologue(self, parallel):
        for iname in parallel:
            tag = self.kernel.iname_tags[iname]
            kind, axis = tag.split(".")
            fn = "get_group_id" if kind == "g" else "get_local_id"
            self.line(f"int const {iname} = (int) {fn}({axis});")
            self.visible.append(iname)
        if parallel:
            self.line()

    def opencl_guard(self, parallel):
        if not parallel:
            return ""
        context = []
        seen = []
        for iname in parallel:
            context.extend(launch_guaranteed_constraints(
                self.kernel, iname, seen))
            seen.append(iname)
        guards = []
        pset = set(parallel)
        seq_inames = set(self.kernel.all_inames) - pset
        for node in self.kernel.domains.nodes:
            for c in node.constraints:
                if not (c.expr.variables & pset):
                    continue
                if c.expr.variables & seq_inames:
                    # sequential loop bounds enforce this one
                    continue
                if not constraint_implied(
                        c, context, self.kernel.assumptions):
                    guards.append(c)
        return " && ".join(render_constraint_c(c) for c in guards)

    def emit_c_wrappers(self, parallel, tree):
        if not parallel:
            self.walk(tree)
            return
        iname = parallel[0]
        self.emit_loop(iname, lambda: self.emit_c_wrappers(
            parallel[1:], tree))

    def emit_loop(self, iname, body_fn):
        lowers, uppers = loop_bounds(self.kernel, iname, self.visible)
        lo = self.combine_bounds(lowers, "max")
        up = self.combine_bounds(uppers, "min")
        tag = self.kernel.iname_tags.get(iname)
        if tag == "unroll":
            self.emit_unrolled(iname, lowers, uppers, body_fn)
            return
        self.line(f"for (int {iname} = {lo}; {iname} <= {up}; ++{iname})")
        self.emit_block(body_fn, iname)

    def emit_block(self, body_fn, iname=None):
        mark = len(self.lines)
        self.line("{")
        self.indent += 1
        if iname is not None:
            self.visible.append(iname)
        body_fn()
        if iname is not None:
            self.visible.pop()
        self.indent -= 1
        self.line("}")
        # collapse single-statement block to the paper's brace-free style
        if len(self.lines) == mark + 3:
            stmt = self.lines[mark + 1]
            del self.lines[mark:]
            self.line("  " + stmt.strip())

    def emit_unrolled(self, iname, lowers, uppers, body_fn):
        if not all(b.numerator.is_constant() for b in lowers + uppers):
            raise CodegenError(
                f"unroll-tagged iname '{iname}' has non-constant bounds")
        lo = max(b.eval({}) for b in lowers)
        up = min(b.eval({}) for b in uppers)
        for value in range(lo, up + 1):
            self.line("{")
            self.indent += 1
            self.line(f"int const {iname} = {value};")
            self.visible.append(iname)
            body_fn()
            self.visible.pop()
            self.indent -= 1
            self.line("}")

    def combine_bounds(self, bounds, how):
        rendered = [render_bound_c(b, self.used_helpers) for b in bounds]
        out = rendered[0]
        for nxt in rendered[1:]:
            if how == "max":
                out = f"(({out}) > ({nxt}) ? ({out}) : ({nxt}))"
            else:
                out = f"(({out}) < ({nxt}) ? ({out}) : ({nxt}))"
        return out

    def walk(self, node):
        if isinstance(node, Block):
            for c in node.children:
                self.walk(c)
            return
        if isinstance(node, Loop):
            self.emit_loop(node.iname,
                           lambda: [self.walk(c) for c in node.children])
            return
        if isinstance(node, Conditional):
            cond = " && ".join(
                f"!{flag}" if neg else flag
                for flag, neg in sorted(node.predicates))
            self.line(f"if ({cond})")
            self.emit_block(
                lambda: [self.walk(c) for c in node.children])
            return
        if isinstance(node, Statement):
            self.emit_statement(self.imap[node.insn_id])
            return
        raise AssertionError(node)

    def emit_statement(self, insn):
        rhs = self.lower_reductions(insn.rhs)
        lhs_text = self.expr.render(insn.lhs)
        # literals render at the expression's own dtype so the C
        # arithmetic widths match the interpreter's
        rhs_dtype = infer_expr_dtype(self.kernel, rhs)
        use_ctx = rhs_dtype if rhs_dtype in (F32, F64) else None
        rhs_text = self.expr.render(rhs, 0, use_ctx)
        self.line(f"{lhs_text} = {rhs_text};")
        if self.target == "opencl" and isinstance(insn.lhs, ex.Subscript):
            t = self.kernel.temporaries.get(insn.lhs.array)
            if t is not None and t.address_space == "workgroup":
                self.line("/* barrier(CLK_LOCAL_MEM_FENCE) */")

    def lower_reductions(self, e):
        """Replace Reduction nodes by accumulator loops emitted in place."""
        ch = ex.children(e)
        if ch:
            e = ex.rebuild(e, [self.lower_reductions(c) for c in ch])
        if not isinstance(e, ex.Reduction):
            return e
        dtype = infer_expr_dtype(self.kernel, e.body)
        ctype = _CTYPE[dtype]
        acc = f"red_acc_{self.tmp_counter}"
        self.tmp_counter += 1
        ctx = dtype if dtype in (F32, F64) else None
        if e.op in ("sum", "product"):
            init = {"sum": "0", "product": "1"}[e.op]
            if ctx == F32:
                init += ".0f"
            elif ctx == F64:
                init += ".0"
            self.line(f"{ctype} {acc} = {init};")
            op = "+" if e.op == "sum" else "*"

            def body():
                text = self.expr.render(e.body, _C_PREC["*"], ctx)
                self.line(f"{acc} = {acc} {op} {text};")
        else:
            first = f"red_first_{self.tmp_counter}"
            self.tmp_counter += 1
            self.line(f"{ctype} {acc};")
            self.line(f"int {first} = 1;")
            if dtype == I32:
                raise CodegenError(
                    f"integer {e.op} reduction not supported by the "
                    "C emitter")
            fn = _FLOAT_FUNCS[e.op][0 if dtype == F32 else 1]

            def body():
                text = self.expr.render(e.body, 0, ctx)
                self.line(f"{acc} = {first} ? ({text}) "
                          f": {fn}({acc}, {text});")
                self.line(f"{first} = 0;")
        self.emit_loop(e.iname, body)
        return ex.VarRef(acc)


def _temp_strides(t):
    strides = [AffineExpr.const(1)]
    for extent in reversed(t.shape[1:]):
        if not extent.is_constant():
            raise CodegenError(
                f"temporary '{t.name}' needs constant extents for "
                "linearization")
        strides.append(strides[-1] * extent.constant)
    return tuple(reversed(strides))


def emit(kernel, target):
    """Render the kernel as C99 or OpenCL source text."""
    return _Emitter(kernel, target).emit()

# }}}

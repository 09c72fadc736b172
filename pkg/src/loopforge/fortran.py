"""Fortran-77 subset front-end.

Translates a single subroutine into a kernel: each ``do`` adds a
0-based axis to the loop domain (loop variables renamed on collision),
``if`` blocks become predicate flags (``loopy_cond<N>``), dependencies
form a linear chain in program order, and 1-based column-major array
subscripts are normalized during lowering.

``!$loopy begin/end transform`` comment blocks carry a transform script
in a command mini-language matching the paper-style usage
``knl = lp.verb(knl, args...)``; ``!$loopy begin/end tagged: <tag>``
applies instruction tags to the enclosed statements.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import expr as ex
from .errors import ParseError, RestrictionError, TransformError
from .kernel import (ArgDecl, F32, F64, I32, Instruction, Kernel,
                     TemporaryDecl, infer_expr_dtype, validate_kernel)
from .polyset import (AffineExpr, BasicSet, Constraint, DomainTree, INEQ)
from .transforms import TRANSFORM_VERBS

logger = logging.getLogger(__name__)

_DTYPES = {"real*8": F64, "real*4": F32, "real": F32,
           "double precision": F64, "integer": I32, "logical": I32}

_RESTRICTED = {
    "exit": "EXIT", "cycle": "CYCLE", "return": "RETURN",
    "entry": "ENTRY", "call": "CALL", "goto": "GOTO", "go": "GOTO",
    "common": "COMMON", "save": "SAVE", "read": "READ (I/O)",
    "write": "WRITE (I/O)", "print": "PRINT (I/O)", "open": "OPEN (I/O)",
    "close": "CLOSE (I/O)", "rewind": "REWIND (I/O)",
    "format": "FORMAT (I/O)", "pointer": "POINTER",
    "allocate": "ALLOCATE", "deallocate": "DEALLOCATE",
    "equivalence": "EQUIVALENCE", "data": "DATA",
    "function": "FUNCTION subprogram",
}


# {{{ statement tree

@dataclass
class FAssign:
    lhs: ex.Expression
    rhs: ex.Expression
    line: int
    tags: frozenset = frozenset()


@dataclass
class FDo:
    var: str
    lo: ex.Expression
    hi: ex.Expression
    body: list
    line: int


@dataclass
class FIf:
    cond: ex.Expression
    then_body: list
    else_body: list
    line: int


@dataclass
class FortranUnit:
    name: str
    args: tuple                      # argument names in order
    decls: dict                      # name -> (dtype, dims tuple or ())
    body: list = field(default_factory=list)
    transform_blocks: list = field(default_factory=list)  # (text, line)
    source_name: str = "<fortran>"

# }}}


# {{{ parsing

_PRAGMA_RE = re.compile(
    r"^\s*!\$loopy\s+(begin|end)\s+(transform|tagged\s*:\s*(\S+))\s*$",
    re.I)
_SUBROUTINE_RE = re.compile(
    r"^subroutine\s+([a-z_][a-z0-9_]*)\s*\(([^)]*)\)\s*$")
_DO_RE = re.compile(
    r"^do\s+([a-z_][a-z0-9_]*)\s*=\s*(.+)$")
_IF_THEN_RE = re.compile(r"^if\s*\((.*)\)\s*then$")
_DECL_RE = re.compile(
    r"^(real\s*\*\s*[48]|double\s+precision|real|integer|logical)\s+(.*)$")


def parse_fortran(source, source_name="<fortran>"):
    """Parse one subroutine plus pragma blocks out of Fortran source."""
    unit = None
    stack = []            # nested statement lists
    tag_stack = []        # active tagged-region tags
    transform_lines = None
    transform_start = 0
    blocks = []
    done = False

    for lineno, raw in enumerate(source.splitlines(), start=1):
        pragma = _PRAGMA_RE.match(raw)
        if pragma:
            which, kind = pragma.group(1).lower(), pragma.group(2).lower()
            if kind.startswith("transform"):
                if which == "begin":
                    if transform_lines is not None:
                        raise ParseError("nested transform block",
                                         span=(source_name, lineno, None))
                    transform_lines = []
                    transform_start = lineno
                else:
                    if transform_lines is None:
                        raise ParseError("transform end without begin",
                                         span=(source_name, lineno, None))
                    blocks.append(("\n".join(transform_lines),
                                   transform_start))
                    transform_lines = None
            else:
                tag = pragma.group(3)
                if which == "begin":
                    tag_stack.append(tag)
                else:
                    if not tag_stack or tag_stack[-1] != tag:
                        raise ParseError(
                            f"mismatched tagged region '{tag}'",
                            span=(source_name, lineno, None))
                    tag_stack.pop()
            continue

        if transform_lines is not None:
            stripped = raw.strip()
            if stripped.startswith("!"):
                payload = stripped[1:]
                if payload.startswith(" "):
                    payload = payload[1:]
                transform_lines.append(payload)
            elif stripped:
                raise ParseError(
                    "non-comment line inside transform block",
                    span=(source_name, lineno, None))
            continue

        line = _strip_comment(raw)
        if not line:
            continue
        line = line.strip().lower()

        first = re.match(r"[a-z_][a-z0-9_]*", line)
        word = first.group() if first else ""
        if word in _RESTRICTED:
            raise RestrictionError(_RESTRICTED[word],
                                   span=(source_name, lineno, None))

        m = _SUBROUTINE_RE.match(line)
        if m:
            if unit is not None:
                if done:
                    raise RestrictionError(
                        "multiple subroutines per file",
                        span=(source_name, lineno, None))
                raise ParseError("nested subroutine",
                                 span=(source_name, lineno, None))
            args = tuple(a.strip() for a in m.group(2).split(",")
                         if a.strip())
            unit = FortranUnit(name=m.group(1), args=args, decls={},
                               source_name=source_name)
            stack = [unit.body]
            continue

        if unit is None or done:
            raise ParseError(f"statement outside subroutine: {line!r}",
                             span=(source_name, lineno, None))

        if line in ("end", "end subroutine") \
                or line.startswith("end subroutine"):
            if len(stack) != 1:
                raise ParseError("unterminated block at subroutine end",
                                 span=(source_name, lineno, None))
            done = True
            continue

        if line == "implicit none":
            continue

        m = _DECL_RE.match(line)
        if m:
            dtype = _DTYPES[re.sub(r"\s+", " ", m.group(1)).replace(" *", "*")
                            .replace("* ", "*")]
            _parse_decl_entries(unit, m.group(2), dtype,
                                (source_name, lineno))
            continue

        if line in ("end do", "enddo"):
            _close_block(stack, FDo, source_name, lineno)
            continue
        if line in ("end if", "endif"):
            _close_block(stack, FIf, source_name, lineno)
            continue
        if line == "else":
            owner = _enclosing_if(stack, source_name, lineno)
            stack.pop()
            stack.append(owner.else_body)
            continue

        m = _DO_RE.match(line)
        if m:
            var = m.group(1)
            parts = _split_top_commas(m.group(2))
            if len(parts) == 3:
                step = parts[2].strip()
                if step != "1":
                    raise RestrictionError(
                        f"non-unit do stride '{step}'",
                        span=(source_name, lineno, None))
            elif len(parts) != 2:
                raise ParseError("malformed do bounds",
                                 span=(source_name, lineno, None))
            lo = ex.parse_expr(parts[0], dialect="fortran")
            hi = ex.parse_expr(parts[1], dialect="fortran")
            node = FDo(var, lo, hi, [], lineno)
            stack[-1].append(node)
            stack.append(node.body)
            continue

        m = _IF_THEN_RE.match(line)
        if m:
            cond = ex.parse_expr(m.group(1), dialect="fortran")
            node = FIf(cond, [], [], lineno)
            stack[-1].append(node)
            stack.append(node.then_body)
            continue
        if word == "if":
            raise RestrictionError(
                "single-statement IF (use if/then/endif)",
                span=(source_name, lineno, None))

        eq = _top_level_eq(line)
        if eq < 0:
            raise ParseError(f"unrecognized statement: {line!r}",
                             span=(source_name, lineno, None))
        lhs = ex.parse_expr(line[:eq], dialect="fortran")
        rhs = ex.parse_expr(line[eq + 1:], dialect="fortran")
        if not isinstance(lhs, (ex.VarRef, ex.Call)):
            raise ParseError("assignment target must be scalar or "
                             "array element",
                             span=(source_name, lineno, None))
        stack[-1].append(FAssign(lhs, rhs, lineno,
                                 tags=frozenset(tag_stack)))

    if transform_lines is not None:
        raise ParseError("unterminated transform block",
                         span=(source_name, transform_start, None))
    if unit is None:
        raise ParseError("no subroutine found",
                         span=(source_name, None, None))
    if not done:
        raise ParseError(f"missing 'end' for subroutine {unit.name}",
                         span=(source_name, None, None))
    if tag_stack:
        raise ParseError(f"unterminated tagged region '{tag_stack[-1]}'",
                         span=(source_name, None, None))
    unit.transform_blocks = blocks
    return unit


def _strip_comment(raw):
    # fixed-form comment: c/C/* in column 1 followed by blank or nothing
    if raw[:1] == "*" or (raw[:1] in ("c", "C")
                          and (len(raw) == 1 or raw[1].isspace())):
        return ""
    # no string literals in the subset, so '!' always starts a comment
    return raw.split("!", 1)[0]


def _close_block(stack, kind, source_name, lineno):
    if len(stack) < 2:
        raise ParseError(f"unmatched end of {kind.__name__}",
                         span=(source_name, lineno, None))
    stack.pop()


def _enclosing_if(stack, source_name, lineno):
    # the list on top of the stack is some FIf's then_body
    def find(nodes):
        for node in nodes:
            if isinstance(node, FIf):
                if node.then_body is stack[-1]:
                    return node
                hit = find(node.then_body) or find(node.else_body)
                if hit:
                    return hit
            elif isinstance(node, FDo):
                hit = find(node.body)
                if hit:
                    return hit
        return None

    owner = find(stack[0])
    if owner is None:
        raise ParseError("'else' outside if block",
                         span=(source_name, lineno, None))
    return owner


def _split_top_commas(text):
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return parts


def _top_level_eq(line):
    depth = 0
    i = 0
    while i < len(line):
        ch = line[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "." and line[i:i + 4].lower() in (".ge.", ".le.",
                                                     ".gt.", ".lt.",
                                                     ".eq.", ".ne."):
            i += 4
            continue
        elif ch == "=" and depth == 0:
            return i
        i += 1
    return -1


def _parse_decl_entries(unit, text, dtype, span):
    for entry in _split_top_commas(text):
        entry = entry.strip()
        if not entry:
            continue
        m = re.match(r"^([a-z_][a-z0-9_]*)\s*(?:\((.*)\))?$", entry)
        if m is None:
            raise ParseError(f"malformed declaration entry {entry!r}",
                             span=span)
        name, dims_text = m.group(1), m.group(2)
        dims = ()
        if dims_text is not None:
            dims = tuple(ex.parse_expr(d, dialect="fortran")
                         for d in _split_top_commas(dims_text))
        if name in unit.decls:
            raise ParseError(f"duplicate declaration of '{name}'",
                             span=span)
        unit.decls[name] = (dtype, dims)

# }}}


# {{{ lowering

class _Lowerer:
    def __init__(self, unit):
        self.unit = unit
        self.domain_dims = []       # 0-based inames in order
        self.domain_constraints = []
        self.loop_repl = {}         # fortran var -> Expression
        self.active_inames = []
        self.predicates = []
        self.instructions = []
        self.prev_id = None
        self.cond_count = 0
        self.insn_count = 0
        self.temporaries = {}
        self.array_decls = {}       # name -> ArgDecl/TemporaryDecl info
        self.scalars_written = set()
        self.written = set()
        self.read = set()
        self.params = []
        self.iname_source = {}      # iname -> original loop var

        self.arg_arrays = {}
        self.arg_scalars = {}
        for name in unit.args:
            dtype, dims = unit.decls.get(name, (None, ()))
            if dtype is None:
                raise ParseError(
                    f"argument '{name}' of {unit.name} is undeclared")
            if dims:
                self.arg_arrays[name] = (dtype, dims)
            elif dtype == I32:
                # integer scalars act as size parameters
                self.params.append(name)
            else:
                self.arg_scalars[name] = dtype
        self.local_arrays = {}
        self.local_scalars = {}
        for name, (dtype, dims) in unit.decls.items():
            if name in unit.args:
                continue
            if dims:
                self.local_arrays[name] = (dtype, dims)
            else:
                self.local_scalars[name] = dtype

    def lower(self):
        self.walk(self.unit.body)
        return self.build_kernel()

    # {{{ statement walk

    def walk(self, nodes):
        for node in nodes:
            if isinstance(node, FDo):
                self.lower_do(node)
            elif isinstance(node, FIf):
                self.lower_if(node)
            elif isinstance(node, FAssign):
                self.lower_assign(node)
            else:
                raise AssertionError(node)

    def lower_do(self, node):
        if node.var not in self.unit.decls:
            logger.warning(
                "%s:%d: loop variable '%s' is undeclared; assuming "
                "integer", self.unit.source_name, node.line, node.var)
        iname = node.var
        existing = set(self.domain_dims) | set(self.params) \
            | set(self.arg_arrays) | set(self.arg_scalars) \
            | set(self.local_arrays) | set(self.temporaries)
        if iname in existing:
            k = 0
            while f"{node.var}_{k}" in existing:
                k += 1
            iname = f"{node.var}_{k}"
        lo_aff = self.affine_bound(node.lo, node)
        hi_aff = self.affine_bound(node.hi, node)
        self.domain_dims.append(iname)
        self.iname_source[iname] = node.var
        self.domain_constraints.append(
            Constraint(INEQ, AffineExpr({iname: 1})))
        self.domain_constraints.append(
            Constraint(INEQ, (hi_aff - lo_aff) - AffineExpr({iname: 1})))

        saved = self.loop_repl.get(node.var)
        use = ex.fold_index_expr(
            ex.BinOp("+", ex.VarRef(iname), _affine_expr_to_tree(lo_aff)))
        self.loop_repl[node.var] = use
        self.active_inames.append(iname)
        self.walk(node.body)
        self.active_inames.pop()
        if saved is None:
            del self.loop_repl[node.var]
        else:
            self.loop_repl[node.var] = saved

    def affine_bound(self, e, node):
        translated = self.translate(e, node.line)
        aff = ex.expression_to_affine(translated)
        if aff is None:
            raise ParseError(
                "do-loop bound is not affine in the parameters",
                span=(self.unit.source_name, node.line, None))
        bad = aff.variables - set(self.params) - set(self.domain_dims)
        if bad:
            raise ParseError(
                f"do-loop bound references {sorted(bad)}",
                span=(self.unit.source_name, node.line, None))
        return aff

    def lower_if(self, node):
        flag = f"loopy_cond{self.cond_count}"
        self.cond_count += 1
        self.temporaries[flag] = TemporaryDecl(name=flag, dtype=I32)
        cond = self.translate(node.cond, node.line)
        self.append_instruction(
            lhs=ex.VarRef(flag), rhs=cond, line=node.line,
            tags=frozenset())
        self.predicates.append((flag, False))
        self.walk(node.then_body)
        self.predicates.pop()
        if node.else_body:
            self.predicates.append((flag, True))
            self.walk(node.else_body)
            self.predicates.pop()

    def lower_assign(self, node):
        lhs = self.translate(node.lhs, node.line, is_store=True)
        rhs = self.translate(node.rhs, node.line)
        if isinstance(lhs, ex.VarRef):
            name = lhs.name
            self.scalars_written.add(name)
            if name not in self.local_scalars \
                    and name not in self.arg_scalars \
                    and name not in self.temporaries:
                if name in self.unit.decls or name in self.unit.args:
                    pass
                else:
                    logger.warning(
                        "%s:%d: undeclared scalar '%s' becomes a "
                        "temporary", self.unit.source_name, node.line,
                        name)
                    self.local_scalars[name] = None  # infer later
            if name in self.local_scalars \
                    and name not in self.temporaries:
                dtype = self.local_scalars[name]
                self.temporaries[name] = TemporaryDecl(
                    name=name, dtype=dtype if dtype else "?")
        self.written.add(lhs.array if isinstance(lhs, ex.Subscript)
                         else lhs.name)
        self.append_instruction(lhs=lhs, rhs=rhs, line=node.line,
                                tags=node.tags)

    def append_instruction(self, lhs, rhs, line, tags):
        iid = f"f_line{line}_{self.insn_count}"
        self.insn_count += 1
        deps = frozenset([self.prev_id] if self.prev_id else [])
        insn = Instruction(
            id=iid, lhs=lhs, rhs=rhs,
            within_inames=frozenset(self.active_inames),
            depends_on=deps, tags=frozenset(tags),
            predicates=frozenset(self.predicates))
        self.instructions.append(insn)
        self.prev_id = iid

    # }}}

    # {{{ expression translation

    def translate(self, e, line, is_store=False):
        span = (self.unit.source_name, line, None)
        if isinstance(e, ex.VarRef):
            if e.name in self.loop_repl:
                return self.loop_repl[e.name]
            self.read.add(e.name)
            return e
        if isinstance(e, ex.Call):
            name = e.function
            if name in self.arg_arrays or name in self.local_arrays:
                dims = (self.arg_arrays.get(name)
                        or self.local_arrays.get(name))[1]
                if len(e.args) != len(dims):
                    raise ParseError(
                        f"array '{name}' has rank {len(dims)}, "
                        f"subscripted with {len(e.args)} indices",
                        span=span)
                index = tuple(
                    ex.fold_index_expr(ex.BinOp(
                        "-", self.translate(a, line), ex.IntLit(1)))
                    for a in e.args)
                if not is_store:
                    self.read.add(name)
                return ex.Subscript(name, index)
            if name in ex.INTRINSICS:
                return ex.Call(name, tuple(self.translate(a, line)
                                           for a in e.args))
            raise ParseError(
                f"'{name}' is neither a declared array nor an intrinsic",
                span=span)
        ch = ex.children(e)
        if not ch:
            return e
        return ex.rebuild(e, [self.translate(c, line) for c in ch])

    # }}}

    # {{{ kernel assembly

    def build_kernel(self):
        if self.domain_dims:
            params = []
            for c in self.domain_constraints:
                for v in sorted(c.expr.variables):
                    if v not in self.domain_dims and v not in params:
                        params.append(v)
            node = BasicSet(self.domain_dims, params,
                            self.domain_constraints)
            domains = DomainTree((node,), (None,))
        else:
            domains = DomainTree()

        args = []
        for name in self.unit.args:
            if name in self.params:
                continue
            if name in self.arg_arrays:
                dtype, dims = self.arg_arrays[name]
                shape, strides = self.array_layout(name, dims)
                args.append(ArgDecl(
                    name=name, kind="global-array", dtype=dtype,
                    shape=shape, strides=strides,
                    is_output=name in self.written))
            else:
                args.append(ArgDecl(
                    name=name, kind="scalar-value",
                    dtype=self.arg_scalars[name],
                    is_output=name in self.written))

        temporaries = dict(self.temporaries)
        for name, (dtype, dims) in self.local_arrays.items():
            shape, strides = self.array_layout(name, dims)
            del strides  # temporaries are linearized from their shape
            temporaries[name] = TemporaryDecl(
                name=name, dtype=dtype, shape=shape,
                address_space="private")

        kernel = Kernel(
            name=self.unit.name, domains=domains,
            instructions=tuple(self.instructions),
            args=tuple(args), temporaries=temporaries)

        # dtype inference for undeclared scalars, in program order
        for insn in kernel.instructions:
            if isinstance(insn.lhs, ex.VarRef):
                name = insn.lhs.name
                t = kernel.temporaries.get(name)
                if t is not None and t.dtype == "?":
                    dtype = infer_expr_dtype(kernel, insn.rhs)
                    kernel = kernel.copy(temporaries={
                        **kernel.temporaries,
                        name: TemporaryDecl(name=name, dtype=dtype)})
        validate_kernel(kernel)
        return kernel

    def array_layout(self, name, dims):
        shape = []
        for d in dims:
            translated = self.translate(d, 0)
            aff = ex.expression_to_affine(translated)
            if aff is None:
                raise ParseError(
                    f"array bound of '{name}' is not affine in the "
                    "parameters")
            shape.append(aff)
        strides = [AffineExpr.const(1)]
        for extent in shape[:-1]:
            prev = strides[-1]
            if extent.is_constant():
                strides.append(prev * extent.constant)
            elif prev.is_constant():
                strides.append(extent * prev.constant)
            else:
                raise ParseError(
                    f"array '{name}': stride product is not affine")
        return tuple(shape), tuple(strides)

    # }}}


def _affine_expr_to_tree(aff):
    return ex.affine_to_expression(aff)


def lower_to_kernel(unit):
    """Translate a parsed subroutine into a validated kernel."""
    return _Lowerer(unit).lower()

# }}}


# {{{ transform script mini-language

@dataclass(frozen=True)
class ScriptStatement:
    target: str
    verb: str
    args: tuple
    kwargs: tuple    # ((key, value), ...)
    line: int


@dataclass(frozen=True)
class TransformScript:
    statements: tuple


_STMT_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(?:lp\.)?"
    r"([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)\s*$", re.S)


def parse_transform_script(text):
    statements = []
    pending = ""
    start_line = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped and not pending:
            continue
        if not pending:
            start_line = lineno
        pending += line + "\n"
        if pending.count("(") == pending.count(")"):
            if pending.strip():
                statements.append(_parse_script_statement(
                    pending.strip(), start_line))
            pending = ""
    if pending.strip():
        raise ParseError("unbalanced parentheses in transform script")
    return TransformScript(tuple(statements))


def _parse_script_statement(text, line):
    m = _STMT_RE.match(text)
    if m is None:
        raise ParseError(
            f"malformed transform statement: {text!r}",
            span=(None, line, None))
    target, verb, argtext = m.group(1), m.group(2), m.group(3)
    args, kwargs = _parse_script_args(argtext, line)
    return ScriptStatement(target, verb, tuple(args),
                           tuple(kwargs.items()), line)


def _parse_script_args(text, line):
    args = []
    kwargs = {}
    for part in _split_args(text):
        part = part.strip()
        if not part:
            continue
        kw = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.+)$", part, re.S)
        if kw and not part.lstrip().startswith(("'", '"')):
            kwargs[kw.group(1)] = _parse_script_value(kw.group(2), line)
        else:
            args.append(_parse_script_value(part, line))
    return args, kwargs


def _split_args(text):
    parts, depth, cur, quote = [], 0, "", None
    for ch in text:
        if quote:
            cur += ch
            if ch == quote:
                quote = None
            continue
        if ch in "'\"":
            quote = ch
            cur += ch
            continue
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur)
    return parts


def _parse_script_value(text, line):
    text = text.strip()
    if text == "None":
        return None
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    if (text.startswith('"') and text.endswith('"')) or \
            (text.startswith("'") and text.endswith("'")):
        return text[1:-1]
    if text.startswith("(") and text.endswith(")"):
        inner = text[1:-1].strip()
        if inner.endswith(","):
            inner = inner[:-1]
        return tuple(_parse_script_value(p, line)
                     for p in _split_args(inner))
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", text):
        return _KernelRef(text)
    raise ParseError(f"cannot parse transform argument {text!r}",
                     span=(None, line, None))


class _KernelRef:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return f"<kernel {self.name}>"


def run_transform_script(kernels, script):
    """Apply a transform script to named kernels, validating first."""
    if isinstance(script, str):
        script = parse_transform_script(script)
    kernels = dict(kernels)
    # whole-script validation before any transform runs
    known = set(kernels)
    for st in script.statements:
        if st.verb not in TRANSFORM_VERBS:
            raise TransformError(
                f"unknown transform '{st.verb}'", span=(None, st.line, None))
        if not st.args or not isinstance(st.args[0], _KernelRef):
            raise TransformError(
                f"transform '{st.verb}' needs a kernel as first argument",
                span=(None, st.line, None))
        if st.args[0].name not in known:
            raise TransformError(
                f"unknown kernel '{st.args[0].name}'",
                span=(None, st.line, None))
        for a in st.args[1:]:
            if isinstance(a, _KernelRef):
                raise TransformError(
                    f"unexpected identifier argument '{a.name}'",
                    span=(None, st.line, None))
        known.add(st.target)
    for st in script.statements:
        fn = TRANSFORM_VERBS[st.verb]
        src = kernels[st.args[0].name]
        args = list(st.args[1:])
        kwargs = dict(st.kwargs)
        try:
            kernels[st.target] = fn(src, *args, **kwargs)
        except TypeError as err:
            raise TransformError(
                f"bad arguments for '{st.verb}': {err}",
                span=(None, st.line, None)) from err
    return kernels


def translate_file_text(source, source_name="<fortran>",
                        extra_scripts=()):
    """Parse + lower + run embedded (then extra) transform scripts.

    Returns (raw_kernel, transformed_kernel, unit).
    """
    unit = parse_fortran(source, source_name)
    raw = lower_to_kernel(unit)
    kernels = {unit.name: raw}
    for text, _line in unit.transform_blocks:
        kernels = run_transform_script(kernels, text)
    for text in extra_scripts:
        kernels = run_transform_script(kernels, text)
    return raw, kernels[unit.name], unit

# }}}

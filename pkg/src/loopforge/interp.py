"""Reference interpreter: executes a kernel on concrete arrays.

Execution mirrors emitted C bit for bit: the same schedule, the same
loop bounds, and dtype-directed evaluation in which literals take the
width of the arithmetic node consuming them (so ``2*a`` on f32 data is
a float32 multiply, exactly like the rendered ``2.0f * a``).  Parallel
iname tags are scheduling metadata only; they execute as outer loops.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import InterpError
from .kernel import (F32, F64, I32, infer_expr_dtype, validate_kernel)
from .codegen import (Block, Conditional, Loop, Statement, loop_bounds,
                      parallel_inames_of, schedule)
from .transforms import expand_all_rules

NP_DTYPE = {F32: np.float32, F64: np.float64, I32: np.int32}
_DTYPE_CODE = {F32: 0, F64: 1, I32: 2}
_CODE_DTYPE = {v: k for k, v in _DTYPE_CODE.items()}


# {{{ storage

@dataclass
class FlatArray:
    dtype: str
    data: np.ndarray          # flat, element-strided
    shape: tuple
    strides: tuple

    def flat_index(self, idx):
        return sum(s * i for s, i in zip(self.strides, idx))

    def load(self, idx):
        return self.data[self.flat_index(idx)]

    def store(self, idx, value):
        self.data[self.flat_index(idx)] = value

    def to_logical(self):
        if not self.shape:
            return self.data[0]
        out = np.empty(self.shape, dtype=NP_DTYPE[self.dtype])
        for idx in np.ndindex(*self.shape):
            out[idx] = self.load(idx)
        return out

    def copy(self):
        return FlatArray(self.dtype, self.data.copy(), self.shape,
                         self.strides)


@dataclass
class ExecutionEnv:
    params: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)   # name -> FlatArray
    write_trace: list | None = None

    def copy(self):
        return ExecutionEnv(
            dict(self.params),
            {k: v.copy() for k, v in self.arrays.items()},
            None if self.write_trace is None else list(self.write_trace))


def _flat_size(shape, strides):
    if not shape:
        return 1
    return sum(s * (n - 1) for s, n in zip(strides, shape)) + 1


def make_env(kernel, params, inputs=None, seed=None, trace=False):
    """Bind parameters and arrays for a kernel run.

    *inputs* maps argument names to numpy arrays (logical shape) or
    scalars; unspecified arrays are zero-filled, or random when *seed*
    is given.  Assumptions are checked against the parameter values.
    """
    inputs = dict(inputs or {})
    params = {k: int(v) for k, v in params.items()}
    if not kernel.assumptions.satisfied_by(params):
        raise InterpError(
            f"parameter binding {params} violates the kernel assumptions")
    rng = np.random.default_rng(seed) if seed is not None else None
    arrays = {}
    for a in kernel.args:
        dtype = NP_DTYPE[a.dtype]
        if a.kind == "scalar-value":
            val = inputs.pop(a.name, 0)
            arrays[a.name] = FlatArray(
                a.dtype, np.array([val], dtype=dtype), (), ())
            continue
        shape = tuple(s.eval(params) for s in a.shape)
        strides = tuple(s.eval(params) for s in a.strides)
        if any(n <= 0 for n in shape):
            raise InterpError(
                f"array '{a.name}' has non-positive shape {shape}")
        flat = np.zeros(_flat_size(shape, strides), dtype=dtype)
        arr = FlatArray(a.dtype, flat, shape, strides)
        if a.name in inputs:
            src = np.asarray(inputs.pop(a.name), dtype=dtype)
            if src.shape != shape:
                raise InterpError(
                    f"array '{a.name}': expected shape {shape}, "
                    f"got {src.shape}")
            for idx in np.ndindex(*shape):
                arr.store(idx, src[idx])
        elif rng is not None and not a.is_output:
            vals = rng.random(shape) * 2 - 1 if a.dtype != I32 \
                else rng.integers(-10, 10, shape)
            for idx in np.ndindex(*shape):
                arr.store(idx, dtype(vals[idx]))
        arrays[a.name] = arr
    if inputs:
        raise InterpError(f"unknown input arrays: {sorted(inputs)}")
    return ExecutionEnv(params, arrays, [] if trace else None)

# }}}


# {{{ evaluation

class _Evaluator:
    def __init__(self, kernel, env, bounds_check):
        self.kernel = kernel
        self.env = env
        self.bounds_check = bounds_check
        self.bindings = {}
        self.written_temps = set()
        self.current_insn = None

    # dtype-directed evaluation; ctx gives literals their width
    def eval(self, e, ctx=None):
        if isinstance(e, ex.IntLit):
            return NP_DTYPE[ctx or I32](e.value)
        if isinstance(e, ex.FloatLit):
            return NP_DTYPE[ctx or F32](e.value)
        if isinstance(e, ex.VarRef):
            return self.load_name(e.name)
        if isinstance(e, ex.Subscript):
            idx = tuple(self.eval_index(i) for i in e.index)
            return self.load_array(e.array, idx)
        if isinstance(e, ex.Compare):
            left = self.eval(e.left)
            right = self.eval(e.right)
            result = {"<": left < right, "<=": left <= right,
                      ">": left > right, ">=": left >= right,
                      "==": left == right, "!=": left != right}[e.op]
            return np.int32(1 if result else 0)
        if isinstance(e, ex.UnOp):
            if e.op == "not":
                return np.int32(0 if self.eval(e.operand) else 1)
            return -self.eval(e.operand, ctx)
        if isinstance(e, ex.BinOp):
            return self.eval_binop(e)
        if isinstance(e, ex.Call):
            return self.eval_call(e)
        if isinstance(e, ex.Reduction):
            return self.eval_reduction(e)
        raise InterpError(f"cannot evaluate {e!r}")

    def eval_binop(self, e):
        dtype = infer_expr_dtype(self.kernel, e)
        ctx = dtype if dtype in (F32, F64) else None
        if e.op == "**":
            return self.eval_power(e, dtype, ctx)
        left = self.eval(e.left, ctx)
        right = self.eval(e.right, ctx)
        if e.op == "/" and ctx is not None:
            np_t = NP_DTYPE[dtype]
            left, right = np_t(left), np_t(right)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if e.op == "/":
            return left / right
        raise InterpError(f"unknown operator {e.op}")

    def eval_power(self, e, dtype, ctx):
        if isinstance(e.right, ex.IntLit) and 0 <= e.right.value <= 4:
            n = e.right.value
            if n == 0:
                return NP_DTYPE[dtype](1)
            base = self.eval(e.left, ctx)
            acc = base
            for _ in range(n - 1):
                acc = acc * base
            return acc
        base = self.eval(e.left, ctx)
        expo = self.eval(e.right, ctx)
        return base ** expo

    def eval_call(self, e):
        dtype = infer_expr_dtype(self.kernel, e)
        ctx = dtype if dtype in (F32, F64) else None
        args = [self.eval(a, ctx) for a in e.args]
        fn = e.function
        if fn == "sqrt":
            return np.sqrt(args[0])
        if fn == "sin":
            return np.sin(args[0])
        if fn == "cos":
            return np.cos(args[0])
        if fn == "exp":
            return np.exp(args[0])
        if fn == "abs":
            return np.abs(args[0])
        if fn == "min":
            return np.minimum(args[0], args[1])
        if fn == "max":
            return np.maximum(args[0], args[1])
        raise InterpError(f"unknown function '{fn}'")

    def eval_reduction(self, e):
        dtype = infer_expr_dtype(self.kernel, e.body)
        np_t = NP_DTYPE[dtype]
        lo, hi = self.loop_range(e.iname)
        acc = None
        for v in range(lo, hi + 1):
            self.bindings[e.iname] = v
            val = self.eval(e.body, dtype if dtype in (F32, F64) else None)
            if acc is None:
                if e.op == "sum":
                    acc = np_t(0) + val
                elif e.op == "product":
                    acc = np_t(1) * val
                else:
                    acc = val
            else:
                if e.op == "sum":
                    acc = acc + val
                elif e.op == "product":
                    acc = acc * val
                elif e.op == "min":
                    acc = np.minimum(acc, val)
                else:
                    acc = np.maximum(acc, val)
        del self.bindings[e.iname]
        if acc is None:
            if e.op == "sum":
                return np_t(0)
            if e.op == "product":
                return np_t(1)
            raise InterpError(
                f"empty {e.op} reduction over '{e.iname}'")
        return acc

    def eval_index(self, e):
        v = self.eval(e)
        return int(v)

    def load_name(self, name):
        if name in self.bindings:
            return np.int32(self.bindings[name])
        if name in self.env.params:
            return np.int32(self.env.params[name])
        arr = self.env.arrays.get(name)
        if arr is None:
            raise InterpError(f"unbound name '{name}'")
        if arr.shape:
            raise InterpError(f"array '{name}' read without subscript")
        if name in self.kernel.temporaries \
                and name not in self.written_temps:
            raise InterpError(
                f"read of never-written temporary '{name}'"
                + (f" in {self.current_insn}" if self.current_insn
                   else ""))
        return arr.data[0]

    def load_array(self, name, idx):
        arr = self.env.arrays.get(name)
        if arr is None:
            raise InterpError(f"unbound array '{name}'")
        self.check_bounds(name, arr, idx)
        if name in self.kernel.temporaries \
                and name not in self.written_temps:
            raise InterpError(
                f"read of never-written temporary '{name}'"
                + (f" in {self.current_insn}" if self.current_insn
                   else ""))
        return arr.load(idx)

    def check_bounds(self, name, arr, idx):
        is_temp = name in self.kernel.temporaries
        if is_temp and not self.bounds_check:
            # plain mode still rejects buffer overruns
            flat = arr.flat_index(idx)
            if not 0 <= flat < arr.data.size:
                raise InterpError(
                    f"out-of-bounds subscript {idx} of '{name}' in "
                    f"instruction {self.current_insn}")
            return
        for d, (i, n) in enumerate(zip(idx, arr.shape)):
            if not 0 <= i < n:
                raise InterpError(
                    f"out-of-bounds subscript {idx} of '{name}' "
                    f"(extent {arr.shape}) in instruction "
                    f"{self.current_insn}, dim {d}")

    def loop_range(self, iname):
        visible = list(self.bindings)
        lowers, uppers = loop_bounds(self.kernel, iname, visible)
        envd = {**self.env.params, **self.bindings}
        lo = max(b.eval(envd) for b in lowers)
        hi = min(b.eval(envd) for b in uppers)
        return lo, hi

# }}}


# {{{ interpretation

def interpret(kernel, env, bounds_check=False):
    """Run the kernel; returns a new env with outputs written."""
    validate_kernel(kernel)
    if kernel.rules:
        kernel = expand_all_rules(kernel)
    tree = schedule(kernel)
    env = env.copy()

    ev = _Evaluator(kernel, env, bounds_check)
    for t in kernel.temporaries.values():
        shape = tuple(s.eval(env.params) for s in t.shape)
        strides = _row_major(shape)
        env.arrays[t.name] = FlatArray(
            t.dtype, np.zeros(_flat_size(shape, strides),
                              dtype=NP_DTYPE[t.dtype]),
            shape, strides)

    imap = kernel.instruction_map()

    def run(node):
        if isinstance(node, Block):
            for c in node.children:
                run(c)
        elif isinstance(node, Loop):
            lo, hi = ev.loop_range(node.iname)
            for v in range(lo, hi + 1):
                ev.bindings[node.iname] = v
                for c in node.children:
                    run(c)
            ev.bindings.pop(node.iname, None)
        elif isinstance(node, Conditional):
            for flag, negated in sorted(node.predicates):
                val = ev.load_name(flag)
                if bool(val) == negated:
                    return
            for c in node.children:
                run(c)
        elif isinstance(node, Statement):
            execute(imap[node.insn_id])
        else:
            raise AssertionError(node)

    def execute(insn):
        ev.current_insn = insn.id
        value = ev.eval(insn.rhs)
        if isinstance(insn.lhs, ex.VarRef):
            name, idx = insn.lhs.name, ()
        else:
            name = insn.lhs.array
            idx = tuple(ev.eval_index(i) for i in insn.lhs.index)
        arr = env.arrays[name]
        if idx:
            ev.check_bounds(name, arr, idx)
            arr.store(idx, arr.data.dtype.type(value))
        else:
            arr.data[0] = arr.data.dtype.type(value)
        if name in kernel.temporaries:
            ev.written_temps.add(name)
        if env.write_trace is not None:
            env.write_trace.append((insn.id, name, idx))
        ev.current_insn = None

    # parallel inames execute as outermost loops, in global iname order
    parallel = parallel_inames_of(kernel)

    def run_parallel(remaining):
        if not remaining:
            run(tree)
            return
        iname = remaining[0]
        lo, hi = ev.loop_range(iname)
        for v in range(lo, hi + 1):
            ev.bindings[iname] = v
            run_parallel(remaining[1:])
        ev.bindings.pop(iname, None)

    run_parallel(parallel)
    return env


def interpret_bounds_checked(kernel, env):
    """As interpret, with every temporary access checked per dimension."""
    return interpret(kernel, env, bounds_check=True)


def _row_major(shape):
    if not shape:
        return ()
    strides = [1]
    for n in reversed(shape[1:]):
        strides.append(strides[-1] * n)
    return tuple(reversed(strides))


def get_output(env, name):
    """Logical-shape numpy view of an array in the env."""
    return env.arrays[name].to_logical()

# }}}


# {{{ binary array files

def write_array_file(path, array, dtype=None):
    """Little-endian flat binary with (dtype code, rank, shape) header."""
    arr = np.asarray(array)
    if dtype is None:
        dtype = {np.dtype(np.float32): F32, np.dtype(np.float64): F64,
                 np.dtype(np.int32): I32}.get(arr.dtype)
        if dtype is None:
            raise InterpError(f"unsupported dtype {arr.dtype}")
    arr = arr.astype(NP_DTYPE[dtype])
    with open(path, "wb") as f:
        f.write(struct.pack("<ii", _DTYPE_CODE[dtype], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
        f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes(order="C"))


def read_array_file(path):
    with open(path, "rb") as f:
        code, rank = struct.unpack("<ii", f.read(8))
        shape = struct.unpack(f"<{rank}i", f.read(4 * rank)) if rank \
            else ()
        dtype = NP_DTYPE[_CODE_DTYPE[code]]
        data = np.frombuffer(f.read(), dtype=np.dtype(dtype)
                             .newbyteorder("<")).astype(dtype)
    return data.reshape(shape)

# }}}

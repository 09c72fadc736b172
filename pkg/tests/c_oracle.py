"""Compile-and-execute harness for emitted C.

Builds a main() around the emitted kernel with all sizes resolved at
generation time, feeds it the exact flat buffers the interpreter uses,
and returns the output buffers for bitwise comparison.  Callers skip
when no C compiler is available.
"""

import shutil
import subprocess

import numpy as np

from loopforge.codegen import emit
from loopforge.interp import NP_DTYPE, _flat_size

_C_SCANF = {"f64": "double", "f32": "float", "i32": "int"}


def have_compiler():
    return shutil.which("cc") or shutil.which("gcc")


def compile_and_run(kernel, env, tmpdir):
    """Run the emitted C on the env's input buffers.

    Returns {name: flat numpy buffer} for every output argument.
    """
    cc = have_compiler()
    assert cc, "no C compiler"
    source = emit(kernel, "c")

    arrays = [a for a in kernel.args if a.kind == "global-array"]
    outputs = [a for a in arrays if a.is_output]

    lines = [
        "#include <stdio.h>",
        "#include <stdlib.h>",
        "#include <math.h>",
        "",
        source,
        "int main(void)",
        "{",
    ]
    for a in arrays:
        flat = env.arrays[a.name]
        ctype = _C_SCANF[a.dtype]
        lines.append(f"  static {ctype} {a.name}_buf[{flat.data.size}];")
    lines.append('  FILE *fin = fopen("input.bin", "rb");')
    lines.append("  if (!fin) return 2;")
    for a in arrays:
        flat = env.arrays[a.name]
        ctype = _C_SCANF[a.dtype]
        lines.append(
            f"  if (fread({a.name}_buf, sizeof({ctype}), "
            f"{flat.data.size}, fin) != {flat.data.size}) return 3;")
    lines.append("  fclose(fin);")

    call_args = []
    for a in kernel.args:
        if a.kind == "global-array":
            call_args.append(f"{a.name}_buf")
        else:
            val = env.arrays[a.name].data[0]
            if a.dtype == "i32":
                call_args.append(str(int(val)))
            else:
                suffix = "f" if a.dtype == "f32" else ""
                call_args.append(float(val).hex() + suffix)
    seen = {a.name for a in kernel.args}
    for p in sorted(kernel.param_names):
        if p not in seen:
            call_args.append(str(env.params[p]))
    lines.append(f"  {kernel.name}({', '.join(call_args)});")

    lines.append('  FILE *fout = fopen("output.bin", "wb");')
    lines.append("  if (!fout) return 4;")
    for a in outputs:
        flat = env.arrays[a.name]
        ctype = _C_SCANF[a.dtype]
        lines.append(
            f"  fwrite({a.name}_buf, sizeof({ctype}), "
            f"{flat.data.size}, fout);")
    lines.append("  fclose(fout);")
    lines.append("  return 0;")
    lines.append("}")

    main_c = tmpdir / "main.c"
    main_c.write_text("\n".join(lines))

    blob = b"".join(env.arrays[a.name].data.tobytes() for a in arrays)
    (tmpdir / "input.bin").write_bytes(blob)

    exe = tmpdir / "prog"
    subprocess.run(
        [cc, "-std=c99", "-O1", "-o", str(exe), str(main_c), "-lm"],
        check=True, cwd=tmpdir, capture_output=True)
    subprocess.run([str(exe)], check=True, cwd=tmpdir,
                   capture_output=True)

    raw = (tmpdir / "output.bin").read_bytes()
    result = {}
    offset = 0
    for a in outputs:
        flat = env.arrays[a.name]
        nbytes = flat.data.size * flat.data.dtype.itemsize
        result[a.name] = np.frombuffer(
            raw[offset:offset + nbytes],
            dtype=NP_DTYPE[a.dtype]).copy()
        offset += nbytes
    return result


def flat_outputs(kernel, env_after):
    return {a.name: env_after.arrays[a.name].data.copy()
            for a in kernel.args
            if a.kind == "global-array" and a.is_output}

import pytest

from loopforge import expr as ex
from loopforge.errors import ValidationError
from loopforge.kernel import (
    ArgDecl, Instruction, infer_dependencies, ir_dump, make_kernel,
    validate_kernel)
from loopforge.polyset import AffineExpr

GRAVITY_DOMAIN = "{[i,j,n,n2]: 0<=i,j<npart and 0<=n,n2<3}"
GRAVITY_BODY = """
grav_force(m, M, r) := -66.742*m*M/r**2

<> radc = sqrt(sum(n, (x[i,n]-center[n])**2))
<> rad_j = sqrt(sum(n2, (x[i,n2]-x[j,n2])**2))

force[i] = grav_force(mass[i], massc, radc) + \\
    sum(j, grav_force(mass[i], mass[j], rad_j))
"""


def gravity():
    return make_kernel([GRAVITY_DOMAIN], GRAVITY_BODY, name="gravity")


def test_make_kernel_double():
    knl = make_kernel(["{[i]: 0<=i<n}"], "out[i] = 2*a[i]")
    assert len(knl.instructions) == 1
    insn = knl.instructions[0]
    assert insn.within_inames == frozenset({"i"})
    assert insn.depends_on == frozenset()
    amap = knl.arg_map()
    assert amap["out"].is_output and not amap["a"].is_output
    assert amap["out"].shape == (AffineExpr.var("n"),)


def test_make_kernel_gravity():
    knl = gravity()
    assert set(knl.rules) == {"grav_force"}
    assert len(knl.instructions) == 3
    radc, rad_j, force = knl.instructions
    assert radc.within_inames == frozenset({"i"})
    assert rad_j.within_inames == frozenset({"i", "j"})
    assert force.within_inames == frozenset({"i"})
    assert force.depends_on == {radc.id, rad_j.id}
    amap = knl.arg_map()
    assert amap["x"].shape == (AffineExpr.var("npart"), AffineExpr.const(3))
    assert amap["x"].strides == (AffineExpr.const(3), AffineExpr.const(1))
    assert amap["massc"].kind == "scalar-value"
    assert set(knl.temporaries) == {"radc", "rad_j"}
    assert knl.temporaries["radc"].dtype == "f32"


def test_make_kernel_empty_body():
    knl = make_kernel(["{[i]: 0<=i<n}"], "")
    assert knl.instructions == ()
    validate_kernel(knl)


def test_infer_dependencies_no_edges():
    knl = make_kernel(["{[i]: 0<=i<n}"], "out[i] = a[i]\nout2[i] = b[i]")
    for insn in knl.instructions:
        assert insn.depends_on == frozenset()


def test_infer_dependencies_cycle_error():
    with pytest.raises(ValidationError, match="cycle"):
        make_kernel(["{[i]: 0<=i<4}"], "a[i] = b[i]\nb[i] = a[i]")


def test_self_reference_no_self_edge():
    knl = make_kernel(["{[i]: 0<=i<4}"], "c[i] = c[i] + 1")
    assert knl.instructions[0].depends_on == frozenset()


def test_infer_dependencies_monotone():
    knl = make_kernel(["{[i]: 0<=i<4}"], "t[i] = a[i]\nout[i] = t[i]")
    old_edges = {(i.id, d) for i in knl.instructions
                 for d in i.depends_on}
    extra = Instruction(
        id="extra", lhs=ex.parse_expr("q[i]"),
        rhs=ex.parse_expr("t[i] + out[i]"))
    grown = knl.copy(
        instructions=knl.instructions + (extra,),
        args=knl.args + (ArgDecl("q", "global-array", "f32",
                                 (AffineExpr.const(4),),
                                 (AffineExpr.const(1),), True),))
    grown = infer_dependencies(grown)
    new_edges = {(i.id, d) for i in grown.instructions
                 for d in i.depends_on}
    assert old_edges <= new_edges


def test_fresh_name():
    knl = gravity()
    assert knl.fresh_name("grav_force") == "grav_force_0"
    assert knl.fresh_name("unused") == "unused"
    knl2 = knl.copy(rules=dict(knl.rules))
    knl2.rules["u_acc"] = knl.rules["grav_force"]
    assert knl2.fresh_name("u_acc") == "u_acc_0"


def test_duplicate_rule_error():
    with pytest.raises(ValidationError, match="duplicate rule"):
        make_kernel(["{[i]: 0<=i<4}"], "f(x) := x\nf(y) := y\nout[i] = 1")


def test_undefined_rule_invocation():
    knl = gravity()
    bad = knl.instructions[0]
    bad = Instruction(bad.id, bad.lhs, ex.parse_expr("nosuch$t(i)"),
                      bad.within_inames, bad.depends_on)
    broken = knl.copy(instructions=(bad,) + knl.instructions[1:])
    with pytest.raises(ValidationError, match="nosuch"):
        validate_kernel(broken)


def test_validation_name_collision():
    knl = gravity()
    collide = knl.copy(args=knl.args + (
        ArgDecl("grav_force", "scalar-value", "f32"),))
    with pytest.raises(ValidationError, match="collision"):
        validate_kernel(collide)


def test_ir_dump_contents():
    dump = ir_dump(gravity())
    assert "kernel: gravity" in dump
    assert "grav_force(m, M, r) := -66.742*m*M/r**2" in dump
    assert "within=i,j" in dump
    assert "params: npart" in dump


def test_ir_dump_deterministic():
    assert ir_dump(gravity()) == ir_dump(gravity())

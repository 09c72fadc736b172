import random

import pytest

from loopforge.errors import NonAffineError, ParseError, ValidationError
from loopforge.polyset import (
    EQ, INEQ, AffineExpr, Assumptions, BasicSet, Constraint, DomainTree,
    parse_set, prune_redundant)


def ineq(coeffs, const=0):
    return Constraint(INEQ, AffineExpr(coeffs, const)).canonicalized()


# {{{ parsing

def test_parse_simple_range():
    s = parse_set("{[i]: 0<=i<n}")
    assert s.set_dims == ("i",)
    assert s.params == ("n",)
    assert set(s.constraints) == {
        ineq({"i": 1}),             # i >= 0
        ineq({"i": -1, "n": 1}, -1),  # n - i - 1 >= 0
    }


def test_parse_comma_bound_lists():
    s = parse_set("{[i,j,n,n2]: 0<=i,j<npart and 0<=n,n2<3}")
    assert s.set_dims == ("i", "j", "n", "n2")
    assert s.params == ("npart",)
    assert len(s.constraints) == 8
    assert all(c.kind == INEQ for c in s.constraints)


def test_parse_contradiction_is_empty():
    s = parse_set("{[i]: 0<=i<0}")
    assert s.is_empty()
    assert s.enumerate_points({}) == []


def test_parse_equality_and_chain():
    s = parse_set("{[i,j]: 0<=i<10 and i=j}")
    pts = s.enumerate_points({})
    assert pts == [(k, k) for k in range(10)]


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_set("{[i] 0<=i<n}")
    with pytest.raises(ParseError):
        parse_set("{[i]: 0<=i<n")
    with pytest.raises(NonAffineError):
        parse_set("{[i,j]: 0<=i*j<n}")


def test_render_parse_fixpoint():
    for text in ("{[i]: 0<=i<n}",
                 "{[i,j,n,n2]: 0<=i,j<npart and 0<=n,n2<3}",
                 "{[i,j]: 0<=i<n and i<=j<n}"):
        s = parse_set(text)
        once = parse_set(s.render())
        assert once == s
        assert parse_set(once.render()) == once

# }}}


# {{{ split_dim

def test_split_dim_constraints():
    s = parse_set("{[i]: 0<=i<n}")
    sp = s.split_dim("i", 16, "i_outer", "i_inner")
    assert sp.set_dims == ("i_outer", "i_inner")
    expected = parse_set(
        "{[i_outer,i_inner]: 0<=16*i_outer+i_inner<n and 0<=i_inner<16}")
    assert sp == expected


def test_split_dim_factor_equals_extent():
    s = parse_set("{[i]: 0<=i<16}")
    sp = s.split_dim("i", 16, "o", "ii")
    lowers, uppers = sp.bounds_for("o", [])
    assert [b.eval({}) for b in lowers] == [0]
    assert [b.eval({}) for b in uppers] == [0]


def test_split_dim_bijection_37_points():
    s = parse_set("{[i]: 0<=i<37}")
    sp = s.split_dim("i", 8, "o", "ii")
    pts = sp.enumerate_points({})
    assert len(pts) == 37
    mapped = sorted(8 * o + ii for (o, ii) in pts)
    assert mapped == list(range(37))


def test_split_dim_errors():
    s = parse_set("{[i]: 0<=i<n}")
    with pytest.raises(ValidationError):
        s.split_dim("q", 4, "o", "ii")
    with pytest.raises(ValidationError):
        s.split_dim("i", 4, "n", "ii")

# }}}


# {{{ project_out

def test_project_inner_of_split():
    s = parse_set("{[i]: 0<=i<n}").split_dim("i", 16, "i_outer", "i_inner")
    p = s.project_out("i_inner")
    assert p.set_dims == ("i_outer",)
    # hand-derived FM result: i_outer >= 0 (tightened), 16*i_outer <= n-1
    want_lo = ineq({"i_outer": 1})
    want_up = ineq({"i_outer": -16, "n": 1}, -1)
    assert want_lo in p.constraints
    assert want_up in p.constraints
    for n in range(1, 65):
        got = sorted(v for (v,) in p.enumerate_points({"n": n}))
        want = sorted({i // 16 for i in range(n)})
        assert got == want, n


def test_project_only_dim_gives_param_condition():
    s = parse_set("{[i]: 0<=i<n}")
    p = s.project_out("i")
    assert p.set_dims == ()
    assert p.constraints == (ineq({"n": 1}, -1),)  # n >= 1


def test_project_triangle():
    s = parse_set("{[i,j]: 0<=i<n and i<=j<n}")
    p = s.project_out("j")
    for n in range(1, 9):
        got = sorted(v for (v,) in p.enumerate_points({"n": n}))
        want = sorted({i for (i, j) in s.enumerate_points({"n": n})})
        assert got == want

# }}}


# {{{ bounds_for

def split16():
    return parse_set("{[i]: 0<=i<n}").split_dim("i", 16, "i_outer", "i_inner")


def test_bounds_outer_no_assumptions():
    lowers, uppers = split16().bounds_for("i_outer", [])
    assert len(lowers) == 1 and len(uppers) == 1
    lo, up = lowers[0], uppers[0]
    assert lo.is_plain_affine() and lo.as_affine() == AffineExpr.const(0)
    # paper rendering: int_floor_div_pos_b(15 + n, 16) - 1
    assert up.divisor == 16
    assert up.numerator == AffineExpr({"n": 1}, 15)
    assert up.offset == -1
    assert not up.exact


def test_bounds_outer_with_divisibility():
    asm = Assumptions.empty().with_divisibility(AffineExpr.var("n"), 16)
    lowers, uppers = split16().bounds_for("i_outer", [], asm)
    up = uppers[0]
    assert up.exact and up.divisor == 16
    assert up.numerator == AffineExpr.var("n")
    assert up.offset == -1
    for n in (16, 32, 48):
        pts = split16().enumerate_points({"n": n})
        outs = [o for (o, ii) in pts]
        assert up.eval({"n": n}) == max(outs)
        assert lowers[0].eval({"n": n}) == min(outs)


def test_bounds_plain_range():
    s = parse_set("{[i]: 0<=i<n}")
    lowers, uppers = s.bounds_for("i", [])
    assert lowers[0].as_affine() == AffineExpr.const(0)
    assert uppers[0].as_affine() == AffineExpr({"n": 1}, -1)


def test_bounds_inner_given_outer():
    asm = Assumptions.empty().with_divisibility(AffineExpr.var("n"), 16)
    lowers, uppers = split16().bounds_for("i_inner", ["i_outer"], asm)
    # divisibility proves n-1-16*i_outer-i_inner >= 0 redundant
    assert len(lowers) == 1 and len(uppers) == 1
    assert uppers[0].as_affine() == AffineExpr.const(15)


def test_bounds_unbounded_error():
    s = parse_set("{[i]: 0<=i}")
    with pytest.raises(ValidationError, match="i"):
        s.bounds_for("i", [])

# }}}


# {{{ enumerate_points

def test_enumerate_simple():
    s = parse_set("{[i]: 0<=i<n}")
    assert s.enumerate_points({"n": 3}) == [(0,), (1,), (2,)]


def test_enumerate_split_32():
    pts = split16().enumerate_points({"n": 32})
    assert len(pts) == 32
    assert {o for (o, ii) in pts} == {0, 1}
    assert {ii for (o, ii) in pts} == set(range(16))


def test_enumerate_unbounded_error():
    s = parse_set("{[i]: 0<=i}")
    with pytest.raises(ValidationError):
        s.enumerate_points({})

# }}}


# {{{ randomized properties

def random_basic_set(rng):
    ndims = rng.randint(1, 3)
    dims = [f"x{k}" for k in range(ndims)]
    constraints = []
    for d in dims:
        lo = rng.randint(-5, 5)
        extent = rng.randint(1, 12)
        constraints.append(ineq({d: 1}, -lo))
        constraints.append(ineq({d: -1}, lo + extent - 1))
    # sprinkle a relation between two dims now and then
    if ndims >= 2 and rng.random() < 0.5:
        a, b = rng.sample(dims, 2)
        constraints.append(ineq({a: 1, b: -1}, rng.randint(0, 6)))
    return BasicSet(dims, [], constraints)


def test_property_split_is_bijection():
    rng = random.Random(2024)
    checked = 0
    for _ in range(250):
        s = random_basic_set(rng)
        if s.is_empty():
            continue
        iname = rng.choice(s.set_dims)
        factor = rng.choice([2, 3, 8, 16])
        sp = s.split_dim(iname, factor, "sp_o", "sp_i")
        orig = s.enumerate_points({})
        new = sp.enumerate_points({})
        pos = s.set_dims.index(iname)

        def rebuild(pt):
            vals = dict(zip(sp.set_dims, pt))
            merged = []
            for d in s.set_dims:
                if d == iname:
                    merged.append(factor * vals["sp_o"] + vals["sp_i"])
                else:
                    merged.append(vals[d])
            return tuple(merged)

        assert sorted(rebuild(pt) for pt in new) == sorted(orig)
        assert len(new) == len(set(new))
        checked += 1
    assert checked > 150


def test_property_bounds_tight_on_enumeration():
    rng = random.Random(77)
    for _ in range(250):
        s = random_basic_set(rng)
        pts = s.enumerate_points({})
        if not pts:
            continue
        iname = s.set_dims[-1]
        fixed = list(s.set_dims[:-1])
        lowers, uppers = s.bounds_for(iname, fixed)
        groups = {}
        for pt in pts:
            groups.setdefault(pt[:-1], []).append(pt[-1])
        for prefix, vals in groups.items():
            env = dict(zip(fixed, prefix))
            lo = max(b.eval(env) for b in lowers)
            up = min(b.eval(env) for b in uppers)
            assert lo == min(vals)
            assert up == max(vals)

# }}}


def test_prune_redundant_keeps_one_duplicate():
    c1 = ineq({"i": 1})
    c2 = ineq({"i": 1})
    kept = prune_redundant([c1, c2])
    assert kept == [c2]


def test_domain_tree_invariants():
    root = parse_set("{[i]: 0<=i<n}")
    child = BasicSet(["j"], ["i"],
                     [ineq({"j": 1}), ineq({"j": -1, "i": 1})])
    tree = DomainTree((root,), (None,)).with_node_added(child, 0)
    assert tree.all_dims == ("i", "j")
    assert tree.all_params == ("n",)
    assert tree.node_index_of("j") == 1
    with pytest.raises(ValidationError):
        DomainTree((root, child), (None, None))  # j's node references i
    dup = parse_set("{[i]: 0<=i<4}")
    with pytest.raises(ValidationError):
        DomainTree((root, dup), (None, None))

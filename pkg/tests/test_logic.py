import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinoltl.logic import (
    ALWAYS,
    AND,
    EVENTUALLY,
    NOT,
    OR,
    PRED,
    Formula,
    FormulaSyntaxError,
    Predicate,
    RobustnessState,
    UnknownRegionError,
    capped,
    init_robustness,
    parse_formula,
    pointwise_robustness,
    predicate_robustness,
    subformulas,
    tltl_edge_cost,
    to_nnf,
    trace_robustness,
    update_robustness,
)

T1 = Predicate("T1", (1.0, 1.0), (0.5, 0.5))
T2 = Predicate("T2", (3.0, 1.0), (0.5, 0.5))
O1 = Predicate("O1", (2.0, 2.0), (0.4, 0.8))
REGIONS = {"T1": T1, "T2": T2, "O1": O1}


def monitor(f, trace, rho_max=1.0):
    """Incremental evaluation, one state at a time."""
    trace = np.asarray(trace, float)
    rs = init_robustness(f, trace[0], rho_max)
    for x in trace[1:]:
        rs = update_robustness(f, rs, x[None, :], rho_max)
    return rs


class TestPredicate:
    def test_inside_positive_at_center(self):
        assert predicate_robustness(T1, [1.0, 1.0]) == pytest.approx(0.5)

    def test_zero_on_boundary(self):
        assert predicate_robustness(T1, [1.5, 1.2]) == pytest.approx(0.0, abs=1e-15)

    def test_negative_outside(self):
        assert predicate_robustness(T1, [2.5, 1.0]) == pytest.approx(-1.0)

    def test_outside_kind_is_negation(self):
        x = np.array([1.3, 0.8])
        assert predicate_robustness(T1.negated(), x) == -predicate_robustness(T1, x)

    def test_non_cubic_box_scales_axes(self):
        # long axis is compressed to the short halfwidth
        assert predicate_robustness(O1, [2.0, 2.8]) == pytest.approx(0.0, abs=1e-15)
        assert predicate_robustness(O1, [2.0, 2.4]) == pytest.approx(0.2)
        assert predicate_robustness(O1, [2.2, 2.0]) == pytest.approx(0.2)

    def test_vectorised_matches_scalar(self):
        X = np.random.default_rng(0).uniform(0, 4, (20, 2))
        np.testing.assert_allclose(T1.evaluate(X), [predicate_robustness(T1, x) for x in X])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="2-D"):
            T1.evaluate(np.zeros(3))

    @pytest.mark.parametrize("kw", [dict(halfwidths=(0.0, 1.0)), dict(center=(0.0,)), dict(kind="near")])
    def test_invalid(self, kw):
        args = dict(name="X", center=(0.0, 0.0), halfwidths=(1.0, 1.0)) | kw
        with pytest.raises(ValueError):
            Predicate(**args)


class TestParser:
    def test_example_shape(self):
        f = parse_formula("F in(T1) & G !in(O1)", REGIONS)
        assert f.kind == AND
        assert f.children[0].kind == EVENTUALLY
        assert f.children[1].kind == ALWAYS
        assert f.children[1].children[0].predicate.kind == "outside"

    def test_unknown_region(self):
        with pytest.raises(UnknownRegionError, match="T9"):
            parse_formula("F in(T9)", REGIONS)

    @pytest.mark.parametrize("text", ["F (in(T1)", "in(T1) &", "", "in T1", "F in(T1) in(T2)", "in(T1) $"])
    def test_syntax_errors(self, text):
        with pytest.raises(FormulaSyntaxError) as exc:
            parse_formula(text, REGIONS)
        assert exc.value.position >= 0

    def test_precedence(self):
        f = parse_formula("in(T1) | in(T2) & in(O1)", REGIONS, nnf=False)
        assert f.kind == OR and f.children[1].kind == AND
        g = parse_formula("F in(T1) & in(T2)", REGIONS, nnf=False)
        assert g.kind == AND and g.children[0].kind == EVENTUALLY

    @pytest.mark.parametrize("text", [
        "F in(T1) & F (in(T2) | in(O1)) & G (!in(O1) & !in(T2))",
        "G F in(T1) & F in(T2)",
        "true",
        "!(F in(T1) | G in(T2))",
        "(in(T1) | in(T2)) & in(O1)",
    ])
    def test_str_round_trip(self, text):
        f = parse_formula(text, REGIONS, nnf=False)
        assert parse_formula(str(f), REGIONS, nnf=False) == f

    def test_shared_subformula_compiles(self):
        a = Formula.atom(T1).eventually()
        f = a & a
        rs = init_robustness(f, [0.0, 0.0])
        assert len(rs.values) == f.size == len(subformulas(f))
        rs = update_robustness(f, rs, np.array([[1.0, 1.0]]))
        assert rs.root == pytest.approx(0.5)

    def test_size_and_depth(self):
        f = parse_formula("F in(T1) & G !in(O1)", REGIONS)
        assert f.size == 5
        assert f.depth == 3
        assert [g.kind for g in subformulas(f)] == [PRED, EVENTUALLY, PRED, ALWAYS, AND]


class TestNNF:
    def test_negations_only_on_true(self):
        f = parse_formula("!(F in(T1) & !G (in(T2) | !in(O1)))", REGIONS)
        assert all(g.kind != NOT or g.children[0].kind == "true" for g in subformulas(f))

    def test_duals(self):
        f = parse_formula("!F in(T1)", REGIONS)
        assert f.kind == ALWAYS and f.children[0].predicate.kind == "outside"
        g = parse_formula("!(in(T1) | in(T2))", REGIONS)
        assert g.kind == AND

    def test_negated_true_survives(self):
        f = parse_formula("!true", REGIONS)
        assert f.kind == NOT and pointwise_robustness(f, [0, 0], 2.0) == -2.0

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(3)
        texts = ["!(F in(T1) & G in(T2))", "!G (in(T1) | !F in(O1))", "!(!in(T1) | F !in(T2))",
                 "G !(in(T1) & F in(O1))"]
        for text in texts:
            raw = parse_formula(text, REGIONS, nnf=False)
            nnf = to_nnf(raw)
            for _ in range(50):
                tr = rng.uniform(0, 4, (rng.integers(1, 8), 2))
                assert trace_robustness(nnf, tr, 3.0) == pytest.approx(trace_robustness(raw, tr, 3.0), abs=1e-12)


class TestMonitor:
    def test_init_is_pointwise(self):
        f = parse_formula("F in(T1) & G !in(O1)", REGIONS)
        x0 = np.array([0.2, 0.3])
        rs = init_robustness(f, x0)
        assert rs.root == pytest.approx(pointwise_robustness(f, x0))

    def test_eventually_takes_segment_max(self):
        f = Formula.atom(T1).eventually()
        parent = RobustnessState((-0.2, -0.2))
        seg = np.array([[0.0, 1.0], [0.8, 1.0], [3.0, 3.0]])   # peaks at 0.3 in the middle
        rs = update_robustness(f, parent, seg)
        assert rs.values[1] == pytest.approx(0.3)
        assert rs.values[0] == pytest.approx(predicate_robustness(T1, seg[-1]))

    def test_always_takes_segment_min(self):
        f = Formula.atom(T1).always()
        rs = update_robustness(f, RobustnessState((0.5, 0.5)), np.array([[1.0, 1.0], [1.4, 1.0]]))
        assert rs.root == pytest.approx(0.1)

    def test_empty_segment(self):
        f = Formula.atom(T1).eventually()
        with pytest.raises(ValueError, match="empty segment"):
            update_robustness(f, init_robustness(f, [0, 0]), np.zeros((0, 2)))

    def test_slot_count_mismatch(self):
        f = Formula.atom(T1).eventually()
        with pytest.raises(ValueError, match="formula"):
            update_robustness(f, RobustnessState((0.0,)), np.zeros((1, 2)))

    def test_segment_split_invariant(self):
        f = parse_formula("F in(T1) & F in(T2) & G !in(O1)", REGIONS)
        tr = np.random.default_rng(1).uniform(0, 4, (30, 2))
        whole = update_robustness(f, init_robustness(f, tr[0]), tr[1:])
        mid = update_robustness(f, init_robustness(f, tr[0]), tr[1:12])
        split = update_robustness(f, mid, tr[12:])
        assert whole == split

    def test_eventually_monotone_along_path(self):
        f = parse_formula("F in(T1) & G !in(O1)", REGIONS)
        tr = np.random.default_rng(2).uniform(0, 4, (40, 2))
        rs = init_robustness(f, tr[0])
        ev = [rs.values[1]]
        al = [rs.values[3]]
        for x in tr[1:]:
            rs = update_robustness(f, rs, x[None])
            ev.append(rs.values[1])
            al.append(rs.values[3])
        assert np.all(np.diff(ev) >= 0) and np.all(np.diff(al) <= 0)

    def test_nested_temporal_reduces_pointwise(self):
        f = Formula.atom(T1).eventually().always()
        tr = np.array([[1.0, 1.0], [3.0, 3.0], [1.0, 1.0]])
        assert monitor(f, tr).root == pytest.approx(trace_robustness(Formula.atom(T1).always(), tr))


class TestEdgeCost:
    @pytest.mark.parametrize("p, c, expected", [(-0.5, -0.1, -0.4), (0.0, 0.0, 0.0), (-0.3, -0.3, 0.0),
                                                (-0.2, 0.7, -0.2), (0.4, 0.9, 0.0)])
    def test_values(self, p, c, expected):
        f = Formula.true()
        assert tltl_edge_cost(f, RobustnessState((p,)), RobustnessState((c,))) == pytest.approx(expected)

    def test_capped(self):
        assert capped(0.3) == 0.0 and capped(-0.3) == -0.3

    def test_path_sum_telescopes(self):
        f = parse_formula("F in(T1) & F in(T2)", REGIONS)
        tr = np.random.default_rng(4).uniform(0, 4, (25, 2))
        states = [init_robustness(f, tr[0])]
        for x in tr[1:]:
            states.append(update_robustness(f, states[-1], x[None]))
        total = sum(tltl_edge_cost(f, a, b) for a, b in zip(states[:-1], states[1:]))
        assert total == pytest.approx(capped(states[0].root) - capped(states[-1].root), abs=1e-12)


# -- randomized equivalence against the recursive oracle ---------------------

_PREDS = [T1, T2, O1, T1.negated(), O1.negated()]


def _formulas(depth):
    leaf = st.one_of(st.sampled_from(_PREDS).map(Formula.atom), st.just(Formula.true()))
    if depth == 0:
        return leaf
    sub = _formulas(depth - 1)
    return st.one_of(
        leaf,
        st.tuples(sub, sub).map(lambda ab: ab[0] & ab[1]),
        st.tuples(sub, sub).map(lambda ab: ab[0] | ab[1]),
        sub.map(Formula.eventually),
        sub.map(Formula.always),
        sub.map(lambda g: ~g),
    )


_coords = st.floats(-1.0, 5.0, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(f=_formulas(3), trace=st.lists(st.tuples(_coords, _coords), min_size=1, max_size=12),
       cut=st.integers(1, 11))
def test_incremental_matches_batch(f, trace, cut):
    tr = np.array(trace)
    nnf = to_nnf(f)
    rs = init_robustness(nnf, tr[0], 2.0)
    if len(tr) > 1:
        k = min(cut, len(tr) - 1)
        rs = update_robustness(nnf, rs, tr[1:k + 1], 2.0)
        if k + 1 < len(tr):
            rs = update_robustness(nnf, rs, tr[k + 1:], 2.0)
    assert rs.root == pytest.approx(trace_robustness(f, tr, 2.0), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(f=_formulas(2), g=_formulas(2), trace=st.lists(st.tuples(_coords, _coords), min_size=1, max_size=8))
def test_lattice_laws(f, g, trace):
    tr = np.array(trace)
    a, b = trace_robustness(f, tr, 2.0), trace_robustness(g, tr, 2.0)
    assert trace_robustness(f & g, tr, 2.0) == min(a, b)
    assert trace_robustness(f | g, tr, 2.0) == max(a, b)
    assert trace_robustness(~(f & g), tr, 2.0) == pytest.approx(trace_robustness(~f | ~g, tr, 2.0))
    assert trace_robustness(~f.eventually(), tr, 2.0) == pytest.approx(
        trace_robustness((~f).always(), tr, 2.0))


def test_all_predicate_sign_patterns():
    # every combination of inside/outside for two predicates on one point
    for k1, k2 in itertools.product(["inside", "outside"], repeat=2):
        p = Predicate("A", (0.0, 0.0), (1.0, 1.0), k1)
        q = Predicate("B", (0.5, 0.0), (1.0, 1.0), k2)
        f = Formula.atom(p) & Formula.atom(q)
        x = np.array([0.2, 0.1])
        assert monitor(f, x[None]).root == min(p.evaluate(x), q.evaluate(x))

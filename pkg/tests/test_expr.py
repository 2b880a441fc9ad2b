import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optswitch import expr as ex


# ---------------------------------------------------------------------------
# Parsing


def test_parse_eval_basic():
    e = ex.parse("x1 - 5", 1)
    assert ex.evaluate(e, 0.0, [7.0]) == 2.0


def test_parse_max_exp():
    e = ex.parse("max(x1, 0) * exp(-t)", 1)
    assert ex.evaluate(e, 0.0, [-3.0]) == 0.0


def test_unknown_variable_out_of_range():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("x2 + 1", 1)


def test_unknown_identifier_and_function():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("y + 1", 1)
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("sin(x1)", 1)


def test_arity_mismatch():
    with pytest.raises(ex.ArityError):
        ex.parse("min(x1)", 1)
    with pytest.raises(ex.ArityError):
        ex.parse("exp(x1, 2)", 1)


def test_syntax_error_carries_position():
    with pytest.raises(ex.ExprSyntaxError) as err:
        ex.parse("1 + * 2", 1)
    assert err.value.position == 4


def test_scientific_literals():
    assert ex.evaluate(ex.parse("1e-3", 1), 0.0, [0.0]) == 1e-3
    assert ex.evaluate(ex.parse("2.5E+2", 1), 0.0, [0.0]) == 250.0


def test_precedence_and_associativity():
    # unary minus binds tighter than * and /
    assert ex.evaluate(ex.parse("-x1 * 3", 1), 0.0, [2.0]) == -6.0
    # left associativity
    assert ex.evaluate(ex.parse("2 - 3 - 4", 1), 0.0, [0.0]) == -5.0
    assert ex.evaluate(ex.parse("12 / 3 / 2", 1), 0.0, [0.0]) == 2.0
    assert ex.evaluate(ex.parse("2 * 3 + 4 * 5", 1), 0.0, [0.0]) == 26.0


def test_eval_examples():
    assert ex.evaluate(ex.parse("2*t + x1", 1), 0.5, [1.0]) == 2.0
    assert ex.evaluate(ex.parse("pow(x1, 2)", 1), 0.0, [-3.0]) == 9.0


# ---------------------------------------------------------------------------
# Domain checks


def test_log_domain_violation():
    e = ex.parse("log(x1)", 1)
    with pytest.raises(ex.ExprDomainError) as err:
        ex.evaluate(e, 0.0, [0.0])
    assert "log(x1)" in str(err.value)


def test_division_by_zero():
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("1 / x1", 1), 0.0, [0.0])


def test_sqrt_negative():
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("sqrt(x1)", 1), 0.0, [-1.0])


def test_pow_domain():
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("pow(x1, 0.5)", 1), 0.0, [-2.0])
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("pow(0, x1)", 1), 0.0, [-1.0])


def test_overflow_is_an_error_not_inf():
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("exp(x1)", 1), 0.0, [1000.0])


def test_vectorised_domain_error():
    e = ex.parse("log(x1)", 1)
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate_many(e, 0.0, [np.array([1.0, 2.0, -1.0])])


# ---------------------------------------------------------------------------
# Hypothesis: AST generator


_branch = st.deferred(lambda: st.one_of(
    st.builds(ex.Num, st.floats(min_value=0.0, max_value=100.0,
                                allow_nan=False, allow_infinity=False)),
    st.builds(ex.Var, st.integers(min_value=-1, max_value=1)),
    st.builds(ex.Neg, _branch),
    st.builds(lambda op, a, b: ex.Binary(op, a, b),
              st.sampled_from("+-*/"), _branch, _branch),
    st.builds(lambda f, a: ex.Call(f, (a,)), st.sampled_from(["exp", "log", "sqrt", "abs"]),
              _branch),
    st.builds(lambda f, a, b: ex.Call(f, (a, b)), st.sampled_from(["min", "max", "pow"]),
              _branch, _branch),
))


@given(_branch)
@settings(max_examples=300, deadline=None)
def test_print_parse_round_trip(tree):
    text = ex.to_source(tree)
    assert ex.parse(text, 2) == tree
    # fixed point of print . parse
    assert ex.to_source(ex.parse(text, 2)) == text


@given(st.text(alphabet="x123te+-*/(), .minaxpowqrlgb", max_size=40))
@settings(max_examples=500, deadline=None)
def test_parser_is_total(text):
    try:
        ex.parse(text, 2)
    except ex.ExprError:
        pass  # positioned failure is the contract; anything else is a crash


@given(_branch,
       st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
       st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
       st.floats(min_value=-3.0, max_value=3.0, allow_nan=False))
@settings(max_examples=300, deadline=None)
def test_vectorised_matches_reference_to_zero_ulp(tree, t, x1, x2):
    try:
        ref = ex.evaluate(tree, t, [x1, x2])
    except ex.ExprDomainError:
        with pytest.raises(ex.ExprDomainError):
            ex.evaluate_many(tree, np.array([t]), [np.array([x1]), np.array([x2])])
        return
    out = ex.evaluate_many(tree, np.array([t, t]), [np.array([x1, x1]), np.array([x2, x2])])
    assert out[0] == ref and out[1] == ref  # bitwise


def _libm_walk(tree, t, x):
    """Tree walk over libm scalars, mirroring the stack machine's domain
    checks; the VM must match this bitwise (both use libm)."""
    if isinstance(tree, ex.Num):
        out = tree.value
    elif isinstance(tree, ex.Var):
        out = t if tree.index < 0 else x[tree.index]
    elif isinstance(tree, ex.Neg):
        out = -_libm_walk(tree.operand, t, x)
    elif isinstance(tree, ex.Binary):
        a = _libm_walk(tree.left, t, x)
        b = _libm_walk(tree.right, t, x)
        if tree.op == "/" and b == 0.0:
            raise ex.ExprDomainError(ex.to_source(tree), "division by zero")
        out = {"+": a + b, "-": a - b, "*": a * b,
               "/": a / b if b != 0.0 else 0.0}[tree.op]
    else:
        a = _libm_walk(tree.args[0], t, x)
        if tree.func == "exp":
            if a > 709.782712893384:
                raise ex.ExprDomainError(ex.to_source(tree), "overflow")
            out = math.exp(a)
        elif tree.func == "log":
            if a <= 0.0:
                raise ex.ExprDomainError(ex.to_source(tree), "log domain")
            out = math.log(a)
        elif tree.func == "sqrt":
            if a < 0.0:
                raise ex.ExprDomainError(ex.to_source(tree), "sqrt domain")
            out = math.sqrt(a)
        elif tree.func == "abs":
            out = abs(a)
        else:
            b = _libm_walk(tree.args[1], t, x)
            if tree.func == "min":
                out = b if b < a else a
            elif tree.func == "max":
                out = b if b > a else a
            else:
                if a < 0.0 and b != math.trunc(b):
                    raise ex.ExprDomainError(ex.to_source(tree), "pow domain")
                if a == 0.0 and b < 0.0:
                    raise ex.ExprDomainError(ex.to_source(tree), "pow domain")
                try:
                    out = a ** b
                except OverflowError:
                    raise ex.ExprDomainError(ex.to_source(tree), "overflow") from None
    if not math.isfinite(out):
        raise ex.ExprDomainError(ex.to_source(tree), "overflow")
    return out


@given(_branch,
       st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
       st.floats(min_value=-3.0, max_value=3.0, allow_nan=False))
@settings(max_examples=300, deadline=None)
def test_stack_machine_matches_reference(tree, t, x1):
    packed = ex.pack_programs([tree])
    try:
        ref = _libm_walk(tree, t, [x1, 0.5])
    except ex.ExprDomainError:
        val, err_op = ex.run_program(packed, 0, t, [x1, 0.5])
        assert err_op >= 0
        return
    val, err_op = ex.run_program(packed, 0, t, [x1, 0.5])
    assert err_op == -1
    assert val == ref  # bitwise: same libm functions in the same order
    if _arithmetic_only(tree):
        # arithmetic programs also agree bitwise with the numpy reference
        assert val == ex.evaluate(tree, t, [x1, 0.5])


def _arithmetic_only(tree) -> bool:
    if isinstance(tree, (ex.Num, ex.Var)):
        return True
    if isinstance(tree, ex.Neg):
        return _arithmetic_only(tree.operand)
    if isinstance(tree, ex.Binary):
        return _arithmetic_only(tree.left) and _arithmetic_only(tree.right)
    if isinstance(tree, ex.Call):
        return tree.func in ("min", "max", "abs") and all(
            _arithmetic_only(a) for a in tree.args)
    return False


# ---------------------------------------------------------------------------
# Compiled programs


def test_pack_programs_offsets():
    a = ex.parse("x1 + 1", 2)
    b = ex.parse("2 * x2", 2)
    packed = ex.pack_programs([a, b])
    va, ea = ex.run_program(packed, 0, 0.0, [3.0, 5.0])
    vb, eb = ex.run_program(packed, 1, 0.0, [3.0, 5.0])
    assert (va, ea) == (4.0, -1)
    assert (vb, eb) == (10.0, -1)


def test_program_fragments_name_subexpressions():
    packed = ex.pack_programs([ex.parse("1 + log(x1)", 1)])
    val, err_op = ex.run_program(packed, 0, 0.0, [-1.0])
    assert err_op >= 0
    assert packed.fragment(0, err_op) == "log(x1)"


def test_deterministic_evaluation():
    e = ex.parse("exp(x1) * max(t, x1) - 0.25 / (x1 + 2)", 1)
    v1 = ex.evaluate(e, 0.3, [0.7])
    v2 = ex.evaluate(e, 0.3, [0.7])
    assert v1 == v2

import pytest

from pplalign.errors import DesugarError, SyntaxErrorPpl
from pplalign.syntax import (
    SCall, SFunc, SIf, SProgram, SVar, parse_and_desugar, parse_program,
)
from pplalign.terms import (
    K_APP, K_IF, K_LAM, K_SAMPLE, K_WEIGHT,
    App, Const, Lam, Var, alpha_equal, iter_subterms, pretty,
)
from pplalign.runtime import Bernoulli

from helpers import model_source


def test_let_desugars_to_application():
    core = parse_and_desugar("x = 1\nx")
    want = App(Lam("x", Var("x")), Const(1.0))
    assert alpha_equal(core, want)


def test_flip_desugars_to_bernoulli_half():
    core = parse_and_desugar("flip()")
    assert core.kind == K_SAMPLE
    dist = core.arg
    assert dist.kind == Const.kind
    assert isinstance(dist.value, Bernoulli)
    assert dist.value.p == 0.5


def test_literal_distribution_folds_to_a_constant():
    core = parse_and_desugar("sample(normal(0.0, 2.0))")
    assert core.arg.kind == Const.kind
    # a sampled parameter keeps the constructor application
    core2 = parse_and_desugar("r = sample(gamma(1.0, 1.0))\n"
                              "sample(exponential(r))")
    assert core2.fn.body.arg.kind == K_APP
    # invalid literal parameters stay runtime errors
    from pplalign.errors import RuntimeErrorPpl
    from pplalign.runtime import Evaluator, RngStream
    bad = parse_and_desugar("sample(bernoulli(1.5))")
    assert bad.arg.kind == K_APP
    with pytest.raises(RuntimeErrorPpl):
        Evaluator().run(bad, RngStream(0))


def test_fig1_parses_with_if_on_flip():
    ast = parse_program(model_source("fig1_toy.ppl"))
    assert isinstance(ast, SProgram)
    if_stmt = ast.stmts[1]
    assert isinstance(if_stmt, SIf)
    assert isinstance(if_stmt.cond, SCall)
    assert if_stmt.cond.callee.name == "flip"


def test_fig1_first_statement_is_weight_five():
    core = parse_and_desugar(model_source("fig1_toy.ppl"))
    # top level is sequencing: (lam _. if ...) (weight 5)
    assert core.kind == K_APP and core.fn.kind == K_LAM
    assert core.arg.kind == K_WEIGHT
    assert core.arg.arg.value == 5.0
    assert core.fn.body.kind == K_IF


def test_fig7_defines_recursive_sim():
    ast = parse_program(model_source("fig7_sim.ppl"))
    fn = ast.stmts[0]
    assert isinstance(fn, SFunc)
    assert fn.name == "sim" and fn.params == ["stop", "lambda"]
    # recursive use inside the body
    names = set()

    def walk(node):
        if isinstance(node, SVar):
            names.add(node.name)
        for c in node.children():
            walk(c)

    walk(fn.body)
    assert "sim" in names


def test_fig7_desugars_with_fix():
    core = parse_and_desugar(model_source("fig7_sim.ppl"))
    from pplalign.terms import K_FIX
    kinds = [n.kind for n in iter_subterms(core)]
    assert K_FIX in kinds


def test_parse_error_reports_position():
    with pytest.raises(SyntaxErrorPpl) as exc:
        parse_program("if then")
    assert exc.value.line == 1 and exc.value.col == 4
    assert "expression" in str(exc.value)


def test_empty_input_is_an_error():
    with pytest.raises(SyntaxErrorPpl):
        parse_program("")
    with pytest.raises(SyntaxErrorPpl):
        parse_program("   \n # only a comment\n")


def test_unbound_variable_is_a_desugar_error():
    with pytest.raises(DesugarError) as exc:
        parse_and_desugar("x + 1")
    assert "unbound" in str(exc.value)


def test_builtin_cannot_be_a_value():
    with pytest.raises(DesugarError):
        parse_and_desugar("x = normal\nx")


def test_block_must_end_with_expression():
    with pytest.raises(DesugarError):
        parse_and_desugar("x = 1")


def test_spans_nest():
    ast = parse_program(model_source("fig7_sim.ppl"))

    def at_or_after(child, parent):
        return (child.span[0], child.span[1]) >= (parent.span[0],
                                                  parent.span[1])

    def walk(node):
        for c in node.children():
            assert c.span is not None
            assert at_or_after(c, node), (node.span, c.span)
            walk(c)

    assert ast.span is not None
    walk(ast)


def test_operator_precedence():
    core = parse_and_desugar("1 + 2 * 3 <= 10 - 4")
    # (<= (+ 1 (* 2 3)) (- 10 4))
    assert pretty(core) == "1.0 + 2.0 * 3.0 <= 10.0 - 4.0"
    from pplalign.runtime import Evaluator, RngStream
    out = Evaluator().run(core, RngStream(0))
    assert out.value is False  # 7 <= 6


def test_unary_minus():
    from pplalign.runtime import Evaluator, RngStream
    core = parse_and_desugar("-2.5 * 2")
    out = Evaluator().run(core, RngStream(0))
    assert out.value == -5.0


def test_division_and_unit_call():
    core = parse_and_desugar("function f() { 6.0 / 2.0 }\nf()")
    from pplalign.runtime import Evaluator, RngStream
    assert Evaluator().run(core, RngStream(0)).value == 3.0


def test_multi_argument_call_curries():
    core = parse_and_desugar("function f(a, b) { a - b }\nf(10, 4)")
    from pplalign.runtime import Evaluator, RngStream
    assert Evaluator().run(core, RngStream(0)).value == 6.0


def test_dist_constructor_arity_checked():
    with pytest.raises(DesugarError):
        parse_and_desugar("sample(normal(1.0))")


@pytest.mark.parametrize("name", ["fig1_toy.ppl", "fig7_sim.ppl",
                                  "ssm_lgss.ppl", "plus_ctx.ppl",
                                  "crbd_pitheciidae_28.ppl"])
def test_pretty_print_round_trips(name):
    core = parse_and_desugar(model_source(name))
    again = parse_and_desugar(pretty(core))
    assert alpha_equal(core, again)


def test_round_trip_core_escape_forms():
    src = "(lam x. x)(fix(lam f. lam n. if n <= 0.0 then 0.0 else f(n - 1.0))(3.0))"
    core = parse_and_desugar(src)
    again = parse_and_desugar(pretty(core))
    assert alpha_equal(core, again)
    from pplalign.runtime import Evaluator, RngStream
    assert Evaluator().run(core, RngStream(0)).value == 0.0


def test_desugared_output_is_core_only():
    core = parse_and_desugar(model_source("fig7_sim.ppl"))
    from pplalign.terms import (
        K_VAR, K_CONST, K_LAM, K_APP, K_FIX, K_IF, K_SAMPLE, K_WEIGHT,
    )
    allowed = {K_VAR, K_CONST, K_LAM, K_APP, K_FIX, K_IF, K_SAMPLE, K_WEIGHT}
    assert all(n.kind in allowed for n in iter_subterms(core))


def test_comments_are_ignored():
    core = parse_and_desugar("# header\n1.0 # trailing\n")
    assert core.value == 1.0


def test_desugared_fix_always_wraps_a_lambda():
    for name in ["fig7_sim.ppl", "plus_ctx.ppl", "crbd_pitheciidae_28.ppl"]:
        core = parse_and_desugar(model_source(name))
        from pplalign.terms import K_FIX
        for node in iter_subterms(core):
            if node.kind == K_FIX:
                assert node.arg.kind == K_LAM

"""Independent oracles and shared fixtures for the test suite.

Everything here is deliberately written as the dumbest correct thing:
exhaustive Kleene iteration for the constraint solver, literal-substitution
evaluation for the small-step semantics, a scalar Kalman filter for the
linear-Gaussian model, and a forward birth-death simulator.  None of it
shares code with the implementation under test.
"""

import math
from importlib import resources

from pplalign.cfa import Direct, Flow, Solution
from pplalign.errors import RuntimeErrorPpl
from pplalign.runtime import Bernoulli, Dist, PartialOp, apply_builtin
from pplalign.terms import (
    K_APP, K_CONST, K_DWEIGHT, K_FIX, K_IF, K_LAM, K_SAMPLE, K_VAR, K_WEIGHT,
    UNIT, App, Builtin, Const, Dweight, Fix, If, Lam, Sample, Var, Weight,
)

MODEL_NAMES = ["fig1_toy.ppl", "fig7_sim.ppl", "ssm_lgss.ppl",
               "plus_ctx.ppl", "crbd_pitheciidae_28.ppl"]


def model_source(name):
    return (resources.files("pplalign") / "models" / name).read_text()


def tree_source(name="pitheciidae_28.nwk"):
    return (resources.files("pplalign") / "data" / name).read_text()


# ---------------------------------------------------------------------------
# Naive constraint solver: rescan every constraint until nothing changes.

def kleene_solve(constraints, universe):
    data = {v: set() for v in universe}
    changed = True
    while changed:
        changed = False
        for c in constraints:
            if type(c) is Direct:
                if c.av not in data[c.target]:
                    data[c.target].add(c.av)
                    changed = True
            elif type(c) is Flow:
                if not data[c.src] <= data[c.dst]:
                    data[c.dst] |= data[c.src]
                    changed = True
            else:
                if c.av in data[c.guard] and not data[c.src] <= data[c.dst]:
                    data[c.dst] |= data[c.src]
                    changed = True
    return Solution(data, universe)


# ---------------------------------------------------------------------------
# Literal-substitution evaluator for the core small-step semantics.
# Values are terms: constants (with runtime objects inside) and lambdas.

def _subst(name, value_term, t):
    k = t.kind
    if k == K_VAR:
        return value_term if t.name == name else t
    if k == K_CONST:
        return t
    if k == K_LAM:
        if t.param == name:
            return t
        return Lam(t.param, _subst(name, value_term, t.body))
    if k == K_APP:
        return App(_subst(name, value_term, t.fn),
                   _subst(name, value_term, t.arg))
    if k == K_FIX:
        return Fix(_subst(name, value_term, t.arg))
    if k == K_IF:
        return If(_subst(name, value_term, t.cond),
                  _subst(name, value_term, t.then),
                  _subst(name, value_term, t.orelse))
    if k == K_SAMPLE:
        return Sample(_subst(name, value_term, t.arg))
    if k == K_WEIGHT:
        return Weight(_subst(name, value_term, t.arg))
    if k == K_DWEIGHT:
        return Dweight(_subst(name, value_term, t.arg))
    raise AssertionError(k)


def subst_eval(t, rng, w=0.0):
    """Call-by-value evaluation by literal substitution.

    Returns (value, w) where value is a Python constant for ground results
    or a Lam term for functional results.
    """
    k = t.kind
    if k == K_CONST:
        return t.value, w
    if k == K_LAM:
        return t, w
    if k == K_VAR:
        raise RuntimeErrorPpl(f"unbound variable '{t.name}'")
    if k == K_APP:
        f, w = subst_eval(t.fn, rng, w)
        a, w = subst_eval(t.arg, rng, w)
        return _apply_value(f, a, rng, w)
    if k == K_FIX:
        arg = t.arg
        if arg.kind != K_LAM:
            f, w = subst_eval(arg, rng, w)
            if not isinstance(f, Lam):
                raise RuntimeErrorPpl("fix of a non-lambda")
            arg = f
        unfolded = _subst(arg.param, Fix(arg), arg.body)
        return subst_eval(unfolded, rng, w)
    if k == K_IF:
        c, w = subst_eval(t.cond, rng, w)
        if c is True:
            return subst_eval(t.then, rng, w)
        if c is False:
            return subst_eval(t.orelse, rng, w)
        raise RuntimeErrorPpl(f"non-boolean condition {c!r}")
    if k == K_SAMPLE:
        d, w = subst_eval(t.arg, rng, w)
        if not isinstance(d, Dist):
            raise RuntimeErrorPpl(f"sample of non-distribution {d!r}")
        return d.draw(rng), w
    if k == K_WEIGHT or k == K_DWEIGHT:
        c, w = subst_eval(t.arg, rng, w)
        if not isinstance(c, float):
            raise RuntimeErrorPpl(f"weight of non-real {c!r}")
        return UNIT, w + c
    raise AssertionError(k)


def _apply_value(f, a, rng, w):
    if isinstance(f, Lam):
        arg_term = a if isinstance(a, Lam) else Const(a)
        return subst_eval(_subst(f.param, arg_term, f.body), rng, w)
    if isinstance(f, Builtin):
        if f.arity == 1:
            return apply_builtin(f, (a,)), w
        return PartialOp(f, (a,)), w
    if isinstance(f, PartialOp):
        args = f.args + (a,)
        if len(args) == f.op.arity:
            return apply_builtin(f.op, args), w
        return PartialOp(f.op, args), w
    raise RuntimeErrorPpl(f"cannot apply {f!r}")


# ---------------------------------------------------------------------------
# Scalar Kalman filter for the bundled linear-Gaussian state space model.

def kalman_ssm(ys=(2.1, 6.3, 10.7), prior_mean=0.0, prior_var=4.0,
               shift=4.0, trans_var=1.0, obs_var=1.0):
    """Exact filtering: predictive (mean, var) of the next state and the
    log marginal likelihood of the observations."""
    m, v = prior_mean, prior_var
    log_marginal = 0.0
    for y in ys:
        s = v + obs_var
        log_marginal += -0.5 * math.log(2.0 * math.pi * s) \
            - (y - m) ** 2 / (2.0 * s)
        gain = v / s
        m = m + gain * (y - m)
        v = v * (1.0 - gain)
        m += shift
        v += trans_var
    return m, v, log_marginal


# ---------------------------------------------------------------------------
# Forward simulation of the birth-death process.

def forward_bd_extinct(age, birth, death, rng, cap=5000):
    """True if a single lineage alive at `age` leaves no extant descendant."""
    lineages = [age]
    total = birth + death
    while lineages:
        if len(lineages) > cap:
            return False
        t = lineages.pop()
        while True:
            t -= -math.log(1.0 - rng.random()) / total
            if t <= 0.0:
                return False
            if rng.random() < birth / total:
                lineages.append(t)
            else:
                break
    return True


def forward_yule_two_leaves(age, birth, rng):
    """True if two root lineages at `age` reach the present without
    branching (i.e. the reconstructed tree keeps exactly two leaves)."""
    for _ in range(2):
        wait = -math.log(1.0 - rng.random()) / birth
        if wait < age:
            return False
    return True


# ---------------------------------------------------------------------------
# Worked-example core terms (labels follow the hand-worked numbering when
# combined with postorder_label_map).

def example_branch_flow():
    """(lam x. if sample dist then (x c1) else c2) (lam y. y)"""
    return App(
        Lam("x", If(Sample(Const(Bernoulli(0.5))),
                    App(Var("x"), Const(1.0)),
                    Const(2.0))),
        Lam("y", Var("y")))


def example_reverse_flow():
    """(lam a. (lam b. a b) (lam c. c)) (lam d. if sample dist then (d c1) else c2)"""
    return App(
        Lam("a", App(Lam("b", App(Var("a"), Var("b"))), Lam("c", Var("c")))),
        Lam("d", If(Sample(Const(Bernoulli(0.5))),
                    App(Var("d"), Const(1.0)),
                    Const(2.0))))

"""Core calculus terms.

The term language is a labeled untyped lambda calculus with `fix`, `if`,
`sample` and `weight`, plus the two resampling-aware weight forms that only
appear after the CPS rewrite (`WeightCps`, `DweightCps`).  Every node carries
an optional integer label (used by the static analysis) and an optional
source span ``(line, col, end_line, end_col)``.

Constants are ordinary Python values: bool, float, the unit singleton,
builtin operators (:class:`Builtin`) and distribution objects (constructed
at runtime by applying a distribution builtin).
"""

import sys
from contextlib import contextmanager

# Node kind tags; the evaluator dispatches on these.
K_VAR = 0
K_CONST = 1
K_LAM = 2
K_APP = 3
K_FIX = 4
K_IF = 5
K_SAMPLE = 6
K_WEIGHT = 7
K_DWEIGHT = 8
K_WEIGHT_CPS = 9
K_DWEIGHT_CPS = 10


class Unit:
    """The unit value ()."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "()"


UNIT = Unit()


class Builtin:
    """A builtin operator constant.

    ``kind`` is "arith" for arithmetic/comparison operators (these propagate
    stochasticness through their applications in the analysis) or "dist" for
    distribution constructors (these do not).
    """

    __slots__ = ("name", "arity", "kind")

    def __init__(self, name, arity, kind):
        self.name = name
        self.arity = arity
        self.kind = kind

    def __repr__(self):
        return f"<builtin {self.name}>"


ADD = Builtin("+", 2, "arith")
SUB = Builtin("-", 2, "arith")
MUL = Builtin("*", 2, "arith")
DIV = Builtin("/", 2, "arith")
LE = Builtin("<=", 2, "arith")
LT = Builtin("<", 2, "arith")
EXP = Builtin("exp", 1, "arith")
LOG = Builtin("log", 1, "arith")
NORMAL = Builtin("normal", 2, "dist")
GAMMA = Builtin("gamma", 2, "dist")
EXPONENTIAL = Builtin("exponential", 1, "dist")
BERNOULLI = Builtin("bernoulli", 1, "dist")

BUILTINS = {
    b.name: b
    for b in (ADD, SUB, MUL, DIV, LE, LT, EXP, LOG,
              NORMAL, GAMMA, EXPONENTIAL, BERNOULLI)
}
INFIX_OPS = {"+", "-", "*", "/", "<=", "<"}


class Term:
    """Base class for core/CPS terms."""

    __slots__ = ("label", "span", "pure", "pyfn", "step", "prepared")
    kind = -1

    def __init__(self, label=None, span=None):
        self.label = label
        self.span = span
        # Filled in by runtime.prepare(); see that module.
        self.pure = False
        self.pyfn = None
        self.step = None
        self.prepared = False

    def children(self):
        return ()


class Var(Term):
    __slots__ = ("name",)
    kind = K_VAR

    def __init__(self, name, label=None, span=None):
        super().__init__(label, span)
        self.name = name


class Const(Term):
    __slots__ = ("value",)
    kind = K_CONST

    def __init__(self, value, label=None, span=None):
        super().__init__(label, span)
        self.value = value


class Lam(Term):
    __slots__ = ("param", "body", "fv")
    kind = K_LAM

    def __init__(self, param, body, label=None, span=None):
        super().__init__(label, span)
        self.param = param
        self.body = body
        self.fv = None  # free-variable tuple, filled by runtime.prepare()

    def children(self):
        return (self.body,)


class App(Term):
    __slots__ = ("fn", "arg")
    kind = K_APP

    def __init__(self, fn, arg, label=None, span=None):
        super().__init__(label, span)
        self.fn = fn
        self.arg = arg

    def children(self):
        return (self.fn, self.arg)


class Fix(Term):
    __slots__ = ("arg",)
    kind = K_FIX

    def __init__(self, arg, label=None, span=None):
        super().__init__(label, span)
        self.arg = arg

    def children(self):
        return (self.arg,)


class If(Term):
    __slots__ = ("cond", "then", "orelse")
    kind = K_IF

    def __init__(self, cond, then, orelse, label=None, span=None):
        super().__init__(label, span)
        self.cond = cond
        self.then = then
        self.orelse = orelse

    def children(self):
        return (self.cond, self.then, self.orelse)


class Sample(Term):
    __slots__ = ("arg",)
    kind = K_SAMPLE

    def __init__(self, arg, label=None, span=None):
        super().__init__(label, span)
        self.arg = arg

    def children(self):
        return (self.arg,)


class Weight(Term):
    __slots__ = ("arg", "origin")
    kind = K_WEIGHT

    def __init__(self, arg, label=None, span=None, origin=None):
        super().__init__(label, span)
        self.arg = arg
        self.origin = origin

    def children(self):
        return (self.arg,)


class Dweight(Term):
    """A weight call rewritten to never trigger resampling."""

    __slots__ = ("arg", "origin")
    kind = K_DWEIGHT

    def __init__(self, arg, label=None, span=None, origin=None):
        super().__init__(label, span)
        self.arg = arg
        self.origin = origin

    def children(self):
        return (self.arg,)


class WeightCps(Term):
    """CPS weight: takes its continuation explicitly; pauses evaluation."""

    __slots__ = ("cont", "arg", "origin")
    kind = K_WEIGHT_CPS

    def __init__(self, cont, arg, origin=None, span=None):
        super().__init__(None, span)
        self.cont = cont
        self.arg = arg
        self.origin = origin  # label of the weight in the analyzed program

    def children(self):
        return (self.cont, self.arg)


class DweightCps(Term):
    """CPS dweight: updates the weight and continues without pausing."""

    __slots__ = ("cont", "arg", "origin")
    kind = K_DWEIGHT_CPS

    def __init__(self, cont, arg, origin=None, span=None):
        super().__init__(None, span)
        self.cont = cont
        self.arg = arg
        self.origin = origin

    def children(self):
        return (self.cont, self.arg)


@contextmanager
def deep_recursion(limit=100000):
    """Temporarily raise the recursion limit for deep-term traversals."""
    old = sys.getrecursionlimit()
    if old < limit:
        sys.setrecursionlimit(limit)
    try:
        yield
    finally:
        sys.setrecursionlimit(old)


def iter_subterms(t):
    """Yield every subterm of t, parent before children, left to right."""
    stack = [t]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


def subterm_count(t):
    return sum(1 for _ in iter_subterms(t))


def free_vars(t, bound=()):
    """Free variable names of t, given names already bound."""
    out = set()
    _free_vars(t, set(bound), out)
    return out


def _free_vars(t, bound, out):
    k = t.kind
    if k == K_VAR:
        if t.name not in bound:
            out.add(t.name)
    elif k == K_LAM:
        inner = bound | {t.param}
        _free_vars(t.body, inner, out)
    else:
        for c in t.children():
            _free_vars(c, bound, out)


def alpha_equal(a, b):
    """Structural equality up to renaming of bound variables.

    Labels, spans and weight origins are ignored; constants compare by
    value identity semantics (floats by ==, builtins by object).
    """
    return _alpha(a, b, {}, {})


def _alpha(a, b, env_a, env_b):
    if a.kind != b.kind:
        return False
    k = a.kind
    if k == K_VAR:
        return env_a.get(a.name, a.name) == env_b.get(b.name, b.name)
    if k == K_CONST:
        va, vb = a.value, b.value
        if isinstance(va, bool) or isinstance(vb, bool):
            return va is vb
        if isinstance(va, float) and isinstance(vb, float):
            return va == vb or (va != va and vb != vb)
        return va is vb or va == vb
    if k == K_LAM:
        fresh = f"#{len(env_a)}"
        ea = dict(env_a)
        eb = dict(env_b)
        ea[a.param] = fresh
        eb[b.param] = fresh
        return _alpha(a.body, b.body, ea, eb)
    ca, cb = a.children(), b.children()
    if len(ca) != len(cb):
        return False
    return all(_alpha(x, y, env_a, env_b) for x, y in zip(ca, cb))


# ---------------------------------------------------------------------------
# Pretty printing (canonical concrete syntax; re-parseable for core terms)

_PREC_CMP = 1
_PREC_ADD = 2
_PREC_MUL = 3
_PREC_ATOM = 9

_OP_PREC = {"<=": _PREC_CMP, "<": _PREC_CMP,
            "+": _PREC_ADD, "-": _PREC_ADD,
            "*": _PREC_MUL, "/": _PREC_MUL}


def _const_str(v):
    if v is True:
        return "true"
    if v is False:
        return "false"
    if v is UNIT:
        return "()"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Builtin):
        return v.name
    # Distribution constants print as their constructor call, which parses
    # back to the same folded constant.
    return str(v)


def _spine(t):
    """Split an application chain into (head, [args])."""
    args = []
    while t.kind == K_APP:
        args.append(t.arg)
        t = t.fn
    args.reverse()
    return t, args


def pretty(t, indent=0):
    """Render a term in the canonical concrete syntax.

    Let-chains (applications of a literal lambda) print one binding per
    line; everything else prints as an expression.
    """
    with deep_recursion():
        return _stmts(t, indent)


def _stmts(t, indent):
    pad = "  " * indent
    lines = []
    while True:
        if t.kind == K_APP and t.fn.kind == K_LAM:
            binder = t.fn.param
            rhs = _expr(t.arg, 0, indent)
            if binder in free_vars(t.fn.body):
                lines.append(f"{pad}{binder} = {rhs}")
            else:
                lines.append(f"{pad}{rhs}")
            t = t.fn.body
        else:
            lines.append(pad + _expr(t, 0, indent))
            return "\n".join(lines)


def _block(t, indent):
    inner = _stmts(t, indent + 1)
    pad = "  " * indent
    return "{\n" + inner + "\n" + pad + "}"


def _needs_block(t):
    return t.kind == K_APP and t.fn.kind == K_LAM


def _branch(t, indent):
    if _needs_block(t):
        return _block(t, indent)
    return _expr(t, 0, indent)


def _expr(t, prec, indent):
    k = t.kind
    if k == K_VAR:
        return t.name
    if k == K_CONST:
        return _const_str(t.value)
    if k == K_LAM:
        s = f"lam {t.param}. {_expr(t.body, 0, indent)}"
        return f"({s})" if prec > 0 else s
    if k == K_IF:
        s = (f"if {_expr(t.cond, 0, indent)} "
             f"then {_branch(t.then, indent)} "
             f"else {_branch(t.orelse, indent)}")
        return f"({s})" if prec > 0 else s
    if k == K_SAMPLE:
        return f"sample({_expr(t.arg, 0, indent)})"
    if k == K_WEIGHT:
        return f"weight({_expr(t.arg, 0, indent)})"
    if k == K_DWEIGHT:
        return f"dweight({_expr(t.arg, 0, indent)})"
    if k == K_FIX:
        return f"fix({_expr(t.arg, 0, indent)})"
    if k == K_WEIGHT_CPS:
        return (f"weight({_expr(t.cont, 0, indent)}, "
                f"{_expr(t.arg, 0, indent)})")
    if k == K_DWEIGHT_CPS:
        return (f"dweight({_expr(t.cont, 0, indent)}, "
                f"{_expr(t.arg, 0, indent)})")
    if k == K_APP:
        head, args = _spine(t)
        if head.kind == K_CONST and isinstance(head.value, Builtin):
            op = head.value
            if op.name in INFIX_OPS and len(args) == 2:
                p = _OP_PREC[op.name]
                left = _expr(args[0], p, indent)
                right = _expr(args[1], p + 1, indent)
                s = f"{left} {op.name} {right}"
                return f"({s})" if prec > p else s
            if len(args) == op.arity:
                inner = ", ".join(_expr(a, 0, indent) for a in args)
                return f"{op.name}({inner})"
        fn = _expr(t.fn, _PREC_ATOM, indent)
        if t.arg.kind == K_CONST and t.arg.value is UNIT:
            return f"{fn}()"
        return f"{fn}({_expr(t.arg, 0, indent)})"
    raise AssertionError(f"unprintable term kind {k}")

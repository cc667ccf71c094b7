"""Evaluation: values, distributions, seeded RNG streams and the machine.

The machine is a small-step CEK-style interpreter with an explicit frame
stack, so deep recursion in object programs cannot overflow the Python
stack.  It evaluates both direct core terms (sample/weight) and
CPS-transformed terms (weight/dweight with explicit continuations); a
weight in CPS form halts evaluation with a ``Paused`` outcome carrying the
continuation closure and the accumulated log weight.

For speed, ``prepare`` annotates each term once: effect-free builtin
application spines (arithmetic, comparisons, distribution constructors
applied to pure arguments) are compiled to plain Python functions over the
environment, and each lambda caches its free-variable tuple so closures
capture minimal environments.
"""

import math

from .errors import InferenceError, RuntimeErrorPpl
from .terms import (
    K_APP, K_CONST, K_DWEIGHT, K_DWEIGHT_CPS, K_FIX, K_IF, K_LAM, K_SAMPLE,
    K_VAR, K_WEIGHT, K_WEIGHT_CPS,
    UNIT, Builtin, Lam, deep_recursion,
)

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


class RngStream:
    """Counter-based random stream keyed by (seed, particle, generation).

    The same key always reproduces the same draw sequence, independently of
    platform or process, which makes inference results bit-reproducible and
    lets resampling fork decorrelated streams for copied particles.
    """

    __slots__ = ("seed", "particle", "generation", "_key", "_ctr", "_gauss")

    def __init__(self, seed, particle=0, generation=0):
        self.seed = seed
        self.particle = particle
        self.generation = generation
        k = _mix64((seed & _MASK) + _GOLDEN)
        k = _mix64(k ^ (particle & _MASK) * 0xDA942042E4DD58B5 & _MASK)
        k = _mix64(k ^ (generation & _MASK) * 0xC2B2AE3D27D4EB4F & _MASK)
        self._key = k
        self._ctr = 0
        self._gauss = None

    def next_u64(self):
        self._ctr += 1
        return _mix64((self._key + self._ctr * _GOLDEN) & _MASK)

    def random(self):
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * 1.1102230246251565e-16

    def normal01(self):
        g = self._gauss
        if g is not None:
            self._gauss = None
            return g
        u1 = 1.0 - self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        a = 6.283185307179586 * u2
        self._gauss = r * math.sin(a)
        return r * math.cos(a)

    def gamma_std(self, shape):
        """Draw from Gamma(shape, 1) via Marsaglia-Tsang."""
        if shape < 1.0:
            u = 1.0 - self.random()
            return self.gamma_std(shape + 1.0) * u ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal01()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = self.random()
            if u < 1.0 - 0.0331 * x * x * x * x:
                return d * v
            if u > 0.0 and math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                return d * v


# ---------------------------------------------------------------------------
# Distributions

class Dist:
    __slots__ = ()

    def _params(self):
        return tuple(getattr(self, s) for s in self.__slots__)

    def __eq__(self, other):
        return type(self) is type(other) and self._params() == other._params()

    def __hash__(self):
        return hash((type(self).__name__, self._params()))


class Bernoulli(Dist):
    __slots__ = ("p",)

    def __init__(self, p, span=None):
        if not isinstance(p, float) or not 0.0 <= p <= 1.0:
            raise RuntimeErrorPpl(f"bernoulli probability must be in [0,1], "
                                  f"got {p!r}", span)
        self.p = p

    def draw(self, rng):
        return rng.random() < self.p

    def __str__(self):
        return f"bernoulli({self.p!r})"


class Normal(Dist):
    __slots__ = ("mu", "sigma")

    def __init__(self, mu, sigma, span=None):
        if not isinstance(mu, float) or not isinstance(sigma, float) \
                or not sigma > 0.0:
            raise RuntimeErrorPpl(f"normal requires real mean and positive "
                                  f"std dev, got ({mu!r}, {sigma!r})", span)
        self.mu = mu
        self.sigma = sigma

    def draw(self, rng):
        return self.mu + self.sigma * rng.normal01()

    def __str__(self):
        return f"normal({self.mu!r}, {self.sigma!r})"


class Gamma(Dist):
    """Shape-scale parameterization; gamma(1, s) is exponential with mean s."""

    __slots__ = ("shape", "scale")

    def __init__(self, shape, scale, span=None):
        if not isinstance(shape, float) or not isinstance(scale, float) \
                or not shape > 0.0 or not scale > 0.0:
            raise RuntimeErrorPpl(f"gamma requires positive shape and scale, "
                                  f"got ({shape!r}, {scale!r})", span)
        self.shape = shape
        self.scale = scale

    def draw(self, rng):
        return self.scale * rng.gamma_std(self.shape)

    def __str__(self):
        return f"gamma({self.shape!r}, {self.scale!r})"


class Exponential(Dist):
    __slots__ = ("rate",)

    def __init__(self, rate, span=None):
        if not isinstance(rate, float) or not rate > 0.0:
            raise RuntimeErrorPpl(f"exponential requires a positive rate, "
                                  f"got {rate!r}", span)
        self.rate = rate

    def draw(self, rng):
        return -math.log(1.0 - rng.random()) / self.rate

    def __str__(self):
        return f"exponential({self.rate!r})"


# ---------------------------------------------------------------------------
# Values

class Closure:
    __slots__ = ("lam", "env")

    def __init__(self, lam, env):
        self.lam = lam
        self.env = env

    def __repr__(self):
        return f"<closure lam {self.lam.param}>"


class PartialOp:
    """A builtin operator applied to fewer arguments than its arity."""

    __slots__ = ("op", "args")

    def __init__(self, op, args):
        self.op = op
        self.args = args

    def __repr__(self):
        return f"<{self.op.name} partially applied to {len(self.args)}>"


class Tainted:
    """Instrumentation wrapper: a value that may depend on a sample."""

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value

    def __repr__(self):
        return f"Tainted({self.value!r})"


def untaint(v):
    return v.value if type(v) is Tainted else v


class Final:
    __slots__ = ("value", "log_weight")

    def __init__(self, value, log_weight):
        self.value = value
        self.log_weight = log_weight

    is_paused = False

    def __repr__(self):
        return f"Final({self.value!r}, w={self.log_weight})"


class Paused:
    __slots__ = ("continuation", "log_weight")

    def __init__(self, continuation, log_weight):
        self.continuation = continuation
        self.log_weight = log_weight

    is_paused = True

    def __repr__(self):
        return f"Paused(w={self.log_weight})"


# ---------------------------------------------------------------------------
# Builtin semantics

def _need_real(v, span=None):
    if v.__class__ is float:
        return v
    raise RuntimeErrorPpl(f"expected a real number, got {v!r}", span)


def div_real(a, b):
    """IEEE-style division: x/0 is signed infinity, 0/0 is NaN."""
    try:
        return a / b
    except ZeroDivisionError:
        if a != a or a == 0.0:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def exp_real(a):
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def log_real(a, span=None):
    if a > 0.0:
        return math.log(a)
    if a == 0.0:
        return -math.inf
    if a != a:
        return a
    raise RuntimeErrorPpl(f"log of a negative number ({a!r})", span)


def apply_builtin(op, args, span=None):
    """Apply a builtin operator to a full argument tuple."""
    name = op.name
    if op.kind == "arith":
        a = _need_real(args[0], span)
        if op.arity == 1:
            if name == "exp":
                return exp_real(a)
            return log_real(a, span)
        b = _need_real(args[1], span)
        if name == "+":
            return a + b
        if name == "-":
            return a - b
        if name == "*":
            return a * b
        if name == "/":
            return div_real(a, b)
        if name == "<=":
            return a <= b
        return a < b
    if name == "normal":
        return Normal(args[0], args[1], span)
    if name == "gamma":
        return Gamma(args[0], args[1], span)
    if name == "exponential":
        return Exponential(args[0], span)
    return Bernoulli(args[0], span)


# ---------------------------------------------------------------------------
# Term preparation: purity marking, free variables, compiled pure spines

_CODEGEN_GLOBALS = {
    "_div": div_real,
    "_exp": exp_real,
    "_log": log_real,
    "_real": _need_real,
    "_normal": Normal,
    "_gamma": Gamma,
    "_exponential": Exponential,
    "_bernoulli": Bernoulli,
    "math": math,
}

_DIST_HELPERS = {"normal": "_normal", "gamma": "_gamma",
                 "exponential": "_exponential", "bernoulli": "_bernoulli"}


def _spine(t):
    args = []
    while t.kind == K_APP:
        args.append(t.arg)
        t = t.fn
    args.reverse()
    return t, args


class _SpineCompiler:
    def __init__(self):
        self.lines = []
        self.temps = {}
        self.n = 0

    def var_real(self, name):
        # One checked temp per distinct variable name.
        key = ("real", name)
        if key in self.temps:
            return self.temps[key]
        t = self.temp()
        self.lines.append(f"    {t} = _real(e[{name!r}])")
        self.temps[key] = t
        return t

    def temp(self):
        self.n += 1
        return f"_t{self.n}"

    def compile(self, node, want_real):
        k = node.kind
        if k == K_CONST:
            v = node.value
            if v.__class__ is float:
                return repr(v)
            if want_real:
                t = self.temp()
                self.lines.append(f"    {t} = _real({_const_expr(v)})")
                return t
            return _const_expr(v)
        if k == K_VAR:
            if want_real:
                return self.var_real(node.name)
            return f"e[{node.name!r}]"
        head, args = _spine(node)
        op = head.value
        name = op.name
        if op.kind == "dist":
            parts = [self.compile(a, False) for a in args]
            return f"{_DIST_HELPERS[name]}({', '.join(parts)})"
        parts = [self.compile(a, True) for a in args]
        if name == "exp":
            return f"_exp({parts[0]})"
        if name == "log":
            return f"_log({parts[0]})"
        if name == "/":
            return f"_div({parts[0]}, {parts[1]})"
        return f"({parts[0]} {name} {parts[1]})"


def _const_expr(v):
    if v is True:
        return "True"
    if v is False:
        return "False"
    raise _NotCompilable()


class _NotCompilable(Exception):
    pass


def _compile_spine(node):
    c = _SpineCompiler()
    try:
        expr = c.compile(node, False)
    except _NotCompilable:
        return None
    src = "def _pf(e):\n" + "\n".join(c.lines) + f"\n    return {expr}\n"
    ns = dict(_CODEGEN_GLOBALS)
    exec(src, ns)
    return ns["_pf"]


def prepare(root):
    """Annotate a term for evaluation (idempotent, done once per root).

    Terms in the shape produced by ``cps_transform`` additionally compile
    to Python step functions (see the compiled backend below); anything
    else simply runs on the interpreter loop.
    """
    if root.prepared:
        return root
    with deep_recursion():
        _annotate(root, top=True)
        try:
            _compile_cps(root)
        except _CannotCompile:
            pass
    root.prepared = True
    return root


def _annotate(node, top=False):
    """Post-order: set node.pure; compute Lam free variables.

    Returns the free-variable set of the node.
    """
    k = node.kind
    if k == K_VAR:
        node.pure = True
        return {node.name}
    if k == K_CONST:
        node.pure = True
        return set()
    if k == K_LAM:
        fv = _annotate(node.body) - {node.param}
        node.fv = tuple(sorted(fv))
        node.pure = False
        return fv
    fv = set()
    for c in node.children():
        fv |= _annotate(c)
    if k == K_APP:
        head, args = _spine(node)
        if (head.kind == K_CONST and isinstance(head.value, Builtin)
                and len(args) == head.value.arity
                and all(a.pure for a in args)):
            node.pure = True
            node.pyfn = _compile_spine(node)
    return fv


# ---------------------------------------------------------------------------
# Compiled backend for CPS-shaped terms
#
# A CPS-transformed program is a tree of tail statements over atoms
# (variables, constants, lambdas, pure builtin spines): continuation calls,
# curried user calls `f a k`, let-bindings of sample/fix/pure results,
# branches on an atom, and the two weight forms.  Each tail statement
# compiles once into ``step(e, m) -> (next_step, next_env) | _PAUSE | None``
# and a trampoline drives the steps, so evaluation does no per-node
# dispatch and builds exactly one small dict per call.

class _M:
    __slots__ = ("w", "rng", "result", "pause_cont")


_PAUSE = object()
_DIST_CLASSES = (Bernoulli, Normal, Gamma, Exponential)


def _fix_value(operand, span=None):
    """Build the recursive closure for `fix` applied to a function lambda."""
    if type(operand) is not Closure or operand.lam.body.kind != K_LAM:
        raise RuntimeErrorPpl(
            "fix must be applied directly to a lambda whose body is a "
            "lambda", span)
    outer = operand.lam
    inner = outer.body
    env = {}
    rec = Closure(inner, env)
    for n in inner.fv:
        env[n] = rec if n == outer.param else operand.env[n]
    return rec


def _call2(f, a, k, span=None):
    """Apply a curried CPS function to an argument and a continuation."""
    if f.__class__ is Closure:
        lam = f.lam
        b = lam.body
        if b.__class__ is Lam:
            p = lam.param
            fe = f.env
            e2 = {}
            for n in b.fv:
                e2[n] = a if n == p else fe[n]
            e2[b.param] = k
            return (b.body.step, e2)
    raise RuntimeErrorPpl(f"cannot apply non-function {f!r}", span)


def _call1(k, v, span=None):
    """Invoke a continuation closure."""
    if k.__class__ is Closure:
        lam = k.lam
        ke = k.env
        e2 = {}
        for n in lam.fv:
            e2[n] = ke[n]
        e2[lam.param] = v
        return (lam.body.step, e2)
    raise RuntimeErrorPpl(f"cannot apply non-function {k!r}", span)


def _wadd(w, c, span=None):
    if c.__class__ is not float:
        raise RuntimeErrorPpl(
            f"weight argument must be a real number, got {c!r}", span)
    if c != c:
        raise RuntimeErrorPpl("weight argument is NaN", span)
    w = w + c
    if w != w:
        raise InferenceError("accumulated log weight became NaN (inf + -inf)")
    return w


def _sample_value(d, rng, span=None):
    if d.__class__ not in _DIST_CLASSES:
        raise RuntimeErrorPpl(
            f"sample requires a distribution, got {d!r}", span)
    return d.draw(rng)


class _CannotCompile(Exception):
    pass


_COMPILE_NS = {
    "Closure": Closure,
    "_call1": _call1,
    "_call2": _call2,
    "_wadd": _wadd,
    "_fix": _fix_value,
    "_sample": _sample_value,
    "_unit": UNIT,
    "_PAUSE": _PAUSE,
}


class _CpsCompiler:
    def __init__(self):
        self.ns = dict(_COMPILE_NS)
        self.parts = []
        self.count = 0
        self.done = {}
        self.bindings = []

    def name(self, prefix, obj):
        self.count += 1
        name = f"_{prefix}{self.count}"
        self.ns[name] = obj
        return name

    def atom(self, t):
        k = t.kind
        if k == K_VAR:
            return f"e[{t.name!r}]"
        if k == K_CONST:
            v = t.value
            if v.__class__ is float:
                return repr(v)
            if v is True:
                return "True"
            if v is False:
                return "False"
            if v is UNIT:
                return "_unit"
            return self.name("c", v)
        if k == K_LAM:
            self.tail(t.body)
            cap = ", ".join(f"{n!r}: e[{n!r}]" for n in t.fv)
            return f"Closure({self.name('lam', t)}, {{{cap}}})"
        if k == K_APP and t.pure and t.pyfn is not None:
            return f"{self.name('pf', t.pyfn)}(e)"
        raise _CannotCompile()

    def bind_env(self, lam, value_expr):
        entries = [f"{n!r}: e[{n!r}]" for n in lam.fv if n != lam.param]
        entries.append(f"{lam.param!r}: {value_expr}")
        return "{" + ", ".join(entries) + "}"

    def tail(self, t):
        key = id(t)
        if key in self.done:
            return self.done[key]
        self.count += 1
        fname = f"_s{self.count}"
        self.done[key] = fname
        k = t.kind
        lines = [f"def {fname}(e, m):"]
        if k in (K_VAR, K_CONST, K_LAM) or (k == K_APP and t.pure):
            lines.append(f"    m.result = {self.atom(t)}")
            lines.append("    return None")
        elif k == K_IF:
            cond = self.atom(t.cond)
            then_s = self.tail(t.then)
            else_s = self.tail(t.orelse)
            err = self.name("sp", t.span)
            lines.append(f"    c = {cond}")
            lines.append(f"    if c is True:")
            lines.append(f"        return ({then_s}, e)")
            lines.append(f"    if c is False:")
            lines.append(f"        return ({else_s}, e)")
            lines.append(f"    _iferr(c, {err})")
        elif k == K_WEIGHT_CPS or k == K_DWEIGHT_CPS:
            kexpr = self.atom(t.cont)
            cexpr = self.atom(t.arg)
            sp = self.name("sp", t.span)
            lines.append(f"    k = {kexpr}")
            lines.append(f"    m.w = _wadd(m.w, {cexpr}, {sp})")
            if k == K_WEIGHT_CPS:
                lines.append("    m.pause_cont = k")
                lines.append("    return _PAUSE")
            else:
                lines.append("    return _call1(k, _unit)")
        elif k == K_APP:
            fn = t.fn
            if fn.kind == K_LAM:
                rhs = t.arg
                body_s = self.tail(fn.body)
                if rhs.kind == K_SAMPLE:
                    sp = self.name("sp", rhs.span)
                    lines.append(f"    v = _sample({self.atom(rhs.arg)}, "
                                 f"m.rng, {sp})")
                elif rhs.kind == K_FIX:
                    sp = self.name("sp", rhs.span)
                    lines.append(f"    v = _fix({self.atom(rhs.arg)}, {sp})")
                else:
                    lines.append(f"    v = {self.atom(rhs)}")
                lines.append(f"    return ({body_s}, "
                             f"{self.bind_env(fn, 'v')})")
            elif fn.kind == K_APP and not fn.pure:
                sp = self.name("sp", t.span)
                fa = self.atom(fn.fn)
                aa = self.atom(fn.arg)
                ka = self.atom(t.arg)
                lines.append(f"    return _call2({fa}, {aa}, {ka}, {sp})")
            else:
                sp = self.name("sp", t.span)
                lines.append(f"    return _call1({self.atom(fn)}, "
                             f"{self.atom(t.arg)}, {sp})")
        else:
            raise _CannotCompile()
        self.parts.append("\n".join(lines))
        self.bindings.append((t, fname))
        return fname


def _iferr(c, span):
    raise RuntimeErrorPpl(f"if condition must be a boolean, got {c!r}", span)


_COMPILE_NS["_iferr"] = _iferr


def _compile_cps(root):
    comp = _CpsCompiler()
    comp.tail(root)
    src = "\n\n".join(comp.parts)
    exec(src, comp.ns)
    for node, fname in comp.bindings:
        node.step = comp.ns[fname]


# ---------------------------------------------------------------------------
# The machine

_F_ARG = 0       # (tag, arg_term, env, span)
_F_APPLY = 1     # (tag, fn_value, span)
_F_IF = 2        # (tag, then_term, else_term, env, span)
_F_SAMPLE = 3    # (tag, span)
_F_WEIGHT = 4    # (tag, label, span)
_F_FIX = 5       # (tag, span)
_F_CPSW_ARG = 6  # (tag, is_dweight, arg_term, env, origin, span)
_F_CPSW_DO = 7   # (tag, is_dweight, cont_value, origin, span)
_F_TRESTORE = 8  # (tag, saved_flag)


class WeightEvent:
    __slots__ = ("origin", "kind", "increment", "cumulative", "in_branch")

    def __init__(self, origin, kind, increment, cumulative, in_branch):
        self.origin = origin
        self.kind = kind
        self.increment = increment
        self.cumulative = cumulative
        self.in_branch = in_branch


class Evaluator:
    """Evaluates prepared terms; one instance may run many executions.

    With ``track_taint`` every sampled value is wrapped, taint propagates
    through arithmetic builtins, and each weight event records whether it
    executed inside the dynamic extent of a branch on a tainted condition.
    With ``trace`` weight events and raw draws are logged.
    """

    def __init__(self, track_taint=False, trace=False):
        self.track_taint = track_taint
        self.trace = trace
        self.events = []
        self.draws = []

    def run(self, term, rng, w=0.0, env=None):
        prepare(term)
        if term.step is not None and not self.track_taint and not self.trace:
            return self._drive((term.step, {} if env is None else env),
                               w, rng)
        return self._loop(term, {} if env is None else env, [], None, True,
                          w, rng)

    def resume(self, continuation, rng, w=0.0):
        """Resume a paused execution by applying its continuation to ()."""
        return self.apply(continuation, UNIT, rng, w)

    def apply(self, fn_value, arg_value, rng, w=0.0):
        if (not self.track_taint and not self.trace
                and fn_value.__class__ is Closure
                and fn_value.lam.body.step is not None):
            return self._drive(_call1(fn_value, arg_value), w, rng)
        stack = [(_F_APPLY, fn_value, None)]
        return self._loop(None, None, stack, arg_value, False, w, rng)

    def _drive(self, pair, w, rng):
        m = _M()
        m.w = w
        m.rng = rng
        while pair.__class__ is tuple:
            pair = pair[0](pair[1], m)
        if pair is _PAUSE:
            return Paused(m.pause_cont, m.w)
        return Final(m.result, m.w)

    def run_to_completion(self, term, rng, w=0.0):
        """Evaluate, resuming every pause with () on the same stream.

        The accumulated weight carries across pauses, so the result matches
        a direct evaluation of the un-transformed program seeded alike.
        """
        outcome = self.run(term, rng, w)
        while outcome.is_paused:
            outcome = self.resume(outcome.continuation, rng,
                                  outcome.log_weight)
        return outcome

    def _loop(self, ctrl, env, stack, val, evaluating, w, rng):
        taint = self.track_taint
        flag = False
        trace = self.trace
        while True:
            if evaluating:
                while True:
                    k = ctrl.kind
                    if k == K_APP:
                        fn = ctrl.pyfn
                        if fn is not None and not taint:
                            try:
                                val = fn(env)
                            except RuntimeErrorPpl as exc:
                                if exc.span is None:
                                    raise RuntimeErrorPpl(str(exc), ctrl.span)
                                raise
                            break
                        stack.append((_F_ARG, ctrl.arg, env, ctrl.span))
                        ctrl = ctrl.fn
                        continue
                    if k == K_VAR:
                        try:
                            val = env[ctrl.name]
                        except KeyError:
                            raise RuntimeErrorPpl(
                                f"unbound variable '{ctrl.name}'", ctrl.span)
                        break
                    if k == K_CONST:
                        val = ctrl.value
                        break
                    if k == K_LAM:
                        val = Closure(ctrl, {n: env[n] for n in ctrl.fv})
                        break
                    if k == K_IF:
                        stack.append((_F_IF, ctrl.then, ctrl.orelse, env,
                                      ctrl.span))
                        ctrl = ctrl.cond
                        continue
                    if k == K_SAMPLE:
                        stack.append((_F_SAMPLE, ctrl.span))
                        ctrl = ctrl.arg
                        continue
                    if k == K_WEIGHT or k == K_DWEIGHT:
                        origin = ctrl.origin
                        if origin is None:
                            origin = ctrl.label
                        stack.append((_F_WEIGHT, origin, ctrl.span))
                        ctrl = ctrl.arg
                        continue
                    if k == K_FIX:
                        stack.append((_F_FIX, ctrl.span))
                        ctrl = ctrl.arg
                        continue
                    if k == K_WEIGHT_CPS or k == K_DWEIGHT_CPS:
                        stack.append((_F_CPSW_ARG, k == K_DWEIGHT_CPS,
                                      ctrl.arg, env, ctrl.origin, ctrl.span))
                        ctrl = ctrl.cont
                        continue
                    raise RuntimeErrorPpl(f"cannot evaluate term kind {k}",
                                          ctrl.span)
                evaluating = False
                continue

            # Apply phase: deliver val to the top frame.
            if not stack:
                return Final(val, w)
            fr = stack.pop()
            tag = fr[0]
            if tag == _F_ARG:
                stack.append((_F_APPLY, val, fr[3]))
                ctrl = fr[1]
                env = fr[2]
                evaluating = True
                continue
            if tag == _F_APPLY:
                fn = fr[1]
                if taint and type(fn) is Tainted:
                    fn = fn.value
                cls = type(fn)
                if cls is Closure:
                    lam = fn.lam
                    env = dict(fn.env)
                    env[lam.param] = val
                    ctrl = lam.body
                    evaluating = True
                    continue
                if cls is Builtin:
                    if fn.arity == 1:
                        val = self._builtin(fn, (val,), fr[2])
                        continue
                    val = PartialOp(fn, (val,))
                    continue
                if cls is PartialOp:
                    args = fn.args + (val,)
                    if len(args) == fn.op.arity:
                        val = self._builtin(fn.op, args, fr[2])
                        continue
                    val = PartialOp(fn.op, args)
                    continue
                raise RuntimeErrorPpl(f"cannot apply non-function {fn!r}",
                                      fr[2])
            if tag == _F_IF:
                cond = val
                cond_taint = False
                if taint and type(cond) is Tainted:
                    cond_taint = True
                    cond = cond.value
                if cond is True:
                    ctrl = fr[1]
                elif cond is False:
                    ctrl = fr[2]
                else:
                    raise RuntimeErrorPpl(
                        f"if condition must be a boolean, got {cond!r}",
                        fr[4])
                env = fr[3]
                if taint:
                    stack.append((_F_TRESTORE, flag))
                    flag = flag or cond_taint
                evaluating = True
                continue
            if tag == _F_SAMPLE:
                dist = val
                if taint and type(dist) is Tainted:
                    dist = dist.value
                if not isinstance(dist, Dist):
                    raise RuntimeErrorPpl(
                        f"sample requires a distribution, got {dist!r}",
                        fr[1])
                drawn = dist.draw(rng)
                if trace:
                    self.draws.append(drawn)
                val = Tainted(drawn) if taint else drawn
                continue
            if tag == _F_WEIGHT:
                w = self._add_weight(w, val, fr[1], "weight", flag, fr[2])
                val = UNIT
                continue
            if tag == _F_FIX:
                val = self._fix(val, fr[1])
                continue
            if tag == _F_CPSW_ARG:
                stack.append((_F_CPSW_DO, fr[1], val, fr[4], fr[5]))
                ctrl = fr[2]
                env = fr[3]
                evaluating = True
                continue
            if tag == _F_CPSW_DO:
                is_dweight = fr[1]
                cont = fr[2]
                kind = "dweight" if is_dweight else "weight"
                w = self._add_weight(w, val, fr[3], kind, flag, fr[4])
                if is_dweight:
                    stack.append((_F_APPLY, cont, fr[4]))
                    val = UNIT
                    continue
                while stack and stack[-1][0] == _F_TRESTORE:
                    stack.pop()
                if stack:
                    raise RuntimeErrorPpl(
                        "weight paused with a non-empty continuation stack; "
                        "the program is not in proper CPS form", fr[4])
                return Paused(cont, w)
            if tag == _F_TRESTORE:
                flag = fr[1]
                continue
            raise AssertionError(f"unknown frame tag {tag}")

    def _builtin(self, op, args, span):
        if self.track_taint:
            has_taint = False
            raw = []
            for a in args:
                if type(a) is Tainted:
                    has_taint = True
                    raw.append(a.value)
                else:
                    raw.append(a)
            out = apply_builtin(op, tuple(raw), span)
            if has_taint and op.kind == "arith":
                return Tainted(out)
            return out
        return apply_builtin(op, args, span)

    def _fix(self, operand, span):
        if self.track_taint and type(operand) is Tainted:
            operand = operand.value
        return _fix_value(operand, span)

    def _add_weight(self, w, val, origin, kind, flag, span):
        if self.track_taint and type(val) is Tainted:
            val = val.value
        if val.__class__ is not float:
            raise RuntimeErrorPpl(
                f"{kind} argument must be a real number, got {val!r}", span)
        if val != val:
            raise RuntimeErrorPpl(f"{kind} argument is NaN", span)
        w = w + val
        if w != w:
            raise InferenceError(
                "accumulated log weight became NaN (inf + -inf)")
        if self.trace or self.track_taint:
            self.events.append(WeightEvent(origin, kind, val, w, flag))
        return w


_DEFAULT = Evaluator()


def evaluate(term, rng, w=0.0):
    """Evaluate a prepared (or fresh) term under the default evaluator."""
    return _DEFAULT.run(term, rng, w)

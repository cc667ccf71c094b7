"""Control-flow analysis that finds terms reachable from stochastic branches.

Three stages over a uniquely labeled program:

1. ``generate_constraints`` builds set constraints over one unknown set per
   label and per variable.  Abstract values are ``STOCH`` (the term may be a
   sampled value) and the program's lambdas.  Applications and fixpoints
   contribute two guarded flows per lambda in the program's lambda universe;
   ``sample`` contributes stochasticness directly; ``if`` joins its branches.
   Applications of arithmetic/comparison builtins are special: builtins are
   constants that cannot be passed around like user lambdas, so instead of
   lambda-guarded flows they propagate stochasticness from their operands to
   their result (a stochastic argument makes e.g. ``x + 1`` stochastic).
   Distribution constructors propagate nothing: only feeding a sampled value
   into an ``if`` condition creates a stochastic branch.

2. ``solve_constraints`` computes the least solution with a worklist
   algorithm indexed by set variable.

3. ``mark_dynamic`` repeatedly traverses the program depth-first
   left-to-right, flagging everything under a branch whose condition may be
   stochastic, plus the bodies of lambdas that may flow to flagged sites,
   until no flag changes.
"""

from collections import deque

from .errors import AnalysisError
from .label import LambdaInfo, assign_labels, collect_lambdas
from .terms import (
    K_APP, K_CONST, K_DWEIGHT, K_FIX, K_IF, K_LAM, K_SAMPLE, K_VAR, K_WEIGHT,
    Builtin, deep_recursion, iter_subterms,
)


class _Stoch:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "stoch"


STOCH = _Stoch()


def label_var(label):
    return ("l", label)

def name_var(name):
    return ("x", name)


def format_var(v):
    kind, which = v
    return f"S{which}"


def format_av(av):
    if av is STOCH:
        return "stoch"
    return f"lam@{av.label}"


class Direct(tuple):
    """{av} <= target"""

    def __new__(cls, av, target):
        return super().__new__(cls, (av, target))

    av = property(lambda self: self[0])
    target = property(lambda self: self[1])

    def __str__(self):
        return f"{{{format_av(self.av)}}} ⊆ {format_var(self.target)}"


class Flow(tuple):
    """src <= dst"""

    def __new__(cls, src, dst):
        return super().__new__(cls, (src, dst))

    src = property(lambda self: self[0])
    dst = property(lambda self: self[1])

    def __str__(self):
        return f"{format_var(self.src)} ⊆ {format_var(self.dst)}"


class ImplFlow(tuple):
    """{av} <= guard  =>  src <= dst"""

    def __new__(cls, av, guard, src, dst):
        return super().__new__(cls, (av, guard, src, dst))

    av = property(lambda self: self[0])
    guard = property(lambda self: self[1])
    src = property(lambda self: self[2])
    dst = property(lambda self: self[3])

    def __str__(self):
        return (f"{{{format_av(self.av)}}} ⊆ {format_var(self.guard)} => "
                f"{format_var(self.src)} ⊆ {format_var(self.dst)}")


def _check_labeled(t):
    seen = set()
    for node in iter_subterms(t):
        if node.label is None:
            raise AnalysisError("term is not labeled; run assign_labels first")
        if node.label in seen:
            raise AnalysisError(f"duplicate label {node.label}")
        seen.add(node.label)


def _spine(t):
    args = []
    while t.kind == K_APP:
        args.append(t.arg)
        t = t.fn
    args.reverse()
    return t, args


def _builtin_head(t):
    """The Builtin at the head of an application's spine, if any."""
    head, _ = _spine(t)
    if head.kind == K_CONST and isinstance(head.value, Builtin):
        return head.value
    return None


def generate_constraints(t, lams=None):
    """Generate the analysis constraints for a labeled term."""
    _check_labeled(t)
    if lams is None:
        lams = collect_lambdas(t)
    lam_avs = list(lams)
    out = set()

    def gen(node):
        k = node.kind
        lbl = node.label
        if k == K_VAR:
            out.add(Flow(name_var(node.name), label_var(lbl)))
            return
        if k == K_CONST:
            return
        if k == K_LAM:
            out.add(Direct(LambdaInfo(node.param, node.body.label, lbl),
                           label_var(lbl)))
            gen(node.body)
            return
        if k == K_APP:
            gen(node.fn)
            gen(node.arg)
            op = _builtin_head(node)
            if op is not None:
                if op.kind == "arith":
                    # Builtins are not lambdas: no guarded call flows, but
                    # stochastic operands make the application stochastic.
                    for sub in (node.fn, node.arg):
                        sv = label_var(sub.label)
                        out.add(ImplFlow(STOCH, sv, sv, label_var(lbl)))
                return
            fn_v = label_var(node.fn.label)
            arg_v = label_var(node.arg.label)
            for lam in lam_avs:
                out.add(ImplFlow(lam, fn_v, arg_v, name_var(lam.param)))
                out.add(ImplFlow(lam, fn_v, label_var(lam.body_label),
                                 label_var(lbl)))
            return
        if k == K_FIX:
            gen(node.arg)
            arg_v = label_var(node.arg.label)
            for lam in lam_avs:
                body_v = label_var(lam.body_label)
                out.add(ImplFlow(lam, arg_v, body_v, name_var(lam.param)))
                out.add(ImplFlow(lam, arg_v, body_v, label_var(lbl)))
            return
        if k == K_IF:
            gen(node.cond)
            gen(node.then)
            gen(node.orelse)
            out.add(Flow(label_var(node.then.label), label_var(lbl)))
            out.add(Flow(label_var(node.orelse.label), label_var(lbl)))
            return
        if k == K_SAMPLE:
            gen(node.arg)
            out.add(Direct(STOCH, label_var(lbl)))
            return
        if k == K_WEIGHT or k == K_DWEIGHT:
            gen(node.arg)
            return
        raise AnalysisError(f"cannot analyze term kind {k}")

    with deep_recursion():
        gen(t)
    return out


def set_variables(t):
    """All set variables of a labeled program (labels and binder names)."""
    out = set()
    for node in iter_subterms(t):
        out.add(label_var(node.label))
        if node.kind == K_LAM:
            out.add(name_var(node.param))
    return out


class Solution:
    """A total map from set variables to sets of abstract values."""

    def __init__(self, data, universe):
        self.universe = frozenset(universe)
        self._data = {v: frozenset(s) for v, s in data.items() if s}

    def of(self, var):
        return self._data.get(var, frozenset())

    def of_label(self, label):
        return self._data.get(("l", label), frozenset())

    def of_name(self, name):
        return self._data.get(("x", name), frozenset())

    def __eq__(self, other):
        if not isinstance(other, Solution):
            return NotImplemented
        return (self.universe == other.universe
                and self._data == other._data)

    def satisfies(self, constraints):
        """Check every constraint directly against this map."""
        for c in constraints:
            if type(c) is Direct:
                if c.av not in self.of(c.target):
                    return False
            elif type(c) is Flow:
                if not self.of(c.src) <= self.of(c.dst):
                    return False
            else:
                if c.av in self.of(c.guard) \
                        and not self.of(c.src) <= self.of(c.dst):
                    return False
        return True

    def format(self):
        rows = []
        for v in sorted(self.universe, key=_var_sort_key):
            vals = self.of(v)
            if vals:
                body = ", ".join(sorted(format_av(a) for a in vals))
                rows.append(f"{format_var(v)} = {{{body}}}")
            else:
                rows.append(f"{format_var(v)} = {{}}")
        return "\n".join(rows)


def _var_sort_key(v):
    kind, which = v
    if kind == "l":
        return (0, which, "")
    return (1, 0, which)


def solve_constraints(constraints, universe):
    """Least solution of the constraint set via a worklist over variables."""
    data = {v: set() for v in universe}
    watchers = {v: [] for v in universe}
    for c in constraints:
        vars_read = ()
        if type(c) is Flow:
            vars_read = (c.src,)
        elif type(c) is ImplFlow:
            vars_read = (c.guard, c.src)
        for v in vars_read + ((c.target,) if type(c) is Direct else ()):
            if v not in data:
                raise AnalysisError(f"constraint mentions unknown set "
                                    f"variable {format_var(v)}")
        for v in vars_read:
            watchers[v].append(c)
        if type(c) is Flow or type(c) is ImplFlow:
            if c.dst not in data:
                raise AnalysisError(f"constraint mentions unknown set "
                                    f"variable {format_var(c.dst)}")

    work = deque()
    queued = set()

    def add(var, values):
        target = data[var]
        if not values <= target:
            target |= values
            if var not in queued:
                queued.add(var)
                work.append(var)

    for c in constraints:
        if type(c) is Direct:
            add(c.target, {c.av})
    while work:
        v = work.popleft()
        queued.discard(v)
        for c in watchers[v]:
            if type(c) is Flow:
                add(c.dst, data[c.src])
            elif c.av in data[c.guard]:
                add(c.dst, data[c.src])
    return Solution(data, universe)


def mark_dynamic(t, solution, max_traversals=None):
    """Labels of terms reachable from stochastic branches (dynamic terms).

    Each full traversal flags at least one new label or stops, so at most
    (label count + 1) traversals happen; ``max_traversals`` turns that
    bound into a hard check.
    """
    _check_labeled(t)
    dyn = {node.label: False for node in iter_subterms(t)}
    changed = [True]

    def mark(label):
        if not dyn[label]:
            dyn[label] = True
            changed[0] = True

    def recurse(flag, node):
        lbl = node.label
        if flag or dyn[lbl]:
            mark(lbl)
            for av in solution.of_label(lbl):
                if av is not STOCH:
                    mark(av.label)
        k = node.kind
        if k == K_IF:
            recurse(flag, node.cond)
            flag = flag or STOCH in solution.of_label(node.cond.label)
            recurse(flag, node.then)
            recurse(flag, node.orelse)
        elif k == K_LAM:
            recurse(dyn[lbl] or flag, node.body)
        else:
            for child in node.children():
                recurse(flag, child)

    traversals = 0
    with deep_recursion():
        while changed[0]:
            changed[0] = False
            recurse(False, t)
            traversals += 1
            if max_traversals is not None and traversals > max_traversals:
                raise AnalysisError(
                    f"dynamic marking exceeded {max_traversals} traversals")
    return frozenset(l for l, d in dyn.items() if d)


class AnalysisResult:
    """Bundle of everything the pipeline produces for one program."""

    def __init__(self, labeled, lambdas, constraints, solution, dynamic):
        self.labeled = labeled
        self.lambdas = lambdas
        self.constraints = constraints
        self.solution = solution
        self.dynamic = dynamic


def analyze(t, label_map=None):
    """Label, generate, solve and mark, returning an AnalysisResult."""
    labeled = assign_labels(t, label_map=label_map)
    lams = collect_lambdas(labeled)
    constraints = generate_constraints(labeled, lams)
    solution = solve_constraints(constraints, set_variables(labeled))
    dynamic = mark_dynamic(labeled, solution)
    return AnalysisResult(labeled, lams, constraints, solution, dynamic)


def format_constraints(constraints):
    """Stable one-per-line rendering for dumps and golden tests."""
    rank = {Direct: 0, Flow: 1, ImplFlow: 2}
    rows = sorted(constraints, key=lambda c: (rank[type(c)], str(c)))
    return "\n".join(str(c) for c in rows)

"""Program rewrites that prepare inference: dweight alignment and CPS.

``align_weights`` replaces every weight whose label the analysis marked
dynamic with ``dweight`` and drops labels from the result (each rewritten
node remembers its original label as ``origin`` so traces stay readable).

``cps_transform`` converts a closed core term to continuation-passing
style: a one-pass higher-order transform with an identity initial
continuation.  User functions gain one continuation parameter per original
parameter; weight and dweight become their two-argument CPS forms; sample,
fix and fully applied builtin operators remain direct operations whose
results are let-bound so evaluation order is preserved.  In the transformed
program an (aligned) weight is the only construct that pauses evaluation.
"""

from .errors import DesugarError
from .terms import (
    K_APP, K_CONST, K_DWEIGHT, K_FIX, K_IF, K_LAM, K_SAMPLE, K_VAR, K_WEIGHT,
    App, Builtin, Const, Dweight, DweightCps, Fix, If, Lam, Sample, Var,
    Weight, WeightCps, deep_recursion,
)


def align_weights(t, dynamic_labels):
    """Rewrite dynamic weights to dweight; drop labels everywhere else."""
    dyn = dynamic_labels if isinstance(dynamic_labels, (set, frozenset)) \
        else set(dynamic_labels)

    def walk(node):
        k = node.kind
        if k == K_VAR:
            return Var(node.name, span=node.span)
        if k == K_CONST:
            return Const(node.value, span=node.span)
        if k == K_LAM:
            return Lam(node.param, walk(node.body), span=node.span)
        if k == K_APP:
            return App(walk(node.fn), walk(node.arg), span=node.span)
        if k == K_FIX:
            return Fix(walk(node.arg), span=node.span)
        if k == K_IF:
            return If(walk(node.cond), walk(node.then), walk(node.orelse),
                      span=node.span)
        if k == K_SAMPLE:
            return Sample(walk(node.arg), span=node.span)
        if k == K_WEIGHT:
            arg = walk(node.arg)
            if node.label in dyn:
                return Dweight(arg, span=node.span, origin=node.label)
            return Weight(arg, span=node.span, origin=node.label)
        if k == K_DWEIGHT:
            return Dweight(walk(node.arg), span=node.span, origin=node.label)
        raise DesugarError(f"cannot align term kind {k}")

    with deep_recursion():
        return walk(t)


def _is_trivial(t):
    """Effect-free terms whose evaluation cannot sample, weight or call."""
    k = t.kind
    if k == K_VAR or k == K_CONST:
        return True
    if k == K_APP:
        head = t
        args = []
        while head.kind == K_APP:
            args.append(head.arg)
            head = head.fn
        return (head.kind == K_CONST and isinstance(head.value, Builtin)
                and len(args) == head.value.arity
                and all(_is_trivial(a) for a in args))
    return False


class _Cps:
    def __init__(self):
        self.n = 0

    def fresh(self, base):
        self.n += 1
        return f"${base}{self.n}"

    def reify(self, k):
        if callable(k):
            r = self.fresh("r")
            return Lam(r, k(Var(r)))
        return k

    def apply_k(self, k, atom):
        if callable(k):
            return k(atom)
        return App(k, atom)

    def let_bind(self, serious, k):
        """Bind the value of a direct (non-CPS) operation, then continue."""
        if callable(k):
            v = self.fresh("v")
            return App(Lam(v, k(Var(v))), serious)
        return App(k, serious)

    def value(self, t):
        """Transform a term that is syntactically a value."""
        k = t.kind
        if k == K_VAR or k == K_CONST:
            return t
        if k == K_LAM:
            kv = self.fresh("k")
            return Lam(t.param, Lam(kv, self.transform(t.body, Var(kv))),
                       span=t.span)
        raise AssertionError("not a value term")

    def transform(self, t, k):
        kind = t.kind
        if kind == K_VAR or kind == K_CONST:
            return self.apply_k(k, t)
        if kind == K_LAM:
            return self.apply_k(k, self.value(t))
        if kind == K_APP:
            if _is_trivial(t):
                return self.apply_k(k, t)
            head = t
            args = []
            while head.kind == K_APP:
                args.append(head.arg)
                head = head.fn
            args.reverse()
            if (head.kind == K_CONST and isinstance(head.value, Builtin)
                    and len(args) == head.value.arity):
                return self._direct_spine(head, args, k, t.span)
            return self.transform(
                t.fn,
                lambda fv: self.transform(
                    t.arg,
                    lambda av: App(App(fv, av, span=t.span), self.reify(k),
                                   span=t.span)))
        if kind == K_FIX:
            inner = t.arg
            if inner.kind != K_LAM or inner.body.kind != K_LAM:
                raise DesugarError(
                    "cps_transform requires fix to be applied directly to a "
                    "function lambda")
            fixed = Fix(Lam(inner.param, self.value(inner.body),
                            span=inner.span), span=t.span)
            return self.let_bind(fixed, k)
        if kind == K_IF:
            return self.transform(t.cond, lambda cv: self._branch(t, cv, k))
        if kind == K_SAMPLE:
            return self.transform(
                t.arg,
                lambda dv: self.let_bind(Sample(dv, span=t.span), k))
        if kind == K_WEIGHT:
            return self.transform(
                t.arg,
                lambda av: WeightCps(self.reify(k), av, origin=t.origin,
                                     span=t.span))
        if kind == K_DWEIGHT:
            return self.transform(
                t.arg,
                lambda av: DweightCps(self.reify(k), av, origin=t.origin,
                                      span=t.span))
        raise DesugarError(f"cannot CPS-transform term kind {kind}")

    def _direct_spine(self, head, args, k, span):
        """Builtin applications stay direct; arguments become atoms first."""
        atoms = []

        def go(i):
            if i == len(args):
                out = head
                for a in atoms:
                    out = App(out, a, span=span)
                return self.let_bind(out, k)
            return self.transform(args[i],
                                  lambda av: (atoms.append(av), go(i + 1))[1])

        return go(0)

    def _branch(self, t, cv, k):
        if callable(k) or k.kind == K_LAM:
            kv = self.fresh("k")
            body = If(cv, self.transform(t.then, Var(kv)),
                      self.transform(t.orelse, Var(kv)), span=t.span)
            return App(Lam(kv, body), self.reify(k), span=t.span)
        return If(cv, self.transform(t.then, k),
                  self.transform(t.orelse, k), span=t.span)


def cps_transform(t):
    """CPS-convert a closed core term (identity initial continuation)."""
    c = _Cps()
    top = c.fresh("top")
    with deep_recursion():
        return c.transform(t, Lam(top, Var(top)))


def weight_kinds(t):
    """Collect (kind, origin, span) for every weight-class node in t."""
    out = []
    stack = [t]
    while stack:
        node = stack.pop()
        if node.kind in (K_WEIGHT, K_DWEIGHT):
            name = "weight" if node.kind == K_WEIGHT else "dweight"
            origin = node.origin if node.origin is not None else node.label
            out.append((name, origin, node.span))
        stack.extend(node.children())
    return out

"""Unique labeling of subterms and binder renaming.

The static analysis requires every subterm to carry a distinct label and
every variable to be bound in at most one place.  ``assign_labels`` rebuilds
a closed core term so both hold; the optional ``label_map`` (node path ->
label) reproduces an externally fixed numbering, and ``postorder_label_map``
builds the left-to-right post-order map that the worked examples use.
"""

from .errors import AnalysisError
from .terms import (
    K_APP, K_CONST, K_DWEIGHT, K_FIX, K_IF, K_LAM, K_SAMPLE, K_VAR, K_WEIGHT,
    App, Const, Dweight, Fix, If, Lam, Sample, Var, Weight,
    deep_recursion, iter_subterms,
)


class LambdaInfo:
    """One lambda of the program: (binder, body label, lambda label)."""

    __slots__ = ("param", "body_label", "label")

    def __init__(self, param, body_label, label):
        self.param = param
        self.body_label = body_label
        self.label = label

    def __eq__(self, other):
        return (isinstance(other, LambdaInfo)
                and self.param == other.param
                and self.body_label == other.body_label
                and self.label == other.label)

    def __hash__(self):
        return hash((self.param, self.body_label, self.label))

    def __repr__(self):
        return f"(lam {self.param}. .^{self.body_label})^{self.label}"


def postorder_label_map(t):
    """Map node paths to 1-based left-to-right post-order labels."""
    out = {}
    counter = [0]

    def walk(node, path):
        for i, c in enumerate(node.children()):
            walk(c, path + (i,))
        counter[0] += 1
        out[path] = counter[0]

    with deep_recursion():
        walk(t, ())
    return out


def assign_labels(t, label_map=None):
    """Return a structurally identical term with unique labels and binders.

    Labels default to depth-first pre-order numbering from 1; a
    ``label_map`` of node paths overrides that.  Shadowed or repeated binder
    names are renamed to fresh ones (``name_2``, ``name_3``, ...), so the
    result satisfies the unique-binding assumption of the analysis.

    Raises AnalysisError if the term is not closed.
    """
    used = set()
    for node in iter_subterms(t):
        if node.kind == K_LAM:
            used.add(node.param)
        elif node.kind == K_VAR:
            used.add(node.name)
    taken = set(used)
    counter = [0]

    def next_label(path):
        if label_map is not None:
            try:
                return label_map[path]
            except KeyError:
                raise AnalysisError(f"label_map has no entry for path {path}")
        counter[0] += 1
        return counter[0]

    def fresh(base):
        k = 2
        while f"{base}_{k}" in taken:
            k += 1
        name = f"{base}_{k}"
        taken.add(name)
        return name

    bound_once = set()

    def walk(node, path, env):
        label = next_label(path)
        k = node.kind
        if k == K_VAR:
            if node.name not in env:
                raise AnalysisError(f"unbound variable '{node.name}'")
            return Var(env[node.name], label, node.span)
        if k == K_CONST:
            return Const(node.value, label, node.span)
        if k == K_LAM:
            name = node.param
            if name in bound_once:
                name = fresh(name)
            bound_once.add(name)
            env2 = dict(env)
            env2[node.param] = name
            body = walk(node.body, path + (0,), env2)
            return Lam(name, body, label, node.span)
        if k == K_APP:
            return App(walk(node.fn, path + (0,), env),
                       walk(node.arg, path + (1,), env), label, node.span)
        if k == K_FIX:
            return Fix(walk(node.arg, path + (0,), env), label, node.span)
        if k == K_IF:
            return If(walk(node.cond, path + (0,), env),
                      walk(node.then, path + (1,), env),
                      walk(node.orelse, path + (2,), env), label, node.span)
        if k == K_SAMPLE:
            return Sample(walk(node.arg, path + (0,), env), label, node.span)
        if k == K_WEIGHT:
            return Weight(walk(node.arg, path + (0,), env), label, node.span)
        if k == K_DWEIGHT:
            return Dweight(walk(node.arg, path + (0,), env), label, node.span)
        raise AnalysisError(f"cannot label term kind {k} (CPS form?)")

    with deep_recursion():
        labeled = walk(t, (), {})
    labels = [n.label for n in iter_subterms(labeled)]
    if len(labels) != len(set(labels)):
        raise AnalysisError("label_map assigns a label twice")
    return labeled


def collect_lambdas(t):
    """The lambda universe of a labeled term, in pre-order."""
    out = []
    for node in iter_subterms(t):
        if node.kind == K_LAM:
            out.append(LambdaInfo(node.param, node.body.label, node.label))
    return out


_HEADS = {
    K_VAR: lambda n: f"var {n.name}",
    K_CONST: lambda n: f"const {n.value!r}",
    K_LAM: lambda n: f"lam {n.param}",
    K_APP: lambda n: "app",
    K_FIX: lambda n: "fix",
    K_IF: lambda n: "if",
    K_SAMPLE: lambda n: "sample",
    K_WEIGHT: lambda n: "weight",
    K_DWEIGHT: lambda n: "dweight",
}


def dump_labels(t):
    """One line per subterm: ``label: term-head``, sorted by label."""
    rows = []
    for node in iter_subterms(t):
        rows.append((node.label, _HEADS[node.kind](node)))
    rows.sort(key=lambda r: r[0])
    return "\n".join(f"{lbl}: {head}" for lbl, head in rows)

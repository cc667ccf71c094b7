"""Time trees and the constant-rate birth-death case study.

Trees are rooted with divergence ages in Ma before present (leaves at age
0) and must be ultrametric.  ``crbd_source`` unrolls an observed tree into
a probabilistic program that weights each observed branching (aligned, one
per internal node) and simulates hidden speciations along every edge
(unaligned weights inside a stochastic recursion): a hidden side branch at
age ``u`` must go extinct before the present, which the program accounts
for by weighting with the extinction probability at ``u``.

``crbd_exact_log_likelihood`` is the closed-form value the SMC estimates
converge to.  Writing r = birth - death, a lineage alive at age u dies out
before the present with probability

    E(u) = death * (exp(r*u) - 1) / (birth * exp(r*u) - death)

and each observed edge from age s down to age e contributes

    -death*(s-e) + log(birth*exp(r*e) - death) - log(birth*exp(r*s) - death)

(the probability of surviving the edge with no surviving side branches),
while every internal node, root included, contributes log birth.
"""

import math
import re

from .errors import PplError
from .syntax import parse_and_desugar


class NewickError(PplError):
    pass


class TreeNode:
    __slots__ = ("name", "children", "length", "age")

    def __init__(self, name=None, children=None, length=None, age=None):
        self.name = name
        self.children = children if children is not None else []
        self.length = length  # branch length to parent, in Ma
        self.age = age        # Ma before present

    @property
    def is_leaf(self):
        return not self.children


class PhyloTree:
    def __init__(self, root):
        self.root = root

    def leaves(self):
        return [n for n in self.walk() if n.is_leaf]

    def internal_nodes(self):
        return [n for n in self.walk() if not n.is_leaf]

    def walk(self):
        """Pre-order traversal."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def edges(self):
        """(parent, child) pairs in pre-order."""
        out = []
        for node in self.walk():
            for child in node.children:
                out.append((node, child))
        return out

    @property
    def num_leaves(self):
        return len(self.leaves())

    def is_binary(self):
        return all(len(n.children) == 2 for n in self.internal_nodes())

    def max_polytomy(self):
        return max((len(n.children) for n in self.internal_nodes()),
                   default=0)


_TOKEN = re.compile(r"\s*([(),;:]|[^\s(),;:]+)")


def parse_newick(text, age_tolerance=1e-6):
    """Parse a Newick string with branch lengths into an ultrametric tree.

    Node ages are computed from root-to-node path lengths; every leaf must
    end up within ``age_tolerance`` Ma of age zero or the offending leaf is
    reported.  Polytomies are kept as-is (resolve them separately).
    """
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise NewickError("empty Newick input")
    pos = [0]

    def peek():
        return tokens[pos[0]] if pos[0] < len(tokens) else None

    def advance():
        tok = peek()
        pos[0] += 1
        return tok

    def parse_clade():
        node = TreeNode()
        if peek() == "(":
            advance()
            node.children.append(parse_clade())
            while peek() == ",":
                advance()
                node.children.append(parse_clade())
            if advance() != ")":
                raise NewickError("expected ')' in Newick input")
            if peek() not in ("(", ")", ",", ";", ":", None):
                node.name = advance()
        else:
            tok = advance()
            if tok is None or tok in "(),;:":
                raise NewickError(f"unexpected token {tok!r} in Newick input")
            node.name = tok
        if peek() == ":":
            advance()
            tok = advance()
            try:
                node.length = float(tok)
            except (TypeError, ValueError):
                raise NewickError(f"bad branch length {tok!r}")
        return node

    root = parse_clade()
    if peek() != ";":
        raise NewickError("Newick input must end with ';'")

    depths = {}

    def fill_depth(node, depth):
        depths[id(node)] = depth
        for child in node.children:
            if child.length is None:
                raise NewickError(
                    f"missing branch length above "
                    f"{child.name or 'an internal node'}")
            fill_depth(child, depth + child.length)

    fill_depth(root, 0.0)
    tree = PhyloTree(root)
    leaves = tree.leaves()
    height = max(depths[id(leaf)] for leaf in leaves) if leaves else 0.0
    for leaf in leaves:
        if abs(depths[id(leaf)] - height) > age_tolerance:
            raise NewickError(
                f"tree is not ultrametric: leaf {leaf.name!r} is at depth "
                f"{depths[id(leaf)]!r}, expected {height!r}")
    for node in tree.walk():
        node.age = 0.0 if node.is_leaf else height - depths[id(node)]
    return tree


def print_newick(tree, digits=6):
    """Render a tree back to Newick (branch lengths from ages)."""

    def render(node, parent_age):
        if node.is_leaf:
            body = node.name or ""
        else:
            inner = ",".join(render(c, node.age) for c in node.children)
            body = f"({inner})" + (node.name or "")
        if parent_age is None:
            return body
        return f"{body}:{round(parent_age - node.age, digits)}"

    return render(tree.root, None) + ";"


def resolve_polytomies(tree, stem_length):
    """Split each trichotomy into two binary nodes ``stem_length`` apart.

    The first-listed child stays attached at the original age; the other
    two move under a new node at (age - stem_length).  Nodes with more than
    three children are rejected.
    """
    if stem_length <= 0:
        raise PplError("stem_length must be positive")

    def copy(node):
        new = TreeNode(node.name, [copy(c) for c in node.children],
                       node.length, node.age)
        if len(new.children) > 3:
            raise PplError(
                f"cannot resolve a {len(new.children)}-way polytomy")
        if len(new.children) == 3:
            first, second, third = new.children
            new_age = new.age - stem_length
            if new_age <= max(second.age, third.age):
                raise PplError(
                    f"stem_length {stem_length} is too large for the "
                    f"polytomy at age {new.age}")
            joined = TreeNode(None, [second, third], None, new_age)
            new.children = [first, joined]
        return new

    return PhyloTree(copy(tree.root))


class CrbdParams:
    """Birth and death rates (events/Ma) of the diversification process."""

    __slots__ = ("birth_rate", "death_rate")

    def __init__(self, birth_rate, death_rate):
        if not birth_rate > 0.0:
            raise ValueError("birth_rate must be positive")
        if death_rate < 0.0:
            raise ValueError("death_rate must be nonnegative")
        if birth_rate == death_rate:
            raise ValueError(
                "equal birth and death rates are not supported (the "
                "closed-form likelihood is singular there)")
        self.birth_rate = birth_rate
        self.death_rate = death_rate


def _check_crbd_tree(tree):
    if tree.num_leaves < 2:
        raise PplError("the birth-death model needs a tree with >= 2 leaves")
    if not tree.is_binary():
        raise PplError("the birth-death model needs a binary tree; "
                       "resolve polytomies first")


def extinction_probability(age, params):
    """Probability that one lineage alive at ``age`` has no descendants now."""
    lam = params.birth_rate
    mu = params.death_rate
    er = math.exp((lam - mu) * age)
    return mu * (er - 1.0) / (lam * er - mu)


def crbd_exact_log_likelihood(tree, params):
    """Closed-form log likelihood of the reconstructed tree."""
    _check_crbd_tree(tree)
    lam = params.birth_rate
    mu = params.death_rate
    r = lam - mu
    total = (tree.num_leaves - 1) * math.log(lam)
    for parent, child in tree.edges():
        s, e = parent.age, child.age
        total += -mu * (s - e)
        total += math.log((lam * math.exp(r * e) - mu)
                          / (lam * math.exp(r * s) - mu))
    return total


def crbd_source(tree, params, name="crbd"):
    """Unroll a tree into program text (flows through the normal pipeline).

    Each internal node contributes one aligned weight combining the
    branching factor log(birth) with its child edges' survival terms; each
    edge gets a hidden-speciation simulation whose weights are dynamic.
    """
    _check_crbd_tree(tree)
    lam = params.birth_rate
    mu = params.death_rate
    r = lam - mu
    exact = crbd_exact_log_likelihood(tree, params)
    lines = [
        f"# {name}: constant-rate birth-death model over an observed tree",
        f"# leaves: {tree.num_leaves}",
        f"# birth_rate: {lam!r}",
        f"# death_rate: {mu!r}",
        f"# exact_log_likelihood: {exact!r}",
        "function extinctionProb(age) {",
        f"  er = exp({r!r} * age)",
        f"  ({mu!r} * (er - 1.0)) / ({lam!r} * er - {mu!r})",
        "}",
        "function simEdge(age, stop) {",
        f"  wait = sample(exponential({lam!r}))",
        "  u = age - wait",
        "  if u <= stop then () else {",
        "    weight(log(extinctionProb(u)))",
        "    simEdge(u, stop)",
        "  }",
        "}",
    ]

    def emit(node):
        survival = sum(node.age - c.age for c in node.children)
        term = math.log(lam) - mu * survival
        lines.append(f"weight({term!r})")
        for child in node.children:
            lines.append(f"simEdge({node.age!r}, {child.age!r})")
        for child in node.children:
            if not child.is_leaf:
                emit(child)

    emit(tree.root)
    lines.append("0.0")
    return "\n".join(lines) + "\n"


def crbd_program(tree, params, name="crbd"):
    """The generated model as a core term."""
    return parse_and_desugar(crbd_source(tree, params, name))


def read_exact_log_likelihood(source):
    """Recover the oracle value recorded in a generated model's header."""
    m = re.search(r"^#\s*exact_log_likelihood:\s*(\S+)\s*$", source,
                  re.MULTILINE)
    return float(m.group(1)) if m else None

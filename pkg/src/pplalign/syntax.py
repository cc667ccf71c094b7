"""Concrete syntax: lexer, parser and desugarer.

The grammar follows the functional surface language of the worked example
programs: `function f(a, b) { ... }` definitions (recursive via `fix`),
newline-separated `x = e` bindings, `if c then e1 else e2` with expression
or block branches, call syntax `f(a, b)`, infix `+ - * / <= <` with the
usual precedence, unary minus, distribution constructors
`normal/gamma/exponential/bernoulli`, the `flip()` shorthand for
`sample(bernoulli(0.5))`, and `exp`/`log`.  Two core-level escape hatches,
`lam x. e` and `fix(e)`, make every core term expressible so pretty-printed
terms re-parse.  `#` starts a line comment.

Desugaring produces terms of the core calculus only: function definitions
become `fix` of curried lambdas bound with a let, `x = e` sequencing becomes
application of a lambda, and blocks sequence their statements through
lambdas whose binders are fresh.
"""

from .errors import DesugarError, RuntimeErrorPpl, SyntaxErrorPpl
from .runtime import Bernoulli, Exponential, Gamma, Normal
from .terms import (
    BUILTINS, SUB, UNIT,
    App, Const, Fix, If, Lam, Sample, Var, Weight, deep_recursion,
)

# Distribution constructors applied to literal reals fold into distribution
# constants, the D-subset-of-C shape of the core calculus; invalid literal
# parameters are left as applications so they fail at run time like any
# other bad parameter.
_DIST_CLASSES = {"normal": Normal, "gamma": Gamma,
                 "exponential": Exponential, "bernoulli": Bernoulli}

KEYWORDS = {"function", "if", "then", "else", "true", "false",
            "sample", "weight", "lam", "fix"}

_PUNCT2 = ("<=",)
_PUNCT1 = "()+-*/<={},."


class Token:
    __slots__ = ("kind", "text", "line", "col", "end_line", "end_col")

    def __init__(self, kind, text, line, col, end_line, end_col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col
        self.end_line = end_line
        self.end_col = end_col

    def __repr__(self):
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.col})"


def tokenize(source):
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(source)
    paren_stack = []

    def err(msg):
        raise SyntaxErrorPpl(msg, line, col)

    while i < n:
        ch = source[i]
        if ch == "\n":
            # Newlines separate statements except inside parentheses.
            if not (paren_stack and paren_stack[-1] == "("):
                if tokens and tokens[-1].kind != "NEWLINE":
                    tokens.append(Token("NEWLINE", "\n", line, col,
                                        line, col + 1))
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            col += j - i
            i = j
            tokens.append(Token("NUMBER", text, start_line, start_col,
                                line, col))
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            col += j - i
            i = j
            kind = text if text in KEYWORDS else "IDENT"
            tokens.append(Token(kind, text, start_line, start_col, line, col))
            continue
        if source.startswith(_PUNCT2[0], i):
            tokens.append(Token("<=", "<=", line, col, line, col + 2))
            i += 2
            col += 2
            continue
        if ch in _PUNCT1:
            if ch == "(":
                paren_stack.append("(")
            elif ch == "{":
                paren_stack.append("{")
            elif ch in ")}":
                if paren_stack:
                    paren_stack.pop()
            tokens.append(Token(ch, ch, line, col, line, col + 1))
            i += 1
            col += 1
            continue
        err(f"unexpected character {ch!r}")
    tokens.append(Token("EOF", "", line, col, line, col))
    return tokens


# ---------------------------------------------------------------------------
# Surface AST

class SNode:
    """Base surface node; span is (line, col, end_line, end_col)."""

    def __init__(self, span):
        self.span = span

    def children(self):
        return ()


class SProgram(SNode):
    def __init__(self, stmts, span):
        super().__init__(span)
        self.stmts = stmts

    def children(self):
        return tuple(self.stmts)


class SFunc(SNode):
    def __init__(self, name, params, body, span):
        super().__init__(span)
        self.name = name
        self.params = params
        self.body = body  # SBlock

    def children(self):
        return (self.body,)


class SAssign(SNode):
    def __init__(self, name, expr, span):
        super().__init__(span)
        self.name = name
        self.expr = expr

    def children(self):
        return (self.expr,)


class SBlock(SNode):
    def __init__(self, stmts, span):
        super().__init__(span)
        self.stmts = stmts

    def children(self):
        return tuple(self.stmts)


class SIf(SNode):
    def __init__(self, cond, then, orelse, span):
        super().__init__(span)
        self.cond = cond
        self.then = then
        self.orelse = orelse

    def children(self):
        return (self.cond, self.then, self.orelse)


class SCall(SNode):
    def __init__(self, callee, args, span):
        super().__init__(span)
        self.callee = callee
        self.args = args

    def children(self):
        return (self.callee,) + tuple(self.args)


class SBinOp(SNode):
    def __init__(self, op, left, right, span):
        super().__init__(span)
        self.op = op
        self.left = left
        self.right = right

    def children(self):
        return (self.left, self.right)


class SNeg(SNode):
    def __init__(self, expr, span):
        super().__init__(span)
        self.expr = expr

    def children(self):
        return (self.expr,)


class SSample(SNode):
    def __init__(self, expr, span):
        super().__init__(span)
        self.expr = expr

    def children(self):
        return (self.expr,)


class SWeight(SNode):
    def __init__(self, expr, span):
        super().__init__(span)
        self.expr = expr

    def children(self):
        return (self.expr,)


class SLam(SNode):
    def __init__(self, param, body, span):
        super().__init__(span)
        self.param = param
        self.body = body

    def children(self):
        return (self.body,)


class SFix(SNode):
    def __init__(self, expr, span):
        super().__init__(span)
        self.expr = expr

    def children(self):
        return (self.expr,)


class SVar(SNode):
    def __init__(self, name, span):
        super().__init__(span)
        self.name = name


class SNum(SNode):
    def __init__(self, value, span):
        super().__init__(span)
        self.value = value


class SBool(SNode):
    def __init__(self, value, span):
        super().__init__(span)
        self.value = value


class SUnit(SNode):
    pass


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self, offset=0):
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self):
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, kind, what=None):
        tok = self.peek()
        if tok.kind != kind:
            what = what or repr(kind)
            got = tok.text if tok.kind != "EOF" else "end of input"
            raise SyntaxErrorPpl(f"expected {what}, found {got!r}",
                                 tok.line, tok.col)
        return self.next()

    def skip_newlines(self):
        while self.peek().kind == "NEWLINE":
            self.next()

    def parse_program(self):
        self.skip_newlines()
        first = self.peek()
        if first.kind == "EOF":
            raise SyntaxErrorPpl("empty program", first.line, first.col)
        stmts = self.parse_stmts(until="EOF")
        tok = self.peek()
        if tok.kind != "EOF":
            raise SyntaxErrorPpl(f"unexpected {tok.text!r}", tok.line, tok.col)
        last = stmts[-1]
        span = (first.line, first.col, last.span[2], last.span[3])
        return SProgram(stmts, span)

    def parse_stmts(self, until):
        stmts = []
        while True:
            self.skip_newlines()
            tok = self.peek()
            if tok.kind == until or tok.kind == "EOF":
                break
            stmts.append(self.parse_stmt())
            tok = self.peek()
            if tok.kind not in ("NEWLINE", until, "EOF"):
                raise SyntaxErrorPpl(
                    f"expected newline or {until!r} after statement, "
                    f"found {tok.text!r}", tok.line, tok.col)
        if not stmts:
            tok = self.peek()
            raise SyntaxErrorPpl("empty block", tok.line, tok.col)
        return stmts

    def parse_stmt(self):
        tok = self.peek()
        if tok.kind == "function":
            return self.parse_function()
        if tok.kind == "IDENT" and self.peek(1).kind == "=":
            name = self.next()
            self.next()  # '='
            expr = self.parse_expr()
            span = (name.line, name.col, expr.span[2], expr.span[3])
            return SAssign(name.text, expr, span)
        return self.parse_expr()

    def parse_function(self):
        start = self.expect("function")
        name = self.expect("IDENT", "function name")
        self.expect("(")
        params = []
        if self.peek().kind != ")":
            while True:
                params.append(self.expect("IDENT", "parameter name").text)
                if self.peek().kind == ",":
                    self.next()
                else:
                    break
        self.expect(")")
        body = self.parse_block()
        span = (start.line, start.col, body.span[2], body.span[3])
        return SFunc(name.text, params, body, span)

    def parse_block(self):
        start = self.expect("{")
        stmts = self.parse_stmts(until="}")
        end = self.expect("}")
        return SBlock(stmts, (start.line, start.col, end.end_line,
                              end.end_col))

    def parse_branch(self):
        if self.peek().kind == "{":
            return self.parse_block()
        return self.parse_expr()

    def parse_expr(self):
        tok = self.peek()
        if tok.kind == "if":
            return self.parse_if()
        if tok.kind == "lam":
            start = self.next()
            param = self.expect("IDENT", "parameter name")
            self.expect(".")
            body = self.parse_expr()
            return SLam(param.text, body,
                        (start.line, start.col, body.span[2], body.span[3]))
        return self.parse_cmp()

    def parse_if(self):
        start = self.expect("if")
        cond = self.parse_expr()
        self.skip_newlines()
        self.expect("then")
        then = self.parse_branch()
        # `} else` may start a fresh line; look past separators for it.
        save = self.pos
        self.skip_newlines()
        if self.peek().kind != "else":
            self.pos = save
        self.expect("else")
        orelse = self.parse_branch()
        span = (start.line, start.col, orelse.span[2], orelse.span[3])
        return SIf(cond, then, orelse, span)

    def parse_cmp(self):
        left = self.parse_add()
        while self.peek().kind in ("<=", "<"):
            op = self.next()
            right = self.parse_add()
            left = SBinOp(op.kind, left, right,
                          (left.span[0], left.span[1],
                           right.span[2], right.span[3]))
        return left

    def parse_add(self):
        left = self.parse_mul()
        while self.peek().kind in ("+", "-"):
            op = self.next()
            right = self.parse_mul()
            left = SBinOp(op.kind, left, right,
                          (left.span[0], left.span[1],
                           right.span[2], right.span[3]))
        return left

    def parse_mul(self):
        left = self.parse_unary()
        while self.peek().kind in ("*", "/"):
            op = self.next()
            right = self.parse_unary()
            left = SBinOp(op.kind, left, right,
                          (left.span[0], left.span[1],
                           right.span[2], right.span[3]))
        return left

    def parse_unary(self):
        tok = self.peek()
        if tok.kind == "-":
            start = self.next()
            expr = self.parse_unary()
            return SNeg(expr, (start.line, start.col,
                               expr.span[2], expr.span[3]))
        return self.parse_postfix()

    def parse_postfix(self):
        expr = self.parse_primary()
        while self.peek().kind == "(":
            self.next()
            args = []
            if self.peek().kind != ")":
                while True:
                    args.append(self.parse_expr())
                    if self.peek().kind == ",":
                        self.next()
                    else:
                        break
            end = self.expect(")")
            expr = SCall(expr, args, (expr.span[0], expr.span[1],
                                      end.end_line, end.end_col))
        return expr

    def parse_primary(self):
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.next()
            return SNum(float(tok.text),
                        (tok.line, tok.col, tok.end_line, tok.end_col))
        if tok.kind in ("true", "false"):
            self.next()
            return SBool(tok.kind == "true",
                         (tok.line, tok.col, tok.end_line, tok.end_col))
        if tok.kind == "sample":
            start = self.next()
            self.expect("(")
            inner = self.parse_expr()
            end = self.expect(")")
            return SSample(inner, (start.line, start.col,
                                   end.end_line, end.end_col))
        if tok.kind == "weight":
            start = self.next()
            self.expect("(")
            inner = self.parse_expr()
            end = self.expect(")")
            return SWeight(inner, (start.line, start.col,
                                   end.end_line, end.end_col))
        if tok.kind == "fix":
            start = self.next()
            self.expect("(")
            inner = self.parse_expr()
            end = self.expect(")")
            return SFix(inner, (start.line, start.col,
                                end.end_line, end.end_col))
        if tok.kind == "IDENT":
            self.next()
            return SVar(tok.text,
                        (tok.line, tok.col, tok.end_line, tok.end_col))
        if tok.kind == "(":
            start = self.next()
            if self.peek().kind == ")":
                end = self.next()
                return SUnit((start.line, start.col,
                              end.end_line, end.end_col))
            inner = self.parse_expr()
            self.expect(")")
            return inner
        got = tok.text if tok.kind != "EOF" else "end of input"
        raise SyntaxErrorPpl(f"expected an expression, found {got!r}",
                             tok.line, tok.col)


def parse_program(source):
    """Parse a program text into a SurfaceAst (SProgram)."""
    if not isinstance(source, str):
        source = source.decode("utf-8")
    with deep_recursion():
        return _Parser(tokenize(source)).parse_program()


# ---------------------------------------------------------------------------
# Desugaring to the core calculus

def _collect_names(node, out):
    if isinstance(node, (SVar,)):
        out.add(node.name)
    elif isinstance(node, SFunc):
        out.add(node.name)
        out.update(node.params)
    elif isinstance(node, SAssign):
        out.add(node.name)
    elif isinstance(node, SLam):
        out.add(node.param)
    for c in node.children():
        _collect_names(c, out)


class _Desugarer:
    def __init__(self, ast):
        self.used = set()
        _collect_names(ast, self.used)
        self.counter = 0

    def fresh(self):
        while True:
            self.counter += 1
            name = f"_{self.counter}"
            if name not in self.used:
                self.used.add(name)
                return name

    def stmts(self, stmts, scope):
        head = stmts[0]
        if len(stmts) == 1:
            if isinstance(head, (SFunc, SAssign)):
                raise DesugarError(
                    f"{head.span[0]}:{head.span[1]}: a block must end with "
                    "an expression, not a binding")
            return self.expr(head, scope)
        rest = stmts[1:]
        if isinstance(head, SFunc):
            inner_scope = scope | {head.name} | set(head.params)
            body = self.stmts(head.body.stmts, inner_scope)
            for p in reversed(head.params):
                body = Lam(p, body, span=head.span)
            if not head.params:
                body = Lam(self.fresh(), body, span=head.span)
            fn = Fix(Lam(head.name, body, span=head.span), span=head.span)
            tail = self.stmts(rest, scope | {head.name})
            return App(Lam(head.name, tail, span=head.span), fn,
                       span=head.span)
        if isinstance(head, SAssign):
            rhs = self.expr(head.expr, scope)
            tail = self.stmts(rest, scope | {head.name})
            return App(Lam(head.name, tail, span=head.span), rhs,
                       span=head.span)
        first = self.expr(head, scope)
        tail = self.stmts(rest, scope)
        return App(Lam(self.fresh(), tail, span=head.span), first,
                   span=head.span)

    def expr(self, node, scope):
        if isinstance(node, SNum):
            return Const(node.value, span=node.span)
        if isinstance(node, SBool):
            return Const(node.value, span=node.span)
        if isinstance(node, SUnit):
            return Const(UNIT, span=node.span)
        if isinstance(node, SVar):
            if node.name in scope:
                return Var(node.name, span=node.span)
            if node.name in BUILTINS or node.name == "flip":
                raise DesugarError(
                    f"{node.span[0]}:{node.span[1]}: builtin '{node.name}' "
                    "can only be called, not passed around as a value")
            raise DesugarError(
                f"{node.span[0]}:{node.span[1]}: unbound variable "
                f"'{node.name}'")
        if isinstance(node, SBinOp):
            op = Const(BUILTINS[node.op], span=node.span)
            return App(App(op, self.expr(node.left, scope), span=node.span),
                       self.expr(node.right, scope), span=node.span)
        if isinstance(node, SNeg):
            zero = Const(0.0, span=node.span)
            op = Const(SUB, span=node.span)
            return App(App(op, zero, span=node.span),
                       self.expr(node.expr, scope), span=node.span)
        if isinstance(node, SIf):
            return If(self.expr(node.cond, scope),
                      self.branch(node.then, scope),
                      self.branch(node.orelse, scope), span=node.span)
        if isinstance(node, SSample):
            return Sample(self.expr(node.expr, scope), span=node.span)
        if isinstance(node, SWeight):
            return Weight(self.expr(node.expr, scope), span=node.span)
        if isinstance(node, SLam):
            return Lam(node.param, self.expr(node.body, scope | {node.param}),
                       span=node.span)
        if isinstance(node, SFix):
            return Fix(self.expr(node.expr, scope), span=node.span)
        if isinstance(node, SBlock):
            return self.stmts(node.stmts, scope)
        if isinstance(node, SCall):
            return self.call(node, scope)
        raise DesugarError(f"cannot desugar {type(node).__name__}")

    def branch(self, node, scope):
        if isinstance(node, SBlock):
            return self.stmts(node.stmts, scope)
        return self.expr(node, scope)

    def call(self, node, scope):
        callee = node.callee
        if isinstance(callee, SVar) and callee.name not in scope:
            name = callee.name
            if name == "flip":
                if node.args:
                    raise DesugarError(
                        f"{node.span[0]}:{node.span[1]}: flip() takes no "
                        "arguments")
                dist = Const(Bernoulli(0.5), span=node.span)
                return Sample(dist, span=node.span)
            if name in BUILTINS:
                op = BUILTINS[name]
                if len(node.args) != op.arity:
                    raise DesugarError(
                        f"{node.span[0]}:{node.span[1]}: {name} expects "
                        f"{op.arity} argument(s), got {len(node.args)}")
                args = [self.expr(a, scope) for a in node.args]
                if op.kind == "dist" and all(
                        isinstance(a, Const) and isinstance(a.value, float)
                        for a in args):
                    try:
                        value = _DIST_CLASSES[name](*(a.value for a in args))
                        return Const(value, span=node.span)
                    except RuntimeErrorPpl:
                        pass
                out = Const(op, span=callee.span)
                for a in args:
                    out = App(out, a, span=node.span)
                return out
            raise DesugarError(
                f"{node.span[0]}:{node.span[1]}: unbound variable '{name}'")
        fn = self.expr(callee, scope)
        if not node.args:
            return App(fn, Const(UNIT, span=node.span), span=node.span)
        out = fn
        for a in node.args:
            out = App(out, self.expr(a, scope), span=node.span)
        return out


def desugar(ast):
    """Lower a SurfaceAst to the core calculus."""
    with deep_recursion():
        d = _Desugarer(ast)
        if isinstance(ast, SProgram):
            return d.stmts(ast.stmts, frozenset())
        if isinstance(ast, SBlock):
            return d.stmts(ast.stmts, frozenset())
        return d.expr(ast, frozenset())


def parse_and_desugar(source):
    return desugar(parse_program(source))

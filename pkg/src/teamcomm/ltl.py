"""LTL formulas, the co-safe fragment, and translation to Büchi automata.

Surface syntax (ASCII, with Unicode aliases)::

    true | false | prop | ! f | X f | <> f | [] f | f U g | f && g | f || g

Precedence is unary > ``U`` > ``&&`` > ``||``; ``U`` is right-associative.
Propositions are identifiers made of letters, digits, ``_`` and ``.``
(e.g. ``P1.collect``).

The automaton construction is the on-the-fly tableau of Gerth, Peled, Vardi
and Wolper followed by counter-based degeneralization.  ``word_satisfies`` is
an independent semantic evaluator on lasso words used as a test oracle.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence


class LTLSyntaxError(ValueError):
    """Raised for malformed formula text; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset


class NBATooLargeError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Formula:
    def __str__(self) -> str:
        return to_str(self)


@dataclass(frozen=True)
class Const(Formula):
    value: bool


@dataclass(frozen=True)
class Prop(Formula):
    name: str


@dataclass(frozen=True)
class Not(Formula):
    operand: Formula


@dataclass(frozen=True)
class Next(Formula):
    operand: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    operand: Formula


@dataclass(frozen=True)
class Always(Formula):
    operand: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Release(Formula):
    # Only produced by negation-normal-form conversion; not part of the
    # surface syntax.
    left: Formula
    right: Formula


TRUE = Const(True)
FALSE = Const(False)

_UNARY = (Not, Next, Eventually, Always)
_BINARY = (And, Or, Until, Release)


def propositions(f: Formula) -> frozenset[str]:
    if isinstance(f, Prop):
        return frozenset((f.name,))
    if isinstance(f, Const):
        return frozenset()
    if isinstance(f, _UNARY):
        return propositions(f.operand)
    return propositions(f.left) | propositions(f.right)


def size(f: Formula) -> int:
    if isinstance(f, (Prop, Const)):
        return 1
    if isinstance(f, _UNARY):
        return 1 + size(f.operand)
    return 1 + size(f.left) + size(f.right)


# --------------------------------------------------------------------------
# printing


_UNARY_SYM = {Not: "!", Next: "X ", Eventually: "<>", Always: "[]"}
_BINARY_SYM = {And: "&&", Or: "||", Until: "U", Release: "R"}


def to_str(f: Formula) -> str:
    """Print ``f`` so that ``parse_ltl(to_str(f))`` returns an equal AST."""
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Prop):
        return f.name
    if isinstance(f, _UNARY):
        return _UNARY_SYM[type(f)] + _wrap(f.operand)
    return f"({to_str(f.left)} {_BINARY_SYM[type(f)]} {to_str(f.right)})"


def _wrap(f: Formula) -> str:
    s = to_str(f)
    return s if not isinstance(f, _UNARY) else f"({s})"


# --------------------------------------------------------------------------
# parsing


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<op>&&|\|\||<>|\[\]|[()!¬∧∨◇□○])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
    """,
    re.VERBOSE,
)

_ALIASES = {"¬": "!", "∧": "&&", "∨": "||", "◇": "<>", "□": "[]", "○": "X"}


@dataclass
class _Token:
    kind: str  # "op", "ident", "end"
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LTLSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        if m.lastgroup != "ws":
            value = _ALIASES.get(m.group(), m.group())
            kind = "op" if m.lastgroup == "op" or value in ("X", "U") else "ident"
            if kind == "ident" and value in ("true", "false"):
                kind = "op"
            tokens.append(_Token(kind, value, _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, alphabet: frozenset[str] | None):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.alphabet = alphabet

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def take(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.pos += 1
            return True
        return False

    def parse(self) -> Formula:
        f = self.disjunction()
        if self.tok.kind != "end":
            if self.tok.text == ")":
                raise LTLSyntaxError("unbalanced ')'", self.tok.offset)
            raise LTLSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.offset)
        return f

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.take("||"):
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while self.take("&&"):
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        f = self.unary()
        if self.take("U"):
            return Until(f, self.until())
        return f

    def unary(self) -> Formula:
        for sym, node in (("!", Not), ("X", Next), ("<>", Eventually), ("[]", Always)):
            if self.take(sym):
                return node(self.unary())
        return self.atom()

    def atom(self) -> Formula:
        tok = self.tok
        if tok.kind == "ident":
            if self.alphabet is not None and tok.text not in self.alphabet:
                raise LTLSyntaxError(f"unknown proposition {tok.text!r}", tok.offset)
            self.pos += 1
            return Prop(tok.text)
        if self.take("true"):
            return TRUE
        if self.take("false"):
            return FALSE
        if self.take("("):
            f = self.disjunction()
            if not self.take(")"):
                raise LTLSyntaxError("unbalanced '(': expected ')'", tok.offset)
            return f
        if tok.kind == "end":
            raise LTLSyntaxError("unexpected end of formula", tok.offset)
        raise LTLSyntaxError(f"unexpected token {tok.text!r}", tok.offset)


def parse_ltl(text: str, alphabet: Iterable[str] | None = None) -> Formula:
    """Parse ``text``; every proposition must belong to ``alphabet`` if given."""
    return _Parser(text, None if alphabet is None else frozenset(alphabet)).parse()


# --------------------------------------------------------------------------
# syntactic classes


def is_sc_ltl(f: Formula) -> bool:
    """True iff ``f`` has no always and negation only on atoms."""
    if isinstance(f, (Const, Prop)):
        return True
    if isinstance(f, Not):
        return isinstance(f.operand, (Const, Prop))
    if isinstance(f, (Always, Release)):
        return False
    if isinstance(f, _UNARY):
        return is_sc_ltl(f.operand)
    return is_sc_ltl(f.left) and is_sc_ltl(f.right)


def nnf(f: Formula, negate: bool = False) -> Formula:
    """Negation normal form over {const, literal, &&, ||, X, U, R}."""
    if isinstance(f, Const):
        return Const(f.value != negate)
    if isinstance(f, Prop):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return nnf(f.operand, not negate)
    if isinstance(f, Next):
        return Next(nnf(f.operand, negate))
    if isinstance(f, And):
        cls = Or if negate else And
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Or):
        cls = And if negate else Or
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Until):
        cls = Release if negate else Until
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Release):
        cls = Until if negate else Release
        return cls(nnf(f.left, negate), nnf(f.right, negate))
    if isinstance(f, Eventually):
        return nnf(Until(TRUE, f.operand), negate)
    if isinstance(f, Always):
        return nnf(Release(FALSE, f.operand), negate)
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------------------
# lasso semantics (test oracle)


def _symbols(word: Iterable[Iterable[str]]) -> list[frozenset[str]]:
    return [frozenset(s) for s in word]


def word_satisfies(f: Formula, prefix: Sequence[Iterable[str]], cycle: Sequence[Iterable[str]]) -> bool:
    """Truth of ``f`` at position 0 of the infinite word ``prefix · cycle^ω``.

    Every subformula is evaluated once over the ``len(prefix) + len(cycle)``
    distinct positions; until/release are least/greatest fixpoints along the
    successor map that folds the last position back onto the cycle start.
    """
    if not cycle:
        raise ValueError("cycle must be nonempty")
    word = _symbols(prefix) + _symbols(cycle)
    n = len(word)
    loop = len(prefix)
    succ = list(range(1, n)) + [loop]
    memo: dict[Formula, list[bool]] = {}

    def ev(g: Formula) -> list[bool]:
        if g in memo:
            return memo[g]
        if isinstance(g, Const):
            val = [g.value] * n
        elif isinstance(g, Prop):
            val = [g.name in s for s in word]
        elif isinstance(g, Not):
            val = [not b for b in ev(g.operand)]
        elif isinstance(g, And):
            a, b = ev(g.left), ev(g.right)
            val = [x and y for x, y in zip(a, b)]
        elif isinstance(g, Or):
            a, b = ev(g.left), ev(g.right)
            val = [x or y for x, y in zip(a, b)]
        elif isinstance(g, Next):
            a = ev(g.operand)
            val = [a[succ[i]] for i in range(n)]
        elif isinstance(g, (Until, Eventually)):
            a = ev(g.left) if isinstance(g, Until) else [True] * n
            b = ev(g.right) if isinstance(g, Until) else ev(g.operand)
            val = _fixpoint(a, b, succ, least=True)
        elif isinstance(g, (Release, Always)):
            a = ev(g.left) if isinstance(g, Release) else [False] * n
            b = ev(g.right) if isinstance(g, Release) else ev(g.operand)
            val = _fixpoint(a, b, succ, least=False)
        else:
            raise TypeError(f"not a formula: {g!r}")
        memo[g] = val
        return val

    return ev(f)[0]


def _fixpoint(a: list[bool], b: list[bool], succ: list[int], least: bool) -> list[bool]:
    # until:   v = b | (a & v∘succ), least fixpoint
    # release: v = b & (a | v∘succ), greatest fixpoint
    n = len(a)
    val = [not least] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            nv = (b[i] or (a[i] and val[succ[i]])) if least else (b[i] and (a[i] or val[succ[i]]))
            if nv != val[i]:
                val[i] = nv
                changed = True
    return val


# --------------------------------------------------------------------------
# Büchi automata


@dataclass(frozen=True)
class Guard:
    """Conjunction of literals as bitmasks over ``NBA.props``."""

    pos: int
    neg: int

    def matches(self, mask: int) -> bool:
        return (mask & self.pos) == self.pos and not (mask & self.neg)


@dataclass(frozen=True)
class NBA:
    props: tuple[str, ...]
    transitions: tuple[tuple[tuple[Guard, int], ...], ...]
    initial: frozenset[int]
    accepting: frozenset[int]
    _succ_cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def num_states(self) -> int:
        return len(self.transitions)

    def symbol_mask(self, symbol: Iterable[str]) -> int:
        index = {p: k for k, p in enumerate(self.props)}
        mask = 0
        for p in symbol:
            k = index.get(p)
            if k is not None:
                mask |= 1 << k
        return mask

    def successors(self, q: int, mask: int) -> tuple[int, ...]:
        key = (q, mask)
        hit = self._succ_cache.get(key)
        if hit is None:
            hit = tuple(sorted({s for g, s in self.transitions[q] if g.matches(mask)}))
            self._succ_cache[key] = hit
        return hit

    def guard_str(self, g: Guard) -> str:
        lits = [p for k, p in enumerate(self.props) if g.pos >> k & 1]
        lits += ["!" + p for k, p in enumerate(self.props) if g.neg >> k & 1]
        return " && ".join(lits) if lits else "true"

    def to_dot(self, name: str = "nba") -> str:
        lines = [f"digraph {name} {{", "  rankdir=LR;"]
        for q in range(self.num_states):
            shape = "doublecircle" if q in self.accepting else "circle"
            lines.append(f"  q{q} [shape={shape}];")
        for q in sorted(self.initial):
            lines.append(f"  init{q} [shape=point]; init{q} -> q{q};")
        for q, edges in enumerate(self.transitions):
            for g, s in edges:
                lines.append(f'  q{q} -> q{s} [label="{self.guard_str(g)}"];')
        lines.append("}")
        return "\n".join(lines)


_INIT = -1


@dataclass
class _Node:
    incoming: set[int]
    old: frozenset[Formula]
    next: frozenset[Formula]


@lru_cache(maxsize=None)
def _order_key(f: Formula) -> tuple[int, str]:
    return (size(f), to_str(f))


def _is_literal(f: Formula) -> bool:
    return isinstance(f, (Const, Prop)) or (isinstance(f, Not) and isinstance(f.operand, Prop))


def _expand(f: Formula, max_nodes: int) -> list[_Node]:
    nodes: list[_Node] = []
    index: dict[tuple[frozenset, frozenset], int] = {}
    # (incoming, new, old, next)
    stack: list[tuple[set[int], set[Formula], set[Formula], set[Formula]]] = [({_INIT}, {f}, set(), set())]
    while stack:
        incoming, new, old, nxt = stack.pop()
        if not new:
            key = (frozenset(old), frozenset(nxt))
            if key in index:
                nodes[index[key]].incoming |= incoming
                continue
            if len(nodes) >= max_nodes:
                raise NBATooLargeError(f"tableau exceeds {max_nodes} nodes")
            idx = len(nodes)
            index[key] = idx
            nodes.append(_Node(set(incoming), key[0], key[1]))
            stack.append(({idx}, set(nxt), set(), set()))
            continue
        eta = min(new, key=_order_key)
        new = new - {eta}
        if _is_literal(eta):
            if eta == FALSE:
                continue
            if eta == TRUE:
                stack.append((incoming, new, old, nxt))
                continue
            complement = eta.operand if isinstance(eta, Not) else Not(eta)
            if complement in old:
                continue
            stack.append((incoming, new, old | {eta}, nxt))
        elif isinstance(eta, And):
            stack.append((incoming, new | ({eta.left, eta.right} - old), old | {eta}, nxt))
        elif isinstance(eta, Next):
            stack.append((incoming, new, old | {eta}, nxt | {eta.operand}))
        elif isinstance(eta, (Or, Until, Release)):
            old2 = old | {eta}
            if isinstance(eta, Or):
                first = (new | ({eta.left} - old), nxt)
                second = (new | ({eta.right} - old), nxt)
            elif isinstance(eta, Until):
                first = (new | ({eta.left} - old), nxt | {eta})
                second = (new | ({eta.right} - old), nxt)
            else:
                first = (new | ({eta.right} - old), nxt | {eta})
                second = (new | ({eta.left, eta.right} - old), nxt)
            # pushed in reverse so the first branch is expanded first
            stack.append((set(incoming), second[0], old2, second[1]))
            stack.append((set(incoming), first[0], old2, first[1]))
        else:
            raise TypeError(f"formula not in negation normal form: {eta!r}")
    return nodes


def translate_to_nba(f: Formula, max_states: int = 100_000) -> NBA:
    """Build an NBA accepting exactly the words satisfying ``f``.

    Raises NBATooLargeError when more than ``max_states`` states would be
    produced.
    """
    g = nnf(f)
    nodes = _expand(g, max_states)
    props = tuple(sorted(propositions(f)))
    bit = {p: 1 << k for k, p in enumerate(props)}

    def guard(node: _Node) -> Guard:
        pos = neg = 0
        for lit in node.old:
            if isinstance(lit, Prop):
                pos |= bit[lit.name]
            elif isinstance(lit, Not) and isinstance(lit.operand, Prop):
                neg |= bit[lit.operand.name]
        return Guard(pos, neg)

    untils = sorted({u for n in nodes for u in n.old if isinstance(u, Until)}, key=_order_key)
    fair = [
        frozenset(
            k for k, n in enumerate(nodes)
            if u not in n.old or u.right == TRUE or u.right in n.old
        )
        for u in untils
    ]
    sink = next((k for k, n in enumerate(nodes) if not n.old and not n.next), None)
    guards = [guard(n) for n in nodes]
    succ_nodes: list[list[int]] = [[] for _ in nodes]
    init_nodes = []
    for k, n in enumerate(nodes):
        for src in sorted(n.incoming):
            if src == _INIT:
                init_nodes.append(k)
            else:
                succ_nodes[src].append(k)

    # Degeneralize: product state (node, counter).  The universal sink is
    # collapsed to one absorbing accepting state.
    nfair = max(1, len(fair))
    ids: dict[tuple[int, int], int] = {}
    edges: list[list[tuple[Guard, int]]] = []
    accepting: set[int] = set()
    todo: list[tuple[int, int]] = []

    def state(node: int, counter: int) -> int:
        key = (node, 0) if node == sink else (node, counter)
        if key not in ids:
            if len(ids) >= max_states:
                raise NBATooLargeError(f"automaton exceeds {max_states} states")
            ids[key] = len(edges)
            edges.append([])
            todo.append(key)
            if node == sink or (node >= 0 and counter == 0 and (not fair or node in fair[0])):
                accepting.add(ids[key])
        return ids[key]

    start = state(_INIT, 0)
    while todo:
        node, counter = todo.pop(0)
        src = ids[(node, counter)]
        if node == _INIT:
            targets, nxt = init_nodes, 0
        else:
            targets = succ_nodes[node]
            nxt = (counter + 1) % nfair if (not fair or node in fair[counter]) else counter
        for t in targets:
            edges[src].append((guards[t], state(t, nxt)))
    return NBA(
        props=props,
        transitions=tuple(tuple(e) for e in edges),
        initial=frozenset({start}),
        accepting=frozenset(accepting),
    )


def nba_accepts_lasso(a: NBA, prefix: Sequence[Iterable[str]], cycle: Sequence[Iterable[str]]) -> bool:
    """Whether ``a`` accepts ``prefix · cycle^ω``.

    Explores the finite graph of (state, word position) pairs and looks for a
    reachable accepting pair lying on a cycle.
    """
    if not cycle:
        raise ValueError("cycle must be nonempty")
    masks = [a.symbol_mask(s) for s in prefix] + [a.symbol_mask(s) for s in cycle]
    n = len(masks)
    loop = len(prefix)

    def succ(node: tuple[int, int]):
        q, i = node
        j = i + 1 if i + 1 < n else loop
        return [(s, j) for s in a.successors(q, masks[i])]

    seen = set()
    stack = [(q, 0) for q in a.initial]
    seen.update(stack)
    while stack:
        for nb in succ(stack.pop()):
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    for node in sorted(seen):
        if node[0] not in a.accepting or node[1] < loop:
            continue
        back = set()
        stack = succ(node)
        while stack:
            cur = stack.pop()
            if cur == node:
                return True
            if cur not in back:
                back.add(cur)
                stack.extend(succ(cur))
    return False

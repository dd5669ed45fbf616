"""Continuous first-order formulas over finite rational metric structures.

Formulas take values in [0, 1].  Every connective is 1-Lipschitz apart
from scalar truncated multiplication, which lets a linear inverse
continuity modulus k*id be inferred structurally for any formula.
Quantifiers are exact min/max over a finite carrier; interval evaluation
accounts for the carrier being only an r-dense prefix of the intended
space.
"""

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

from .errors import PreconditionError, UsageError
from .metric import FinMetric, QUPrefix
from .rat import ONE, ZERO, Rat01, check_rat01, format_rat, parse_rat, tadd, tsub

KEYWORDS = ("neg", "half", "tsub", "tadd", "tmul", "min", "max", "absdiff",
            "sup", "inf", "d")

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class RelSpec:
    name: str
    arity: int
    coeff: Fraction  # inverse continuity modulus is coeff * id


class Signature:
    """Relation symbols with arities and linear modulus coefficients.

    The metric symbol d is implicit and always available; declared names
    must not collide with it or with the connective keywords.
    """

    def __init__(self, relations):
        self.relations = list(relations)
        seen = set()
        for r in self.relations:
            if not _IDENT.fullmatch(r.name) or r.name in KEYWORDS:
                raise UsageError(f"bad relation name {r.name!r}")
            if r.name in seen:
                raise UsageError(f"duplicate relation {r.name}")
            seen.add(r.name)
            if not isinstance(r.arity, int) or r.arity < 1:
                raise UsageError(f"bad arity for {r.name}")
            coeff = Fraction(r.coeff)
            if coeff <= 0:
                raise UsageError(f"modulus coefficient for {r.name} must be positive")
        self._by_name = {r.name: r for r in self.relations}

    def get(self, name: str) -> Optional[RelSpec]:
        return self._by_name.get(name)

    def __eq__(self, other):
        return isinstance(other, Signature) and self.relations == other.relations


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Pt:
    id: int


Term = Union[Var, Pt]


@dataclass(frozen=True)
class Const:
    value: Rat01


@dataclass(frozen=True)
class Atom:
    rel: str
    args: tuple


@dataclass(frozen=True)
class D:
    left: Term
    right: Term


@dataclass(frozen=True)
class Neg:
    sub: "Formula"


@dataclass(frozen=True)
class Half:
    sub: "Formula"


@dataclass(frozen=True)
class TMul:
    scale: Fraction
    sub: "Formula"


@dataclass(frozen=True)
class TSub:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class TAdd:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class AbsDiff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Min:
    subs: tuple


@dataclass(frozen=True)
class Max:
    subs: tuple


@dataclass(frozen=True)
class Sup:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class Inf:
    var: str
    body: "Formula"


Formula = Union[Const, Atom, D, Neg, Half, TMul, TSub, TAdd, AbsDiff, Min,
                Max, Sup, Inf]


def free_vars(f: Formula) -> frozenset:
    if isinstance(f, Const):
        return frozenset()
    if isinstance(f, (Atom, D)):
        args = f.args if isinstance(f, Atom) else (f.left, f.right)
        return frozenset(t.name for t in args if isinstance(t, Var))
    if isinstance(f, (Neg, Half, TMul)):
        return free_vars(f.sub)
    if isinstance(f, (TSub, TAdd, AbsDiff)):
        return free_vars(f.left) | free_vars(f.right)
    if isinstance(f, (Min, Max)):
        out = frozenset()
        for s in f.subs:
            out |= free_vars(s)
        return out
    if isinstance(f, (Sup, Inf)):
        return free_vars(f.body) - {f.var}
    raise TypeError(f"not a formula: {f!r}")


def _format_term(t: Term) -> str:
    return t.name if isinstance(t, Var) else str(t.id)


def format_formula(f: Formula) -> str:
    if isinstance(f, Const):
        return format_rat(f.value)
    if isinstance(f, Atom):
        return f"{f.rel}({', '.join(map(_format_term, f.args))})"
    if isinstance(f, D):
        return f"d({_format_term(f.left)}, {_format_term(f.right)})"
    if isinstance(f, Neg):
        return f"neg({format_formula(f.sub)})"
    if isinstance(f, Half):
        return f"half({format_formula(f.sub)})"
    if isinstance(f, TMul):
        return f"tmul({format_rat(f.scale)}, {format_formula(f.sub)})"
    if isinstance(f, TSub):
        return f"tsub({format_formula(f.left)}, {format_formula(f.right)})"
    if isinstance(f, TAdd):
        return f"tadd({format_formula(f.left)}, {format_formula(f.right)})"
    if isinstance(f, AbsDiff):
        return f"absdiff({format_formula(f.left)}, {format_formula(f.right)})"
    if isinstance(f, Min):
        return f"min({', '.join(map(format_formula, f.subs))})"
    if isinstance(f, Max):
        return f"max({', '.join(map(format_formula, f.subs))})"
    if isinstance(f, Sup):
        return f"sup({f.var}, {format_formula(f.body)})"
    if isinstance(f, Inf):
        return f"inf({f.var}, {format_formula(f.body)})"
    raise TypeError(f"not a formula: {f!r}")


class _Parser:
    """Recursive-descent parser for the function-style formula syntax."""

    def __init__(self, text: str, sig: Signature):
        self.text = text
        self.sig = sig
        self.pos = 0

    def fail(self, msg: str):
        raise UsageError(f"{msg} at position {self.pos}")

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expect(self, ch: str):
        if self._peek() != ch:
            self.fail(f"expected {ch!r}")
        self.pos += 1

    def _ident(self) -> str:
        self._skip_ws()
        m = _IDENT.match(self.text, self.pos)
        if not m:
            self.fail("expected identifier")
        self.pos = m.end()
        return m.group()

    def _int(self) -> int:
        self._skip_ws()
        m = re.compile(r"\d+").match(self.text, self.pos)
        if not m:
            self.fail("expected integer")
        self.pos = m.end()
        return int(m.group())

    def _rational(self) -> Fraction:
        p = self._int()
        if self.pos < len(self.text) and self.text[self.pos] == "/":
            self.pos += 1
            q = self._int()
            if q == 0:
                self.fail("zero denominator")
            return Fraction(p, q)
        return Fraction(p)

    def _term(self) -> Term:
        c = self._peek()
        if c.isdigit():
            return Pt(self._int())
        start = self.pos
        name = self._ident()
        if name in KEYWORDS or self.sig.get(name) is not None:
            self.pos = start
            self.fail(f"{name!r} cannot be used as a variable")
        return Var(name)

    def _args(self, parse_one, n: Optional[int] = None) -> list:
        self._expect("(")
        out = [parse_one()]
        while self._peek() == ",":
            self.pos += 1
            out.append(parse_one())
        self._expect(")")
        if n is not None and len(out) != n:
            self.fail(f"expected {n} arguments, got {len(out)}")
        return out

    def formula(self) -> Formula:
        c = self._peek()
        if c == "":
            self.fail("unexpected end of input")
        if c.isdigit():
            v = self._rational()
            if not 0 <= v <= 1:
                self.fail(f"constant {v} outside [0, 1]")
            return Const(v)
        start = self.pos
        name = self._ident()
        if name == "d":
            a, b = self._args(self._term, 2)
            return D(a, b)
        if name == "neg":
            return Neg(self._args(self.formula, 1)[0])
        if name == "half":
            return Half(self._args(self.formula, 1)[0])
        if name == "tmul":
            self._expect("(")
            q = self._rational()
            if q <= 0:
                self.fail("tmul scale must be positive")
            self._expect(",")
            sub = self.formula()
            self._expect(")")
            return TMul(q, sub)
        if name == "tsub":
            a, b = self._args(self.formula, 2)
            return TSub(a, b)
        if name == "tadd":
            a, b = self._args(self.formula, 2)
            return TAdd(a, b)
        if name == "absdiff":
            a, b = self._args(self.formula, 2)
            return AbsDiff(a, b)
        if name in ("min", "max"):
            subs = self._args(self.formula)
            if len(subs) < 2:
                self.fail(f"{name} needs at least 2 arguments")
            return Min(tuple(subs)) if name == "min" else Max(tuple(subs))
        if name in ("sup", "inf"):
            self._expect("(")
            var = self._ident()
            if var in KEYWORDS or self.sig.get(var) is not None:
                self.fail(f"{var!r} cannot be used as a variable")
            self._expect(",")
            body = self.formula()
            self._expect(")")
            return Sup(var, body) if name == "sup" else Inf(var, body)
        spec = self.sig.get(name)
        if spec is None:
            self.pos = start
            self.fail(f"unknown relation {name!r}")
        args = self._args(self._term, spec.arity)
        return Atom(name, tuple(args))


def parse(text: str, sig: Signature) -> Formula:
    p = _Parser(text, sig)
    f = p.formula()
    if p._peek() != "":
        p.fail("trailing input")
    return f


def modulus(f: Formula, sig: Signature) -> Fraction:
    """A coefficient k such that k*id is an inverse continuity modulus of
    f under the max metric on assignment tuples."""
    if isinstance(f, Const):
        return ZERO
    if isinstance(f, Atom):
        spec = sig.get(f.rel)
        if spec is None:
            raise UsageError(f"unknown relation {f.rel!r}")
        return spec.coeff
    if isinstance(f, D):
        return Fraction(2)
    if isinstance(f, (Neg, Sup, Inf)):
        sub = f.sub if isinstance(f, Neg) else f.body
        return modulus(sub, sig)
    if isinstance(f, Half):
        return modulus(f.sub, sig) / 2
    if isinstance(f, TMul):
        return f.scale * modulus(f.sub, sig)
    if isinstance(f, (TSub, TAdd, AbsDiff)):
        return modulus(f.left, sig) + modulus(f.right, sig)
    if isinstance(f, (Min, Max)):
        return max(modulus(s, sig) for s in f.subs)
    raise TypeError(f"not a formula: {f!r}")


class FinStructure:
    """A finite metric space with total rational-valued relation tables."""

    def __init__(self, sig: Signature, space: FinMetric, tables):
        self.sig = sig
        self.space = space
        self.tables = tables

    def value(self, rel: str, tup) -> Rat01:
        try:
            return self.tables[rel][tuple(tup)]
        except KeyError:
            raise PreconditionError(f"no table value for {rel}{tuple(tup)}")

    def check(self) -> None:
        """Totality plus the modulus invariant, exhaustively."""
        self.space.check()
        pts = list(self.space.points)
        for spec in self.sig.relations:
            table = self.tables.get(spec.name)
            if table is None:
                raise PreconditionError(f"missing table for {spec.name}")
            tuples = list(_all_tuples(pts, spec.arity))
            for t in tuples:
                if t not in table:
                    raise PreconditionError(f"no table value for {spec.name}{t}")
                check_rat01(table[t])
            for i, a in enumerate(tuples):
                for b in tuples[i + 1:]:
                    gap = abs(table[a] - table[b])
                    if gap > spec.coeff * self.space.tuple_dist(a, b):
                        raise PreconditionError(
                            f"{spec.name} breaks its modulus on {a}, {b}")

    def to_text(self) -> str:
        lines = [self.space.to_text().rstrip("\n")]
        for spec in self.sig.relations:
            lines.append(f"rel {spec.name} {spec.arity} "
                         f"mod {format_rat(spec.coeff)}")
        for spec in self.sig.relations:
            for tup in sorted(self.tables[spec.name]):
                ids = " ".join(str(i) for i in tup)
                lines.append(f"val {spec.name} {ids} "
                             f"{format_rat(self.tables[spec.name][tup])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FinStructure":
        metric_lines, rel_lines, val_lines = [], [], []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            kind = line.split()[0]
            if kind in ("point", "dist"):
                metric_lines.append(line)
            elif kind == "rel":
                rel_lines.append(line)
            elif kind == "val":
                val_lines.append(line)
            else:
                raise UsageError(f"unrecognized line: {raw!r}")
        space = FinMetric.from_text("\n".join(metric_lines))
        rels = []
        for line in rel_lines:
            parts = line.split()
            if len(parts) != 5 or parts[3] != "mod" or not parts[2].isdigit():
                raise UsageError(f"bad rel line: {line!r}")
            rels.append(RelSpec(parts[1], int(parts[2]), parse_rat(parts[4])))
        sig = Signature(rels)
        tables = {r.name: {} for r in rels}
        for line in val_lines:
            parts = line.split()
            spec = sig.get(parts[1]) if len(parts) > 1 else None
            if spec is None:
                raise UsageError(f"val for undeclared relation: {line!r}")
            if (len(parts) != 3 + spec.arity
                    or not all(x.isdigit() for x in parts[2:2 + spec.arity])):
                raise UsageError(f"bad val line: {line!r}")
            tup = tuple(int(x) for x in parts[2:2 + spec.arity])
            v = parse_rat(parts[-1])
            if not 0 <= v <= 1:
                raise UsageError(f"val outside [0, 1]: {line!r}")
            if tup in tables[spec.name]:
                raise UsageError(f"duplicate val for {spec.name}{tup}")
            tables[spec.name][tup] = v
        m = cls(sig, space, tables)
        m.check()
        return m


def _all_tuples(pts, arity: int):
    if arity == 0:
        yield ()
        return
    for t in _all_tuples(pts, arity - 1):
        for p in pts:
            yield t + (p,)


def _resolve(t: Term, asg, n: int) -> int:
    if isinstance(t, Var):
        if t.name not in asg:
            raise UsageError(f"unassigned variable {t.name!r}")
        return asg[t.name]
    if not 0 <= t.id < n:
        raise PreconditionError(f"point {t.id} outside carrier")
    return t.id


def eval_formula(M: FinStructure, f: Formula, asg=None) -> Rat01:
    """Exact evaluation; sup and inf range over the finite carrier."""
    asg = dict(asg) if asg else {}
    n = M.space.n

    def ev(f, asg):
        if isinstance(f, Const):
            return f.value
        if isinstance(f, Atom):
            return M.value(f.rel, tuple(_resolve(t, asg, n) for t in f.args))
        if isinstance(f, D):
            return M.space.d(_resolve(f.left, asg, n),
                             _resolve(f.right, asg, n))
        if isinstance(f, Neg):
            return ONE - ev(f.sub, asg)
        if isinstance(f, Half):
            return ev(f.sub, asg) / 2
        if isinstance(f, TMul):
            return min(ONE, f.scale * ev(f.sub, asg))
        if isinstance(f, TSub):
            return tsub(ev(f.left, asg), ev(f.right, asg))
        if isinstance(f, TAdd):
            return tadd(ev(f.left, asg), ev(f.right, asg))
        if isinstance(f, AbsDiff):
            return abs(ev(f.left, asg) - ev(f.right, asg))
        if isinstance(f, Min):
            return min(ev(s, asg) for s in f.subs)
        if isinstance(f, Max):
            return max(ev(s, asg) for s in f.subs)
        if isinstance(f, (Sup, Inf)):
            if n == 0:
                raise PreconditionError("quantifier over empty carrier")
            vals = (ev(f.body, {**asg, f.var: p}) for p in M.space.points)
            return max(vals) if isinstance(f, Sup) else min(vals)
        raise TypeError(f"not a formula: {f!r}")

    return ev(f, asg)


def eval_interval(M: FinStructure, f: Formula, asg=None,
                  r: Rat01 = ZERO):
    """Certified bounds on the value of f over any r-dense superspace.

    The carrier is treated as an r-dense prefix: every point of the
    larger space is within r of some carrier point, and tables extend
    1-Lipschitz-compatibly (as lipschitz_extend produces).  Returned
    (lo, hi) brackets the true value there; quantifier-free formulas
    get a width-0 interval.
    """
    asg = dict(asg) if asg else {}
    check_rat01(r)
    n = M.space.n

    def iv(f, asg):
        if isinstance(f, Const):
            return f.value, f.value
        if isinstance(f, (Atom, D)):
            v = eval_formula(M, f, asg)
            return v, v
        if isinstance(f, Neg):
            lo, hi = iv(f.sub, asg)
            return ONE - hi, ONE - lo
        if isinstance(f, Half):
            lo, hi = iv(f.sub, asg)
            return lo / 2, hi / 2
        if isinstance(f, TMul):
            lo, hi = iv(f.sub, asg)
            return min(ONE, f.scale * lo), min(ONE, f.scale * hi)
        if isinstance(f, TSub):
            l1, h1 = iv(f.left, asg)
            l2, h2 = iv(f.right, asg)
            return tsub(l1, h2), tsub(h1, l2)
        if isinstance(f, TAdd):
            l1, h1 = iv(f.left, asg)
            l2, h2 = iv(f.right, asg)
            return tadd(l1, l2), tadd(h1, h2)
        if isinstance(f, AbsDiff):
            l1, h1 = iv(f.left, asg)
            l2, h2 = iv(f.right, asg)
            lo = max(ZERO, l1 - h2, l2 - h1)
            hi = max(h1 - l2, h2 - l1, ZERO)
            return lo, hi
        if isinstance(f, Min):
            parts = [iv(s, asg) for s in f.subs]
            return min(p[0] for p in parts), min(p[1] for p in parts)
        if isinstance(f, Max):
            parts = [iv(s, asg) for s in f.subs]
            return max(p[0] for p in parts), max(p[1] for p in parts)
        if isinstance(f, (Sup, Inf)):
            if n == 0:
                raise PreconditionError("quantifier over empty carrier")
            k = modulus(f.body, M.sig)
            parts = [iv(f.body, {**asg, f.var: p}) for p in M.space.points]
            if isinstance(f, Sup):
                lo = max(p[0] for p in parts)
                hi = min(ONE, max(p[1] for p in parts) + k * r)
            else:
                hi = min(p[1] for p in parts)
                lo = max(ZERO, min(p[0] for p in parts) - k * r)
            return lo, hi
        raise TypeError(f"not a formula: {f!r}")

    return iv(f, asg)


def lipschitz_extend(seed: FinStructure, target) -> FinStructure:
    """Extend seed tables to a larger carrier by the tightest values
    compatible with each relation's modulus.

    target may be a FinMetric or a QUPrefix whose first points coincide
    with the seed carrier.  New values are
    R(x) = min(1, min over seed tuples s of R(s) + coeff * d(x, s)),
    which is coeff-Lipschitz and agrees with the seed on seed tuples.
    """
    space = target.space if isinstance(target, QUPrefix) else target
    ns, nt = seed.space.n, space.n
    if ns > nt:
        raise PreconditionError("seed carrier larger than target")
    if ns == 0:
        raise PreconditionError("empty seed carrier")
    for i in range(ns):
        for j in range(i + 1, ns):
            if seed.space.d(i, j) != space.d(i, j):
                raise PreconditionError(
                    f"seed is not a metric prefix of target at ({i}, {j})")
    seed.check()
    tables = {}
    for spec in seed.sig.relations:
        src = seed.tables[spec.name]
        out = {}
        for tup in _all_tuples(list(range(nt)), spec.arity):
            if all(i < ns for i in tup):
                out[tup] = src[tup]
                continue
            best = ONE
            for s, v in src.items():
                cand = v + spec.coeff * max(
                    space.d(a, b) for a, b in zip(tup, s))
                if cand < best:
                    best = cand
            out[tup] = best
        tables[spec.name] = out
    return FinStructure(seed.sig, space.copy(), tables)

"""Finite rational metric spaces with diameter <= 1.

Contents: FinMetric (dense integer point ids), partial distance constraint
sets with a complete feasibility decision (witness or violated-chain
certificate), admissibility of one-point extensions, the canonical
incrementally-built universal prefix (QUPrefix / qu_extend), and partial
isometries with exact extension.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

from .errors import PreconditionError, UsageError
from .rat import ONE, ZERO, format_rat, parse_rat01

# A bound is (value, strict).  For uppers, (v, True) means "< v"; for lowers
# "> v".  Ordering below treats a strict bound as tighter than a non-strict
# one at the same value.


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


class FinMetric:
    """Finite metric space on points 0..n-1 with rational distances in (0, 1].

    Distances are stored as lower-triangle rows; symmetry and d(a,a)=0 are
    structural.  Triangle validity is guaranteed for spaces built through
    append_point with admissible distance vectors; check() re-verifies.
    """

    __slots__ = ("_rows",)

    def __init__(self) -> None:
        self._rows: list[list[Fraction]] = []

    @property
    def n(self) -> int:
        return len(self._rows)

    @property
    def points(self) -> range:
        return range(len(self._rows))

    def d(self, a: int, b: int) -> Fraction:
        if a == b:
            if not 0 <= a < self.n:
                raise UsageError(f"unknown point {a}")
            return ZERO
        lo, hi = (a, b) if a < b else (b, a)
        try:
            return self._rows[hi][lo]
        except IndexError:
            raise UsageError(f"unknown point pair ({a}, {b})") from None

    def append_point(self, dists: list[Fraction]) -> int:
        """Add point n with the given distances to points 0..n-1."""
        if len(dists) != self.n:
            raise UsageError("distance vector length mismatch")
        for v in dists:
            if not 0 < v <= 1:
                raise UsageError(f"distance {v} outside (0, 1]")
        self._rows.append(list(dists))
        return self.n - 1

    def copy(self) -> "FinMetric":
        m = FinMetric()
        m._rows = [row.copy() for row in self._rows]
        return m

    def __eq__(self, other) -> bool:
        return isinstance(other, FinMetric) and self._rows == other._rows

    def __hash__(self):
        return hash(tuple(tuple(row) for row in self._rows))

    def check(self) -> None:
        """Re-verify the metric axioms; raises PreconditionError on violation."""
        for a, b, c in itertools.combinations(self.points, 3):
            dab, dac, dbc = self.d(a, b), self.d(a, c), self.d(b, c)
            if dab > dac + dbc or dac > dab + dbc or dbc > dab + dac:
                raise PreconditionError(f"triangle violated on ({a}, {b}, {c})")

    def tuple_dist(self, s: tuple[int, ...], t: tuple[int, ...]) -> Fraction:
        """Max-metric distance between equal-length tuples."""
        if len(s) != len(t):
            raise UsageError("tuple length mismatch")
        if not s:
            return ZERO
        return max(self.d(a, b) for a, b in zip(s, t))

    def to_text(self) -> str:
        lines = [f"point {i}" for i in self.points]
        for b in self.points:
            for a in range(b):
                lines.append(f"dist {a} {b} {format_rat(self._rows[b][a])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FinMetric":
        ids, dists = _parse_point_dist_lines(text, allow_extra=False)
        return _metric_from_parsed(ids, dists)


def _parse_point_dist_lines(text: str, allow_extra: bool):
    """Shared line parser; returns (ids, {pair: value}).  Lines other than
    point/dist raise unless allow_extra, in which case they are returned."""
    ids: list[int] = []
    dists: dict[tuple[int, int], Fraction] = {}
    extra: list[tuple[int, list[str]]] = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "point":
            if len(parts) != 2:
                raise UsageError(f"line {ln}: point takes one id")
            ids.append(_parse_id(parts[1], ln))
        elif parts[0] == "dist":
            if len(parts) != 4:
                raise UsageError(f"line {ln}: dist takes two ids and a value")
            a, b = _parse_id(parts[1], ln), _parse_id(parts[2], ln)
            if a == b:
                raise UsageError(f"line {ln}: dist needs distinct points")
            v = parse_rat01(parts[3])
            key = _pair(a, b)
            if key in dists and dists[key] != v:
                raise UsageError(f"line {ln}: conflicting dist for {key}")
            dists[key] = v
        elif allow_extra:
            extra.append((ln, parts))
        else:
            raise UsageError(f"line {ln}: unknown directive {parts[0]!r}")
    if allow_extra:
        return ids, dists, extra
    return ids, dists


def _parse_id(tok: str, ln: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise UsageError(f"line {ln}: bad point id {tok!r}") from None
    if v < 0:
        raise UsageError(f"line {ln}: negative point id")
    return v


def _metric_from_parsed(ids, dists) -> FinMetric:
    if sorted(ids) != list(range(len(ids))):
        raise UsageError("point ids must be exactly 0..n-1")
    m = FinMetric()
    for i in range(len(ids)):
        row = []
        for j in range(i):
            key = (j, i)
            if key not in dists:
                raise UsageError(f"missing dist for pair {key}")
            row.append(dists[key])
        m.append_point(row)
    for key in dists:
        if key[1] >= len(ids):
            raise UsageError(f"dist references unknown point {key[1]}")
    return m


def one_point_admissible(space: FinMetric, r: dict[int, Fraction]) -> bool:
    """Can a new point be appended at the given distances to every point?

    r must assign a rational in (0, 1] to every point of the space;
    r(a) = 0 would duplicate a and is a precondition violation.
    """
    if set(r) != set(space.points):
        raise UsageError("r must assign a distance to every point")
    for a, v in r.items():
        if v == 0:
            raise PreconditionError(f"r({a}) = 0 would duplicate the point")
        if not 0 < v <= 1:
            raise UsageError(f"r({a}) = {v} outside (0, 1]")
    return _admissible_over(space, tuple(r), tuple(r[a] for a in r))


def _admissible_over(space: FinMetric, anchors: tuple[int, ...],
                     values: tuple[Fraction, ...]) -> bool:
    for (i, a), (j, b) in itertools.combinations(enumerate(anchors), 2):
        dab = space.d(a, b)
        ra, rb = values[i], values[j]
        if abs(ra - rb) > dab or ra + rb < dab:
            return False
    return True


# --- partial constraint sets and feasibility ---------------------------------


class PartialConstraintSet:
    """Exact / lower / upper rational distance constraints on named points.

    Point ids are arbitrary non-negative integers.  Bounds may be strict.
    Conflicting exact constraints on one pair are a usage error; a lower
    above an upper is merely an infeasible instance.
    """

    def __init__(self, points=()) -> None:
        self.points: list[int] = []
        self._seen: set[int] = set()
        self.exact: dict[tuple[int, int], Fraction] = {}
        self.lower: dict[tuple[int, int], tuple[Fraction, bool]] = {}
        self.upper: dict[tuple[int, int], tuple[Fraction, bool]] = {}
        for p in points:
            self.add_point(p)

    def add_point(self, p: int) -> None:
        if p < 0:
            raise UsageError("negative point id")
        if p not in self._seen:
            self._seen.add(p)
            self.points.append(p)

    def _key(self, a: int, b: int) -> tuple[int, int]:
        if a == b:
            raise UsageError("constraints need distinct points")
        self.add_point(a)
        self.add_point(b)
        return _pair(a, b)

    def add_exact(self, a: int, b: int, v: Fraction) -> None:
        key = self._key(a, b)
        v = _check_unit(v)
        if key in self.exact and self.exact[key] != v:
            raise UsageError(f"conflicting exact distances for {key}")
        self.exact[key] = v

    def add_lower(self, a: int, b: int, v: Fraction, strict: bool = False) -> None:
        key = self._key(a, b)
        v = _check_unit(v)
        old = self.lower.get(key)
        if old is None or _lower_stronger((v, strict), old):
            self.lower[key] = (v, strict)

    def add_upper(self, a: int, b: int, v: Fraction, strict: bool = False) -> None:
        key = self._key(a, b)
        v = _check_unit(v)
        old = self.upper.get(key)
        if old is None or _upper_stronger((v, strict), old):
            self.upper[key] = (v, strict)

    def to_text(self) -> str:
        lines = [f"point {p}" for p in sorted(self.points)]
        for (a, b), v in sorted(self.exact.items()):
            lines.append(f"dist {a} {b} {format_rat(v)}")
        for kind, table in (("lower", self.lower), ("upper", self.upper)):
            for (a, b), (v, strict) in sorted(table.items()):
                suffix = " strict" if strict else ""
                lines.append(f"{kind} {a} {b} {format_rat(v)}{suffix}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PartialConstraintSet":
        ids, dists, extra = _parse_point_dist_lines(text, allow_extra=True)
        c = cls(ids)
        for (a, b), v in dists.items():
            c.add_exact(a, b, v)
        for ln, parts in extra:
            if parts[0] not in ("lower", "upper"):
                raise UsageError(f"line {ln}: unknown directive {parts[0]!r}")
            if len(parts) not in (4, 5):
                raise UsageError(f"line {ln}: {parts[0]} takes ids, value, [strict]")
            strict = False
            if len(parts) == 5:
                if parts[4] != "strict":
                    raise UsageError(f"line {ln}: trailing token must be 'strict'")
                strict = True
            a, b = _parse_id(parts[1], ln), _parse_id(parts[2], ln)
            v = parse_rat01(parts[3])
            if parts[0] == "lower":
                c.add_lower(a, b, v, strict)
            else:
                c.add_upper(a, b, v, strict)
        return c


def _check_unit(v: Fraction) -> Fraction:
    if not 0 <= v <= 1:
        raise UsageError(f"constraint value {v} outside [0, 1]")
    return v


def _upper_stronger(new, old) -> bool:
    return new[0] < old[0] or (new[0] == old[0] and new[1] and not old[1])


def _lower_stronger(new, old) -> bool:
    return new[0] > old[0] or (new[0] == old[0] and new[1] and not old[1])


@dataclass
class Feasible:
    """Witness metric: complete distance map on the instance's points."""
    witness: dict[tuple[int, int], Fraction]


@dataclass
class Infeasible:
    """A violated-inequality chain.

    The chain a = p_0, ..., p_k = b commits upper bounds whose sum is an
    upper bound on d(a, b) incompatible with the stated requirement on
    (a, b).  kind is 'lower', 'exact' or 'positivity'.
    """
    pair: tuple[int, int]
    bound: Fraction
    bound_strict: bool
    kind: str
    chain: list[int]
    chain_bounds: list[tuple[Fraction, bool, str]]  # (value, strict, upper|exact|cap)


def feasible(c: PartialConstraintSet):
    """Decide whether a diameter-<=1 metric satisfies every constraint.

    Returns Feasible(witness) with an exact rational witness, or
    Infeasible(certificate) with a checkable chain.  Decision method:
    shortest-path closure of upper bounds over a (value, strict) min-plus
    order, then per-pair interval checks against the strongest lower
    requirements; witnesses for strict instances come from re-closing a
    delta-tightened system on the common denominator lattice.
    """
    pts = list(c.points)
    n = len(pts)
    idx = {p: i for i, p in enumerate(pts)}

    upper = [[(ONE, False)] * n for _ in range(n)]
    kind = [["cap"] * n for _ in range(n)]  # input edge kind backing upper[i][j]
    for i in range(n):
        upper[i][i] = (ZERO, False)

    def tighten(a, b, bound, k):
        i, j = idx[a], idx[b]
        if _upper_stronger(bound, upper[i][j]):
            upper[i][j] = upper[j][i] = bound
            kind[i][j] = kind[j][i] = k

    for (a, b), v in c.exact.items():
        tighten(a, b, (v, False), "exact")
    for (a, b), (v, s) in c.upper.items():
        tighten(a, b, (v, s), "upper")

    base = [row.copy() for row in upper]  # input edges, for chain reconstruction
    via = [[None] * n for _ in range(n)]
    closed = upper
    for k in range(n):
        rk = closed[k]
        for i in range(n):
            uik = closed[i][k]
            row = closed[i]
            for j in range(n):
                cand = (uik[0] + rk[j][0], uik[1] or rk[j][1])
                if _upper_stronger(cand, row[j]):
                    row[j] = cand
                    via[i][j] = k

    def chain_of(i, j) -> list[int]:
        k = via[i][j]
        if k is None:
            return [i, j]
        return chain_of(i, k)[:-1] + chain_of(k, j)

    def requirement(i, j):
        """Strongest lower-side requirement on pair (i, j) with its kind."""
        a, b = pts[i], pts[j]
        key = _pair(a, b)
        best = (ZERO, True, "positivity")
        if key in c.lower:
            v, s = c.lower[key]
            if _lower_stronger((v, s), best[:2]):
                best = (v, s, "lower")
        if key in c.exact:
            v = c.exact[key]
            if _lower_stronger((v, False), best[:2]):
                best = (v, False, "exact")
        return best

    for i, j in itertools.combinations(range(n), 2):
        lo, lo_strict, lo_kind = requirement(i, j)
        up, up_strict = closed[i][j]
        if lo < up or (lo == up and not lo_strict and not up_strict):
            continue
        chain = chain_of(i, j)
        bounds = []
        for x, y in zip(chain, chain[1:]):
            v, s = base[x][y]
            bounds.append((v, s, kind[x][y]))
        return Infeasible(
            pair=(pts[i], pts[j]), bound=lo, bound_strict=lo_strict,
            kind=lo_kind, chain=[pts[x] for x in chain], chain_bounds=bounds)

    # Witness.  delta = 1/(4*(n-1)*L) keeps every tightened comparison on the
    # safe side of the 1/L input lattice (path sums stay on the lattice).
    denoms = [1]
    for v in c.exact.values():
        denoms.append(v.denominator)
    for v, _ in c.lower.values():
        denoms.append(v.denominator)
    for v, _ in c.upper.values():
        denoms.append(v.denominator)
    delta = Fraction(1, 4 * max(n - 1, 1) * lcm(*denoms))

    tight = [[(ONE, False)] * n for _ in range(n)]
    for i in range(n):
        tight[i][i] = (ZERO, False)

    def tighten2(a, b, v):
        i, j = idx[a], idx[b]
        if v < tight[i][j][0]:
            tight[i][j] = tight[j][i] = (v, False)

    for (a, b), v in c.exact.items():
        tighten2(a, b, v)
    for (a, b), (v, s) in c.upper.items():
        tighten2(a, b, v - delta if s else v)

    for k in range(n):
        for i in range(n):
            uik = tight[i][k][0]
            for j in range(n):
                cand = uik + tight[k][j][0]
                if cand < tight[i][j][0]:
                    tight[i][j] = tight[j][i] = (cand, False)

    witness: dict[tuple[int, int], Fraction] = {}
    for i, j in itertools.combinations(range(n), 2):
        w = tight[i][j][0]
        lo, lo_strict, _ = requirement(i, j)
        need = lo + delta if lo_strict else lo
        if w < need:  # proven unreachable; guards against solver bugs
            raise RuntimeError("tightened witness lost a lower bound")
        witness[_pair(pts[i], pts[j])] = w
    return Feasible(witness)


def check_witness(c: PartialConstraintSet, witness: dict) -> None:
    """Independent re-verification of a feasibility witness; raises on failure."""
    pts = list(c.points)
    for a, b in itertools.combinations(pts, 2):
        v = witness[_pair(a, b)]
        if not 0 < v <= 1:
            raise AssertionError(f"witness d({a},{b}) = {v} outside (0, 1]")
    for a, b, x in itertools.permutations(pts, 3):
        if a < b:
            if witness[_pair(a, b)] > witness[_pair(a, x)] + witness[_pair(x, b)]:
                raise AssertionError(f"witness triangle violated on ({a},{b}) via {x}")
    for (a, b), v in c.exact.items():
        if witness[_pair(a, b)] != v:
            raise AssertionError(f"witness misses exact d({a},{b}) = {v}")
    for (a, b), (v, s) in c.lower.items():
        w = witness[_pair(a, b)]
        if w < v or (s and w == v):
            raise AssertionError(f"witness violates lower bound on ({a},{b})")
    for (a, b), (v, s) in c.upper.items():
        w = witness[_pair(a, b)]
        if w > v or (s and w == v):
            raise AssertionError(f"witness violates upper bound on ({a},{b})")


def check_certificate(c: PartialConstraintSet, cert: Infeasible) -> None:
    """Re-verify an infeasibility chain against the instance; raises on failure."""
    a, b = cert.pair
    if cert.chain[0] != a or cert.chain[-1] != b:
        raise AssertionError("chain endpoints do not match the violated pair")
    total, total_strict = ZERO, False
    for (x, y), (v, s, k) in zip(zip(cert.chain, cert.chain[1:]), cert.chain_bounds):
        key = _pair(x, y)
        if k == "cap":
            if v != 1 or s:
                raise AssertionError("cap edge must be a non-strict 1")
        elif k == "exact":
            if c.exact.get(key) != v or s:
                raise AssertionError(f"exact edge {key} not in the instance")
        elif k == "upper":
            if c.upper.get(key) != (v, s):
                raise AssertionError(f"upper edge {key} not in the instance")
        else:
            raise AssertionError(f"unknown edge kind {k!r}")
        total += v
        total_strict = total_strict or s
    if cert.kind == "positivity":
        req, req_strict = ZERO, True
        if cert.bound != 0:
            raise AssertionError("positivity bound must be 0")
    elif cert.kind == "lower":
        req, req_strict = c.lower[_pair(a, b)]
        if (req, req_strict) != (cert.bound, cert.bound_strict):
            raise AssertionError("stated lower bound not in the instance")
    elif cert.kind == "exact":
        if c.exact.get(_pair(a, b)) != cert.bound or cert.bound_strict:
            raise AssertionError("stated exact bound not in the instance")
        req, req_strict = cert.bound, False
    else:
        raise AssertionError(f"unknown requirement kind {cert.kind!r}")
    # the chain caps d(a,b) at (total, total_strict); the requirement must
    # make that interval empty
    if req < total or (req == total and not req_strict and not total_strict):
        raise AssertionError("chain does not contradict the requirement")


# --- canonical universal prefix ----------------------------------------------


def stage_params(t: int) -> tuple[int, int]:
    """Stage t >= 0 of the canonical schedule -> (max subset size, denom bound).

    Stages group by denominator bound B = 2, 4, 8, ... with odd subset-size
    caps 1, 3, ..., 2*log2(B) - 1 inside each group:
    (1,2), (1,4), (3,4), (1,8), (3,8), (5,8), (1,16), ...
    """
    if t < 0:
        raise UsageError("negative stage")
    e = 1
    start = 0
    while start + e <= t:
        start += e
        e += 1
    return 2 * (t - start) + 1, 2 ** e


def denom_values(bound: int) -> list[Fraction]:
    """All rationals in (0, 1] with denominator <= bound, ascending."""
    vals = {Fraction(p, q) for q in range(1, bound + 1) for p in range(1, q + 1)}
    return sorted(vals)


@dataclass
class QUPrefix:
    """Finite prefix of the canonical universal rational metric space.

    space grows only by schedule items (and targeted isometry extensions);
    (stage, pos) is the replayable schedule cursor, snapshots[t] the space
    size when stage t started.
    """
    space: FinMetric = field(default_factory=FinMetric)
    stage: int = 0
    pos: int = 0
    snapshots: list[int] = field(default_factory=lambda: [0])

    @property
    def denom_bound(self) -> int:
        """Largest denominator realized among distances so far."""
        best = 1
        for b in self.space.points:
            for a in range(b):
                best = max(best, self.space.d(a, b).denominator)
        return best

    def copy(self) -> "QUPrefix":
        return QUPrefix(self.space.copy(), self.stage, self.pos, list(self.snapshots))

    def to_text(self) -> str:
        lines = [self.space.to_text().rstrip("\n")] if self.space.n else []
        for t, size in enumerate(self.snapshots):
            lines.append(f"snapshot {t} {size}")
        lines.append(f"cursor {self.stage} {self.pos}")
        return "\n".join(line for line in lines if line) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "QUPrefix":
        ids, dists, extra = _parse_point_dist_lines(text, allow_extra=True)
        space = _metric_from_parsed(ids, dists)
        snapshots: dict[int, int] = {}
        cursor = None
        for ln, parts in extra:
            if parts[0] == "snapshot" and len(parts) == 3:
                snapshots[_parse_id(parts[1], ln)] = _parse_id(parts[2], ln)
            elif parts[0] == "cursor" and len(parts) == 3:
                cursor = (_parse_id(parts[1], ln), _parse_id(parts[2], ln))
            else:
                raise UsageError(f"line {ln}: unknown directive {parts[0]!r}")
        if cursor is None:
            raise UsageError("prefix file lacks a cursor line")
        if sorted(snapshots) != list(range(len(snapshots))):
            raise UsageError("snapshot stages must be 0..t")
        stage, pos = cursor
        if len(snapshots) != stage + 1:
            raise UsageError("snapshot count does not match cursor stage")
        snaps = [snapshots[t] for t in range(len(snapshots))]
        if any(s > space.n for s in snaps):
            raise UsageError("snapshot larger than the space")
        return cls(space, stage, pos, snaps)


def _extension_types(space: FinMetric, anchors: tuple[int, ...],
                     values: list[Fraction]):
    """Admissible distance vectors over the anchor tuple, lex order."""
    k = len(anchors)
    if k == 0:
        yield ()
        return
    dmat = [[space.d(a, b) for b in anchors] for a in anchors]
    picked: list[Fraction] = []

    def rec(i: int):
        if i == k:
            yield tuple(picked)
            return
        for v in values:
            ok = True
            for j in range(i):
                dij = dmat[i][j]
                if abs(v - picked[j]) > dij or v + picked[j] < dij:
                    ok = False
                    break
            if ok:
                picked.append(v)
                yield from rec(i + 1)
                picked.pop()

    yield from rec(0)


def _stage_items(space: FinMetric, snapshot: int, k: int, bound: int):
    """Schedule items of one stage: (anchor subset, admissible type) pairs,
    subsets of the stage-start snapshot by (size, lex), types by lex."""
    values = denom_values(bound)
    for size in range(0, k + 1):
        for anchors in itertools.combinations(range(snapshot), size):
            for typ in _extension_types(space, anchors, values):
                yield anchors, typ


def _realized(space: FinMetric, anchors: tuple[int, ...],
              typ: tuple[Fraction, ...]) -> bool:
    if not anchors:
        return space.n > 0
    for p in space.points:
        for a, v in zip(anchors, typ):
            if space.d(p, a) != v:
                break
        else:
            return True
    return False


def _append_extension(space: FinMetric, anchors: tuple[int, ...],
                      typ: tuple[Fraction, ...]) -> int:
    """Append a point at the given anchor distances; remaining distances take
    the one-point amalgam completion min(1, min_a(r_a + d(a, z)))."""
    assigned = dict(zip(anchors, typ))
    dists = []
    for z in space.points:
        if z in assigned:
            dists.append(assigned[z])
        elif not anchors:
            dists.append(ONE)
        else:
            v = min(r + space.d(a, z) for a, r in assigned.items())
            dists.append(v if v < 1 else ONE)
    return space.append_point(dists)


def append_point_completion(space: FinMetric, known: dict[int, Fraction]) -> int:
    """Append a point with pinned distances to some anchors, completing the rest.

    known maps anchor ids to distances in (0, 1].  Distances to points not in
    known take the largest 1-Lipschitz fill min(1, min_a(r_a + d(a, z))).
    Returns the new point's id.  Inadmissible pins are a precondition error.
    """
    anchors = tuple(sorted(known))
    for a in anchors:
        if a not in space.points:
            raise UsageError(f"anchor {a} not in the space")
    typ = tuple(known[a] for a in anchors)
    for a, v in zip(anchors, typ):
        if v == 0:
            raise PreconditionError(f"distance 0 to {a} would duplicate it")
        if not 0 < v <= 1:
            raise UsageError(f"distance {v} to {a} outside (0, 1]")
    if not _admissible_over(space, anchors, typ):
        raise PreconditionError("pinned distances violate a triangle bound")
    return _append_extension(space, anchors, typ)


def qu_extend(prefix: QUPrefix, steps: int) -> QUPrefix:
    """Advance the canonical schedule by the given number of items.

    Each item is one (subset, admissible extension type) pair: it is skipped
    if some existing point already realizes the type, else realized by
    appending a new point.  Pure: the input prefix is not modified.
    Replaying any number of steps from the empty prefix is fully
    deterministic, and extending in chunks equals extending at once.
    """
    if steps < 0:
        raise UsageError("steps must be >= 0")
    out = prefix.copy()
    space = out.space
    remaining = steps
    while remaining > 0:
        k, bound = stage_params(out.stage)
        items = itertools.islice(
            _stage_items(space, out.snapshots[out.stage], k, bound),
            out.pos, None)
        while remaining > 0:
            nxt = next(items, None)
            if nxt is None:  # stage exhausted: roll to the next one
                out.stage += 1
                out.pos = 0
                out.snapshots.append(space.n)
                break
            anchors, typ = nxt
            if not _realized(space, anchors, typ):
                _append_extension(space, anchors, typ)
            out.pos += 1
            remaining -= 1
    return out


def qu_complete_stage(prefix: QUPrefix, through_stage: int) -> QUPrefix:
    """Extend until the cursor sits at the start of stage through_stage + 1."""
    out = prefix.copy()
    while out.stage <= through_stage:
        k, bound = stage_params(out.stage)
        total = sum(1 for _ in _stage_items(
            out.space, out.snapshots[out.stage], k, bound))
        if total > out.pos:
            out = qu_extend(out, total - out.pos)
        if out.stage <= through_stage:
            out.stage += 1
            out.pos = 0
            out.snapshots.append(out.space.n)
    return out


# --- partial isometries ------------------------------------------------------


@dataclass
class PartialIsometry:
    """Finite distance-preserving injection between point sets of one space."""
    pairs: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def identity(cls, ids) -> "PartialIsometry":
        return cls([(i, i) for i in ids])

    @property
    def sources(self) -> list[int]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[int]:
        return [t for _, t in self.pairs]

    def defined_on(self, x: int) -> bool:
        return any(s == x for s, _ in self.pairs)

    def apply(self, x: int) -> int:
        for s, t in self.pairs:
            if s == x:
                return t
        raise PreconditionError(f"isometry undefined on point {x}")

    def apply_tuple(self, xs) -> tuple[int, ...]:
        return tuple(self.apply(x) for x in xs)

    def inverse(self) -> "PartialIsometry":
        return PartialIsometry([(t, s) for s, t in self.pairs])

    def compose(self, other: "PartialIsometry") -> "PartialIsometry":
        """self after other, on the sources where the composite is defined."""
        pairs = []
        for s, t in other.pairs:
            if self.defined_on(t):
                pairs.append((s, self.apply(t)))
        return PartialIsometry(pairs)

    def extend(self, source: int, target: int) -> "PartialIsometry":
        return PartialIsometry(self.pairs + [(source, target)])

    def validate(self, space: FinMetric) -> None:
        srcs, tgts = self.sources, self.targets
        if len(set(srcs)) != len(srcs) or len(set(tgts)) != len(tgts):
            raise PreconditionError("isometry must be injective")
        for (s1, t1), (s2, t2) in itertools.combinations(self.pairs, 2):
            if space.d(s1, s2) != space.d(t1, t2):
                raise PreconditionError(
                    f"not distance-preserving on ({s1},{s2}) -> ({t1},{t2})")

    def to_text(self) -> str:
        return "".join(f"pair {s} {t}\n" for s, t in self.pairs)

    @classmethod
    def from_text(cls, text: str) -> "PartialIsometry":
        pairs = []
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] != "pair" or len(parts) != 3:
                raise UsageError(f"line {ln}: expected 'pair <src> <tgt>'")
            pairs.append((_parse_id(parts[1], ln), _parse_id(parts[2], ln)))
        return cls(pairs)


def extend_partial_isometry(prefix: QUPrefix, gamma: PartialIsometry,
                            new_sources) -> tuple[QUPrefix, PartialIsometry]:
    """Extend gamma over the new source points, one at a time.

    Each source takes the smallest existing point realizing the mirrored
    distance vector over gamma's targets; if none exists a targeted point is
    appended (this grows the space outside the schedule, recorded in the
    returned prefix).  The input prefix and gamma are not modified.
    """
    gamma.validate(prefix.space)
    out = prefix.copy()
    g = PartialIsometry(list(gamma.pairs))
    for c in new_sources:
        if c not in out.space.points:
            raise UsageError(f"unknown source point {c}")
        if g.defined_on(c):
            continue
        anchors = tuple(g.targets)
        values = tuple(out.space.d(c, s) for s in g.sources)
        target = None
        for p in out.space.points:
            if all(out.space.d(p, a) == v for a, v in zip(anchors, values)):
                target = p
                break
        if target is None:
            target = _append_extension(out.space, anchors, values)
        g = g.extend(c, target)
    g.validate(out.space)
    return out, g

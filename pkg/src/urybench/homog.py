"""Approximate back-and-forth maps and finite homogeneity audits.

Plays the alternating extension game between two tuples of a universal
rational metric prefix, with an exact per-stage tolerance ledger, and
builds two batch experiments on top of it: an exhaustive near-homogeneity
audit over small tuples, and a finite covering/extension check for a
proposed family of closed conditions.
"""

import itertools
from dataclasses import dataclass
from fractions import Fraction

from .errors import PreconditionError, UsageError
from .logic import (FinStructure, eval_formula, format_formula, free_vars,
                    lipschitz_extend)
from .metric import (PartialIsometry, QUPrefix, append_point_completion,
                     extend_partial_isometry, qu_extend)
from .rat import ZERO, Rat01, check_rat01, format_rat


class Stuck(RuntimeError):
    """A stage found no admissible image within its tolerance."""

    def __init__(self, stage: int, obstruction: str):
        self.stage = stage
        self.obstruction = obstruction
        super().__init__(f"stage {stage}: {obstruction}")


def stage_budget(eps: Rat01, steps: int) -> tuple[Fraction, ...]:
    """Stage tolerances eps/2^(k+3) for k = 1..steps; they sum below eps/8."""
    check_rat01(eps)
    if steps < 0:
        raise UsageError("steps must be >= 0")
    return tuple(eps / 2 ** (k + 3) for k in range(1, steps + 1))


@dataclass
class BackForthState:
    """Final position of one alternating extension run."""
    stage: int
    cbar: tuple[int, ...]
    dbar: tuple[int, ...]
    alpha: PartialIsometry
    budget: tuple[Fraction, ...]
    prefix: QUPrefix


@dataclass
class DriftCertificate:
    """Exact movement ledger for the c-side coordinates.

    per_coord[j] is the distance between the j-th c-side coordinate at the
    end of the run and its starting position; bound is the sum of all stage
    tolerances.  lines holds the per-stage report.
    """
    per_coord: tuple[Fraction, ...]
    bound: Fraction
    lines: tuple[str, ...]

    def verified(self) -> bool:
        return all(v <= self.bound for v in self.per_coord)


def _atom_positions(arity: int, k: int, touching=None):
    for pos in itertools.product(range(k), repeat=arity):
        if touching is None or touching in pos:
            yield pos


def _atom_gap(ext: FinStructure, left, right, tol: Fraction, touching=None):
    """First atom whose values across the two sides differ by more than tol.

    Scans every relation over every position tuple (restricted to tuples
    containing the index `touching` when given); returns (name, positions,
    gap) or None.
    """
    for spec in ext.sig.relations:
        for pos in _atom_positions(spec.arity, len(left), touching):
            lv = ext.value(spec.name, tuple(left[p] for p in pos))
            rv = ext.value(spec.name, tuple(right[p] for p in pos))
            if abs(lv - rv) > tol:
                return spec.name, pos, abs(lv - rv)
    return None


def _lowest_unused(work: QUPrefix, used) -> tuple[QUPrefix, int]:
    # fairness target: smallest id missing from the side, growing the
    # schedule when the side already exhausts the prefix
    used_set = set(used)
    while True:
        for p in work.space.points:
            if p not in used_set:
                return work, p
        work = qu_extend(work, 4)


def _mirror_extend(work: QUPrefix, g: PartialIsometry, z: int,
                   M, tol: Fraction, stage: int):
    """Extend g over z by an exact metric mirror.

    Without a structure overlay this is plain isometry extension.  With one,
    a candidate image must also agree with z on every relation atom touching
    the new coordinate, within tol; candidates are the existing exact
    mirrors in point order, then one freshly completed point.
    """
    if M is None:
        work2, g2 = extend_partial_isometry(work, g, [z])
        return work2, g2, g2.apply(z)
    anchors = tuple(g.targets)
    values = tuple(work.space.d(z, s) for s in g.sources)
    left = list(g.sources) + [z]
    new_at = len(left) - 1
    ext = lipschitz_extend(M, work.space)
    for p in work.space.points:
        if any(work.space.d(p, a) != v for a, v in zip(anchors, values)):
            continue
        if _atom_gap(ext, left, list(g.targets) + [p], tol, new_at) is None:
            g2 = g.extend(z, p)
            g2.validate(work.space)
            return work, g2, p
    work2 = work.copy()
    w = append_point_completion(work2.space, dict(zip(anchors, values)))
    ext2 = lipschitz_extend(M, work2.space)
    if _atom_gap(ext2, left, list(g.targets) + [w], tol, new_at) is None:
        g2 = g.extend(z, w)
        g2.validate(work2.space)
        return work2, g2, w
    raise Stuck(stage, f"no admissible image for point {z} within "
                       f"tolerance {format_rat(tol)}")


def back_and_forth(prefix: QUPrefix, abar, bbar, eps: Rat01, steps: int,
                   M: FinStructure = None):
    """Alternately extend a partial isometry matching abar to bbar.

    Odd stages adjoin the lowest unused prefix point to the d side and pull
    it back, even stages adjoin to the c side and push forward; each new
    point is mirrored exactly on the metric, reusing an existing point when
    one fits and appending a targeted one otherwise, so the prefix may grow.
    When M (a structure on an initial metric segment of the prefix) is
    given, its tables extend 1-Lipschitz-tightest to the whole prefix and
    every relation atom touching the new coordinate must agree across the
    sides within the stage tolerance; running out of candidates raises
    Stuck.  Placed coordinates never move, so the certificate drift is zero
    at every index; it is still computed from the final state, not assumed.

    Returns (BackForthState, DriftCertificate).
    """
    abar = tuple(abar)
    bbar = tuple(bbar)
    if len(abar) != len(bbar):
        raise PreconditionError("tuples must have equal length")
    budget = stage_budget(eps, steps)
    space = prefix.space
    for p in abar + bbar:
        if p not in space.points:
            raise UsageError(f"unknown point {p}")
    m = len(abar)
    for i in range(m):
        for j in range(i):
            if space.d(abar[i], abar[j]) != space.d(bbar[i], bbar[j]):
                raise PreconditionError(
                    f"metric diagrams differ on coordinates {j},{i}")
    if M is not None:
        if M.space.n > space.n:
            raise PreconditionError("structure carrier exceeds the prefix")
        for b in M.space.points:
            for a in range(b):
                if M.space.d(a, b) != space.d(a, b):
                    raise PreconditionError(
                        "structure space is not a metric prefix of the space")
        ext = lipschitz_extend(M, space)
        bad = _atom_gap(ext, abar, bbar, eps)
        if bad is not None:
            name, pos, gap = bad
            args = ",".join(str(i) for i in pos)
            raise PreconditionError(
                f"tuples disagree on atom {name}({args}) by "
                f"{format_rat(gap)} > {format_rat(eps)}")

    work = prefix.copy()
    cbar = list(abar)
    dbar = list(bbar)
    alpha = PartialIsometry(list(dict.fromkeys(zip(cbar, dbar))))
    alpha.validate(work.space)
    lines = []
    for l in range(1, steps + 1):
        tol = budget[l - 1]
        if l % 2 == 0:
            work, z = _lowest_unused(work, cbar)
            work, alpha, w = _mirror_extend(work, alpha, z, M, tol, l)
            cbar.append(z)
            dbar.append(w)
            side = "c"
        else:
            work, z = _lowest_unused(work, dbar)
            work, inv, w = _mirror_extend(work, alpha.inverse(), z, M, tol, l)
            alpha = inv.inverse()
            cbar.append(w)
            dbar.append(z)
            side = "d"
        lines.append(f"stage {l} side {side} drift {format_rat(ZERO)} "
                     f"tol {format_rat(tol)}")
    state = BackForthState(steps, tuple(cbar), tuple(dbar), alpha, budget,
                           work)
    per = tuple(work.space.d(c, a) for c, a in zip(cbar, abar))
    cert = DriftCertificate(per, sum(budget, ZERO), tuple(lines))
    return state, cert


@dataclass
class HomogReport:
    """Batch outcome of the tuple-pair audit."""
    total: int
    successes: int
    failures: tuple
    max_drift: Fraction
    bound: Fraction
    lines: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def approx_homog_test(prefix: QUPrefix, n: int, eps: Rat01,
                      denom_bound: int) -> HomogReport:
    """Play the extension game over every admissible ordered tuple pair.

    Admissible tuples are the n-tuples over the prefix whose internal
    distances all have denominator at most denom_bound; they are grouped by
    equal metric diagrams and every ordered pair inside a group is played
    for four stages.  A pair succeeds when no stage gets stuck and the
    drift certificate verifies.
    """
    if prefix.space.n == 0:
        raise PreconditionError("prefix must be nonempty")
    if n < 1:
        raise UsageError("tuple length must be >= 1")
    if denom_bound < 1:
        raise UsageError("denominator bound must be >= 1")
    bound = sum(stage_budget(eps, 4), ZERO)
    groups: dict = {}
    for tup in itertools.product(prefix.space.points, repeat=n):
        diagram = tuple(prefix.space.d(tup[i], tup[j])
                        for i in range(n) for j in range(i))
        if any(v.denominator > denom_bound for v in diagram):
            continue
        groups.setdefault(diagram, []).append(tup)
    total = successes = 0
    failures = []
    worst = ZERO
    for members in groups.values():
        for abar in members:
            for bbar in members:
                total += 1
                try:
                    _, cert = back_and_forth(prefix, abar, bbar, eps, 4)
                except Stuck as s:
                    failures.append((abar, bbar,
                                     f"stage {s.stage}: {s.obstruction}"))
                    continue
                drift = max(cert.per_coord) if cert.per_coord else ZERO
                worst = max(worst, drift)
                if cert.verified():
                    successes += 1
                else:
                    failures.append((abar, bbar, "drift above the budget"))
    lines = [f"pairs {total} successes {successes} failures {len(failures)} "
             f"max-drift {format_rat(worst)} bound {format_rat(bound)}"]
    for abar, bbar, why in failures:
        lines.append(f"fail {abar} -> {bbar}: {why}")
    return HomogReport(total, successes, tuple(failures), worst, bound,
                       tuple(lines))


def _bind_positions(f, tup):
    """Assignment sending variable x<k> to tup[k-1]."""
    asg = {}
    for name in free_vars(f):
        if len(name) < 2 or name[0] != "x" or not name[1:].isdigit():
            raise UsageError(
                f"variable {name!r} is not positional (want x1, x2, ...)")
        k = int(name[1:])
        if not 1 <= k <= len(tup):
            raise UsageError(
                f"variable {name!r} exceeds the tuple length {len(tup)}")
        asg[name] = tup[k - 1]
    return asg


@dataclass
class SCReport:
    """Outcome of the covering/extension check."""
    ok: bool
    clause: str = ""
    index: int = -1
    abar: tuple = ()
    cbar: tuple = ()
    delta: tuple = ()
    lines: tuple = ()


def sc_check(M: FinStructure, n: int, eps: Rat01, family,
             deltas) -> SCReport:
    """Check a proposed condition family for covering and extension.

    family lists (witness tuple, formula, threshold) entries over variables
    x1..xn; deltas maps a family index to a pool of formulas over
    x1..x<n+1>.  The check fails when some family witness misses its own
    condition ("family"), when some n-tuple of the carrier satisfies no
    condition ("cover"), or when for some condition i, some n-tuple abar
    satisfying it and some (n+1)-tuple cbar whose first n coordinates
    satisfy it, no (n+1)-tuple bbar stays within eps of abar coordinatewise
    on the first n positions while zeroing every pool formula that vanishes
    at cbar ("extend").  Enlarging a pool can only flip the verdict from
    pass to fail: it grows the vanishing set at each cbar and with it the
    witness obligations.
    """
    if n < 1:
        raise UsageError("tuple length must be >= 1")
    check_rat01(eps)
    if M.space.n == 0:
        raise PreconditionError("carrier must be nonempty")
    M.check()
    fam = []
    for i, entry in enumerate(family):
        ab, phi, dl = entry
        ab = tuple(ab)
        if len(ab) != n:
            raise UsageError(
                f"family witness {i} has length {len(ab)}, want {n}")
        for p in ab:
            if p not in M.space.points:
                raise UsageError(f"unknown point {p} in family witness {i}")
        dl = Fraction(dl)
        if dl < 0:
            raise UsageError("thresholds must be >= 0")
        _bind_positions(phi, tuple(range(n)))
        fam.append((ab, phi, dl))
    pools = {}
    for i in range(len(fam)):
        pool = list(deltas.get(i, ()))
        for f in pool:
            _bind_positions(f, tuple(range(n + 1)))
        pools[i] = pool

    memo = {}

    def val(key, f, tup):
        if (key, tup) not in memo:
            memo[(key, tup)] = eval_formula(M, f, _bind_positions(f, tup))
        return memo[(key, tup)]

    for i, (ab, phi, dl) in enumerate(fam):
        if val(("phi", i), phi, ab) > dl:
            return SCReport(False, "family", i, ab, (), (), (
                f"family: witness {ab} misses condition {i}",))

    pts = list(M.space.points)
    sat: dict = {}
    for ab in itertools.product(pts, repeat=n):
        hits = [i for i, (_, phi, dl) in enumerate(fam)
                if val(("phi", i), phi, ab) <= dl]
        if not hits:
            return SCReport(False, "cover", -1, ab, (), (), (
                f"cover: tuple {ab} satisfies no condition",))
        sat[ab] = hits

    cases = 0
    for i in range(len(fam)):
        pool = pools[i]
        holders = [ab for ab, hits in sat.items() if i in hits]
        settled: dict = {}
        for cb in itertools.product(pts, repeat=n + 1):
            if i not in sat[cb[:n]]:
                continue
            mask = tuple(j for j, f in enumerate(pool)
                         if val(("pool", i, j), f, cb) == 0)
            done = settled.setdefault(mask, set())
            need = [(("pool", i, j), pool[j]) for j in mask]
            for ab in holders:
                if ab in done:
                    continue
                if _extension_witness(M, pts, ab, need, eps, n, val):
                    done.add(ab)
                    cases += 1
                    continue
                delta = tuple(pool[j] for j in mask)
                shown = ", ".join(format_formula(f) for f in delta)
                return SCReport(False, "extend", i, ab, cb, delta, (
                    f"extend: condition {i}, tuple {ab}, context {cb}, "
                    f"vanishing pool [{shown}]",))
    return SCReport(True, lines=(
        f"cover ok on {len(sat)} tuples; extension ok on {cases} cases",))


def _extension_witness(M, pts, ab, need, eps, n, val):
    for b in itertools.product(pts, repeat=n + 1):
        if any(M.space.d(ab[j], b[j]) > eps for j in range(n)):
            continue
        if all(val(key, f, b) == 0 for key, f in need):
            return True
    return False

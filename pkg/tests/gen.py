"""Seeded random generators shared by the test modules."""

import itertools
import random
from fractions import Fraction

from urybench.logic import (
    Atom, Const, D, FinStructure, Half, Inf, Max, Min, Neg, Pt, RelSpec,
    Signature, Sup, TAdd, TMul, TSub, AbsDiff, Var,
)
from urybench.metric import FinMetric

EIGHTHS = [Fraction(k, 8) for k in range(9)]
POS_EIGHTHS = [Fraction(k, 8) for k in range(1, 9)]


def random_metric(rng: random.Random, n: int) -> FinMetric:
    """Random n-point rational metric: random positive weights closed
    under shortest paths."""
    w = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            w[i][j] = w[j][i] = rng.choice(POS_EIGHTHS)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if w[i][k] + w[k][j] < w[i][j]:
                    w[i][j] = w[i][k] + w[k][j]
    m = FinMetric()
    for i in range(n):
        m.append_point([w[i][j] for j in range(i)])
    return m


def prefix_metric(m: FinMetric, k: int) -> FinMetric:
    out = FinMetric()
    for i in range(k):
        out.append_point([m.d(i, j) for j in range(i)])
    return out


def random_structure(rng: random.Random, space: FinMetric,
                     sig: Signature) -> FinStructure:
    """Random tables satisfying each relation's modulus.

    Each table is a minimum of a few randomly-centered Lipschitz cones
    v + coeff * d(., c), capped at 1; minima of coeff-Lipschitz maps are
    coeff-Lipschitz, so the invariant holds by construction.
    """
    n = space.n
    tables = {}
    for spec in sig.relations:
        tuples = list(itertools.product(range(n), repeat=spec.arity))
        centers = [(rng.choice(tuples), rng.choice(EIGHTHS))
                   for _ in range(3)]
        tables[spec.name] = {
            tup: min(Fraction(1),
                     min(v + spec.coeff * space.tuple_dist(tup, c)
                         for c, v in centers))
            for tup in tuples}
    return FinStructure(sig, space.copy(), tables)


def default_sig() -> Signature:
    return Signature([RelSpec("R", 1, Fraction(1)),
                      RelSpec("S", 2, Fraction(2))])


def random_formula(rng: random.Random, sig: Signature, free_vars,
                   depth: int, n_points: int = 0,
                   allow_quantifiers: bool = True):
    """Random AST whose free variables all come from free_vars."""

    def term(scope):
        if not scope or (n_points and rng.random() < 0.15):
            return Pt(rng.randrange(n_points))
        return Var(rng.choice(scope))

    def leaf(scope):
        if (not scope and not n_points) or rng.random() < 0.25:
            return Const(rng.choice(EIGHTHS))
        if rng.random() < 0.4:
            return D(term(scope), term(scope))
        spec = rng.choice(sig.relations)
        return Atom(spec.name, tuple(term(scope)
                                     for _ in range(spec.arity)))

    counter = itertools.count()

    def go(scope, budget):
        if budget == 0 or rng.random() < 0.2:
            return leaf(scope)
        kind = rng.randrange(9 if allow_quantifiers else 7)
        if kind == 0:
            return Neg(go(scope, budget - 1))
        if kind == 1:
            return Half(go(scope, budget - 1))
        if kind == 2:
            return TMul(rng.choice([Fraction(1, 2), Fraction(2),
                                    Fraction(3, 2), Fraction(3)]),
                        go(scope, budget - 1))
        if kind == 3:
            return TSub(go(scope, budget - 1), go(scope, budget - 1))
        if kind == 4:
            return TAdd(go(scope, budget - 1), go(scope, budget - 1))
        if kind == 5:
            return AbsDiff(go(scope, budget - 1), go(scope, budget - 1))
        if kind == 6:
            subs = tuple(go(scope, budget - 1)
                         for _ in range(rng.randrange(2, 4)))
            return Min(subs) if rng.random() < 0.5 else Max(subs)
        v = f"q{next(counter)}"
        body = go(scope + [v], budget - 1)
        return Sup(v, body) if kind == 7 else Inf(v, body)

    return go(list(free_vars), depth)

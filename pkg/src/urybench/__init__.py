"""Exact-arithmetic workbench for continuous logic over a canonical
countable metric universe: finite rational metric spaces, an incrementally
built universal homogeneous space, [0,1]-valued formulas with inverse
continuity moduli, sequence-metric cones, grey coset codes, and approximate
back-and-forth checks."""

__version__ = "0.1.0"

"""Shared numerical tolerance.

Gromov products are differences of path sums, so exact float equality is only
meaningful on rational fixtures.  Every comparison between derived metric
quantities in this package goes through ``EPS`` unless a caller overrides it.
"""

EPS = 1e-9

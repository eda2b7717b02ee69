"""Numerical laboratory for multivalued Dirichlet energy minimizers.

Subpackages: qspace (multiset metric), targets, lattice, solver, monotone
(mollified energy), strata (quantitative symmetry and coverings), betareif
(flatness numbers and Reifenberg checks), jacobi (branched double cover and
torus uniformization), scenarios + cli (experiment pipelines).
"""

__version__ = "0.1.0"

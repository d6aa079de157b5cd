"""heatker: heat-kernel coefficients E_m for second-order minimal and
nonminimal differential operators on curved manifolds with torsion and
gauge fields, computed by exact symbolic tensor calculus.

The pipeline is organized as:

    expr      abstract-index tensor expressions, canonical forms,
              exact scalar coefficients
    rewrite   covariant-derivative reordering (Ricci identity with
              torsion), Bianchi/cyclic simplification passes
    colim     coincidence limits of the phase and transport functions
    sigma     resolvent-symbol recursion and its coincidence limit
    integrate closed-form momentum/contour integration (Gamma x
              hypergeometric coefficients)
    reduce    reduction of hypergeometric coefficients to elementary
              functions, linear-dependency elimination
    cli       command-line front end and pipeline orchestration

All arithmetic is exact (rationals, rational functions, transcendental
atoms); floating point appears only in cross-validation tests.
"""

__version__ = "0.1.0"

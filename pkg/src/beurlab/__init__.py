"""beurlab: a numerical laboratory for continuous Beurling prime systems.

Submodules:
    numcore     precision plumbing, root finding, quadrature, mod-2*pi reduction
    measures    measures on [1, oo): CDFs, Mellin-Stieltjes transforms, exp*
    systems     construction of the oscillation-carrying parameter sequences
    zeta        zeta evaluation and boundedness certificates
    saddles     saddle points, steepest-descent paths, phase accounting
    perron      Perron inversion over vertical and composite contours
    discretize  Bernoulli sampling into a discrete prime system + checks
    hyperbola   convolution-power reconstruction of N via the hyperbola method
"""

__version__ = "0.1.0"

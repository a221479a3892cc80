"""torusgas: a desk-scale laboratory for damped compressible barotropic flow.

The package simulates a regularised barotropic system on the periodic
torus (d = 1 or 2) and instruments every structural identity the scheme
is supposed to honour: mass and energy ledgers, transported weights,
logarithmic-kernel compactness functionals, effective-viscous-flux
identities, a pressure-localisation functional and a space-time
interpolation inequality.  Each analytic claim has a numerical check
with an explicit tolerance; nothing is taken on faith.
"""

__version__ = "0.1.0"

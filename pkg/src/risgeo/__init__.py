"""Coverage and rate analysis of cells assisted by randomly deployed reconfigurable surfaces.

Modules: ``numerics`` (linear algebra, quadrature, special functions, RNG
streams), ``geometry`` (point processes, LoS thinning), ``channel`` (path
loss, fading, antenna patterns, interference), ``phasectl`` (phase-shift
control), ``linkselect`` (SINR and surface selection), ``mcsim`` (Monte
Carlo engine), ``analytics`` (quadrature coverage model) and ``cli``.
"""

__version__ = "0.1.0"

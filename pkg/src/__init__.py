"""
Orbit Holography - quantum-orbit photoelectron momentum distributions
Strong-field approximation and Coulomb quantum-orbit engines for
elliptically polarized fields.
"""

__version__ = "1.0.0"
__author__ = "Orbit Holography Developers"

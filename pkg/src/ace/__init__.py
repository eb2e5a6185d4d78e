"""Primal-dual training of homotopic equivariant models.

Models are chains of equivariant layers perturbed by gamma-scaled
non-equivariant branches, trained under strict (equality) or resilient
(slack-relaxed) constraints on the gammas, with certified bound
evaluation for the approximation and equivariance errors.
"""

__version__ = "0.1.0"

"""Playing-style compatibility analysis for basketball lineups.

Shot-feature extraction, Wasserstein shooting-style clustering, fuzzy role
clustering, lineup pair features and a hierarchical Bayesian effect model.
"""

__version__ = "0.1.0"

"""Regional organization of folded layers from polarized light imaging.

Synthetic rolled-sheet phantom, PLI parameter maps, contrastive texture
features and classical baselines, depth sampling between paired surfaces,
PCA with confound regression, and k-means evaluation against band labels.
"""

__version__ = "0.1.0"

"""Quantitative-phase morphometry of cell nuclei from off-axis holograms.

Simulation of phantom nuclei, single-shot phase reconstruction, nucleus
segmentation, morphological features and unsupervised PCA organization.
"""

__version__ = "0.1.0"

"""Latent-class regression of CT intensity on multichannel MRI volumes.

The package estimates a scalar target volume (CT) from several covariate
volumes (MRI sequences) observed on the same voxel grid.  Voxels are
assigned to latent tissue classes, each carrying a joint Gaussian over
(target, covariates); the predicted target at a voxel is the posterior
mixture of class-conditional expectations given the covariates alone.

Three spatial models for the latent classes are provided:

* independent voxels (a Gaussian mixture, :mod:`pseudoct.gmm`),
* a Markov chain along a space-filling curve (:mod:`pseudoct.hmm`),
* a Markov random field on the voxel lattice (:mod:`pseudoct.hmrf`).

Supporting modules handle volume I/O, Hilbert-curve sequencing, synthetic
phantom generation, and evaluation (MAE, binned residuals, leave-one-out
cross-validation).
"""

from pseudoct.errors import DataError, NumericalError, PseudoCtError

__all__ = ["DataError", "NumericalError", "PseudoCtError"]

__version__ = "0.1.0"

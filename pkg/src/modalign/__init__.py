"""modalign: cross-modality image alignment by corner/homography regression.

The package is organized around the pipeline stages:

* :mod:`modalign.geometry` - exact projective-transform algebra
* :mod:`modalign.sampler` - grids, warping and differentiable bilinear sampling
* :mod:`modalign.datagen` - synthetic alignment-pair corpora plus manifest I/O
* :mod:`modalign.network` - the two-branch embedding + regression model
* :mod:`modalign.losses` - similarity / corner / homography objectives
* :mod:`modalign.trainer` - two-stage Adam training
* :mod:`modalign.evaluator` - corner-error statistics and reports
* :mod:`modalign.cli` - the ``modalign`` command-line entry point
"""

from . import (  # noqa: F401
    checkpoint,
    datagen,
    errors,
    evaluator,
    geometry,
    images,
    layers,
    losses,
    network,
    sampler,
    trainer,
)

__version__ = "0.1.0"

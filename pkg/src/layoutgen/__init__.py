"""Discrete-diffusion layout generation engine.

Subpackages cover the layout domain model (:mod:`layoutgen.core`), the forward
corruption machinery (:mod:`layoutgen.diffusion`), a small autodiff substrate
(:mod:`layoutgen.autodiff`, :mod:`layoutgen.optim`), the transformer denoiser
(:mod:`layoutgen.model`), training (:mod:`layoutgen.losses`,
:mod:`layoutgen.train`), task construction and decoding
(:mod:`layoutgen.tasks`, :mod:`layoutgen.decode`), quality metrics
(:mod:`layoutgen.metrics`), corpora (:mod:`layoutgen.data`), the command-line
entry point (:mod:`layoutgen.cli`), and the HTTP service
(:mod:`layoutgen.service`).
"""

__version__ = "0.1.0"

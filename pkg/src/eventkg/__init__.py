"""Latent representations for knowledge graphs and time-stamped event tensors.

Modules:

``tensor_store``     sparse KG and event tensors, slicing, vocabularies
``representations``  embedding tables and M-maps
``scoring``          RESCAL, multiway networks, likelihoods
``model``            the latent model and its parameter layout
``training``         costs, gradients, gradient checking, SGD
``prediction``       windowed prediction and KG/event co-evolution
``evaluation``       ranking and regression metrics, baselines, reports
``ingest``           event-log loading, splits, smoothing, lab bands
``checkpoint``       versioned model files
``synth``            seeded synthetic datasets
``experiments``      end-to-end protocols used by the acceptance tests
``cli``              the ``eventkg`` command
"""

__version__ = "0.1.0"

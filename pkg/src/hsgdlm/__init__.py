"""Sequential Bayesian volatility engine for panels of asset time series.

Each series' log realized variance is modelled by its own conjugate dynamic
linear model with multi-scale (HAR-style) regressors, coupled to the other
series through dynamically selected simultaneous parents.

Submodules are imported lazily so ``hsgdlm.cli`` can configure BLAS threads
before numpy loads.
"""

__version__ = "0.1.0"

"""Function-space priors (trace-class networks, Karhunen-Loeve expansions)
and dimension-robust MCMC for regression, groundwater flow and inverse
reinforcement learning."""

__version__ = "0.1.0"

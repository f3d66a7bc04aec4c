"""UKF process-noise auto-tuning with two-stage Bayesian optimisation."""

__version__ = "0.1.0"

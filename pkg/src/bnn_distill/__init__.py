"""Bayesian teacher posteriors via SGLD, distilled into single student networks.

Library layout:
    nn          dense ReLU nets, exact backprop, flat-parameter checkpoints
    objectives  likelihoods, priors, distillation losses and their gradients
    samplers    SGD / SGLD chains and an HMC reference sampler
    distill     the interleaved teacher/student loop and student-data generators
    evaluation  posterior-predictive wrappers and all reported metrics
    datasets    toy generators, CSV regression loader, IDX reader
    experiments config-driven experiment recipes behind the command line
"""

__version__ = "0.1.0"

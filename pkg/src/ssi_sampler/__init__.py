"""Training-free sampling with Langevin-estimated probability flows.

The sampler draws from an unnormalized density by integrating the
probability-flow ODE of the linear interpolant between ``N(0, I)`` and the
target. Its velocity field is estimated on the fly with Monte Carlo
Langevin chains on the denoising posterior. Baseline Langevin and
Hamiltonian samplers and evaluation metrics are included.
"""

__version__ = "0.1.0"

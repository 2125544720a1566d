"""Simulation and oracle toolkit for the reaction-diffusion system with square-root noise.

du = Lap u + beta u v - gamma u + sqrt(u) dW, dv = -u v: particle approximations of the
superprocess, nutrient-consuming simulators, log-Laplace PDE solvers, block and percolation
comparisons, Monte Carlo phase scans and travelling-wave shooting.
"""

__version__ = "0.1.0"

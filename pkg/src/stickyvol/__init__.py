"""Sticky drawdown/drawup stochastic-volatility pricing and calibration.

Submodules: ``model`` (parameters, inputs, boxes), ``ctmc`` (Markov-chain
Monte Carlo), ``dgm`` (network and derivatives), ``pde`` (residuals and
training), ``heston`` (Fourier reference prices), ``calibration`` (LM and
scaling search), ``data`` and ``workflow`` (chains and multi-day runs),
``cli`` (command line).
"""

__version__ = "0.1.0"

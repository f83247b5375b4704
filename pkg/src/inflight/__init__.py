"""Learned in-flight trajectory prediction for catching thrown objects.

Modules: ``statespace`` (Kalman algebra), ``flight_sim`` (physics and
datasets), ``nae`` (recurrent acceleration estimator), ``naedf`` (the
estimator inside a differentiable Kalman filter), ``evaluation`` (leading
time and error curves), ``catch_sim`` (simulated catching) and ``cli``.
"""

__version__ = "0.1.0"

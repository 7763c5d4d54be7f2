"""evasim: orbital pursuit-evasion sandbox.

Hill-frame relative dynamics, RF TDOA geolocation of a pursuing craft, an EKF,
an MPC thrust layer, evasion guidance baselines (recursive goal search and a
single-burn delta-v optimizer), a constrained stochastic-policy gate, a gym-like
episode environment with a TCP serving mode, and TLE-to-scenario tooling.
"""

__version__ = "0.1.0"

"""Benchmarking toolkit for interactive recommender systems.

Trains environment simulators and greedy / Q-learning agents from logged
ratings, runs an interactive evaluation protocol, and checks whether a
dataset carries exploitable long-term reward effects by comparing greedy
search against beam search on the simulator.
"""

__version__ = "0.1.0"

"""Encrypted spiking-network inference.

A small integrate-and-fire network is trained on MNIST in the clear,
discretized onto integer weights with provable error bounds, and then
evaluated homomorphically: every Fire and Reset becomes a programmable
bootstrap of an LWE ciphertext, so inference runs end to end on
encrypted pixels.
"""

__version__ = "0.1.0"

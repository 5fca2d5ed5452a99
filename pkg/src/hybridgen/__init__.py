"""Tuning a procedural training-data generator by the gradient of a
network's validation loss.

The gradient is assembled from two parts: exact reverse-mode derivatives of
the validation loss with respect to the generated samples, taken through the
unrolled SGD steps that consumed them, and finite-difference estimates of
how each sample moves with the generator's decision vector.
"""

__version__ = "0.1.0"

"""Trans-dimensional random field language models.

Whole sentences are modeled jointly with their length by a per-length
exponential family whose potential is a deep convolutional network.
Training runs stochastic approximation driven by a trans-dimensional MCMC
kernel with a jointly learned autoregressive proposal; scoring needs one
network pass per sentence and no vocabulary-sized softmax.
"""

__version__ = "0.1.0"

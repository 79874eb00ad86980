"""Video shadow detection from frame triples: co-attention network, losses, training and evaluation."""

__version__ = "0.1.0"

"""RTT predictor pipeline laboratory and load-balancing simulator."""

__version__ = "0.1.0"

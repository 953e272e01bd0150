"""Flash-loan identification and DeFi behavior classification over transaction traces."""

__version__ = "0.1.0"

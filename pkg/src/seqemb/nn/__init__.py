"""Dense numeric compute core: layers, losses, optimizer, gradient checking."""

from seqemb.nn.backend import active_backend, get_kernels

__all__ = ["active_backend", "get_kernels"]

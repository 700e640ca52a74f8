"""Set-prediction core for sparse occupancy: Chamfer matching, label assignment,
losses, consistent point sampling geometry and occupancy metrics."""

__version__ = "0.1.0"

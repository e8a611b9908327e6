"""Online tuning of tensor partition size and credit window for distributed training, on a simulated cluster."""

__version__ = "1.0.0"
__description__ = "Meta-network driven communication scheduling tuner with a discrete-event training simulator"

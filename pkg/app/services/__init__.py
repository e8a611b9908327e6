"""Services package: simulation, meta-network, tuners, controller, harness and oracle logic."""

"""Domain types: workloads, scheduling, meta-network, tuning, control and harness documents."""

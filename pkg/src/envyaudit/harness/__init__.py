"""Experiment harness: configs, seeded sweeps, CSV output and figures."""

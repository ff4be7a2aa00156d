"""Latency evaluation for simultaneous speech translation."""

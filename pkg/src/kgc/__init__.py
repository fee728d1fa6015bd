"""Trajectory-state simulation of the wave and Klein-Gordon equations."""

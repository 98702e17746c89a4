"""Uniformly optimal search plans for stationary targets."""

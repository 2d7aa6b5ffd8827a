"""Collaborative consistency training for universal semi-supervised model adaptation."""

__version__ = "0.1.0"

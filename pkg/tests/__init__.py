"""Unit tests for the pystratq library."""

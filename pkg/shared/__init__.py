"""Shared modules for the climate event attribution toolkit."""

"""Utility scripts for the climate event attribution toolkit."""

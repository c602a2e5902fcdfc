"""Test suite for the climate event attribution toolkit."""

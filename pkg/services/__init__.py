"""Services of the climate event attribution toolkit."""

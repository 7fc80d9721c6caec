"""Long-running benchmark harnesses."""

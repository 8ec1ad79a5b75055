"""dperm test suite."""

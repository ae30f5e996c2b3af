# ensures sibling test modules (shared helpers like random_instance) are
# importable regardless of how pytest is invoked

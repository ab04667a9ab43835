"""
Configurations and general functions for size-independent neural transfer.
"""
import os

import torch


def is_true(value):
    """Convert from string to boolean."""
    return str(value).lower() in ("yes", "true", "1")


# One worker keeps segment collection serialized, which is the only mode in
# which two training runs with the same seed are guaranteed to be identical.
THREADS = int(os.getenv("TRAPSNET_THREADS", "1"))
LOG_LEVEL = os.getenv("TRAPSNET_LOG_LEVEL", "INFO")

# Check every forward pass for non-finite values.
DEBUG = is_true(os.getenv("TRAPSNET_DEBUG", ""))

# Evaluation-related arguments:
EVAL_RUNS = int(os.getenv("TRAPSNET_EVAL_RUNS", "100"))

# Training-related arguments:
CHECKPOINT_EVERY = float(os.getenv("TRAPSNET_CHECKPOINT_EVERY", "60"))

# Test-related arguments:
SLOW_TESTS = is_true(os.getenv("TRAPSNET_SLOW_TESTS", ""))

# Networks are tiny, so double precision costs little and keeps gradient
# checks unambiguous.
DTYPE = torch.float64

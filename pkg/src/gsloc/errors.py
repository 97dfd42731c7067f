"""Exception types shared across the pipeline."""


class InputError(ValueError):
    """Invalid user-supplied data: malformed files, bad parameters, mismatched inputs.

    The CLI maps this (and missing files) to exit code 2; everything else is an
    internal error (exit code 1).
    """

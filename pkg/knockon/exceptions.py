"""
Submodule containing the exception classes raised across knockon.

Each class maps onto one failure category of the command line interface (see knockon.runner), which turns them into
distinct exit codes.

By using this code you agree to the terms of the software license agreement.

© Copyright 2020 Wyss Center for Bio and Neuro Engineering – All rights reserved
"""


class knockonError(Exception):
    """Base class for all knockon errors."""
    exit_code = 1


class configError(knockonError, ValueError):
    """Invalid configuration value or unknown configuration key."""
    exit_code = 2


class missingInputError(knockonError, FileNotFoundError):
    """A referenced input path does not exist."""
    exit_code = 3


class recordFormatError(knockonError, ValueError):
    """Malformed stop record file (bad row or unknown/missing column)."""
    exit_code = 4


class dataIntegrityError(knockonError, ValueError):
    """Data that violates an invariant that cleaning should have guaranteed."""
    exit_code = 4


class numericError(knockonError, ArithmeticError):
    """Non-finite activation or loss."""
    exit_code = 5

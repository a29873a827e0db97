"""Exception types shared across eqlab."""


class NumericalContractError(ValueError):
    """An input or result violates a numerical tolerance contract.

    The CLI maps this to exit code 3.
    """


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""

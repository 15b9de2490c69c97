"""Exception hierarchy for chainopt.

Every error carries the process exit status the CLI reports for it.
"""


class ChainOptError(Exception):
    exit_code: int = 2


class ConfigError(ChainOptError):
    """Invalid run configuration (flags, config file, environment)."""


class InfeasibleConfiguration(ChainOptError):
    """A configuration violates the constraint system."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("infeasible configuration: " + "; ".join(self.violations))


class NoVerifierSelected(InfeasibleConfiguration):
    def __init__(self) -> None:
        super().__init__(["no verifier selected (z is all-zero)"])


class InstanceTooLarge(ChainOptError):
    """Solver guard rail exceeded."""

    exit_code = 3


class InstanceError(ChainOptError):
    pass


class ParseError(InstanceError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(f"{prefix}{message}")


class SchemaVersionMismatch(InstanceError):
    def __init__(self, found: str | None, expected: str):
        self.found = found
        self.expected = expected
        super().__init__(f"schema '{found}' is not supported, expected '{expected}'")


class InvariantViolation(InstanceError):
    """Well-formed input whose values break a type invariant."""


class DegenerateLaw(InstanceError):
    """A sampling law rejects almost every draw at its truncation floor."""


class EmptyResults(ChainOptError):
    pass


class UnknownAlgorithm(ChainOptError):
    def __init__(self, name: str, known: list[str]):
        self.name = name
        super().__init__(f"unknown algorithm '{name}', expected one of {', '.join(known)}")


class GridUnderflow(UserWarning):
    """The initialisation grid has fewer distinct cells than particles."""

"""Exception hierarchy.

Each class carries the CLI exit code of its category so the front end can map
failures without a lookup table.
"""


class PanelBreaksError(Exception):
    exit_code = 4


class InputError(PanelBreaksError, ValueError):
    """Malformed input data or configuration."""

    exit_code = 1


class SchemaError(InputError):
    pass


class ParseError(InputError):
    pass


class UnbalancedPanelError(InputError):
    pass


class CriticalValueMissing(InputError, KeyError):
    """No table entry for the requested key; simulate one with ``simulate_critical_values``."""

    def __str__(self):  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class InfeasibleError(PanelBreaksError):
    """No admissible partition or test window exists for the request."""

    exit_code = 2


class CapacityError(InfeasibleError):
    pass


class NumericalError(PanelBreaksError, ArithmeticError):
    exit_code = 3


class IllConditionedError(NumericalError):
    pass


class SingularGramError(NumericalError):
    pass


class RankWarning(UserWarning):
    pass


class ConditioningWarning(UserWarning):
    pass


class TruncationWarning(UserWarning):
    pass

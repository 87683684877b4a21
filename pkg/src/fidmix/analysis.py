import logging
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import wraps
from inspect import BoundArguments, signature
from typing import Any, Protocol

from .group import Group

__all__ = ["Analysis", "Operation", "operation"]

log = logging.getLogger(__name__)


class OperatorFunction(Protocol):
    def __call__(self, groups: Sequence[Group], *args, **kwargs) -> list[Group]: ...


@dataclass()
class Operation:
    """A discrete computational unit of analysis."""

    desc: str
    func: OperatorFunction
    args: tuple[Any, ...]
    kwargs: Mapping[Any, Any]
    bound_arguments: BoundArguments | None = None


def operation(desc: str, defer=True):
    """A decorator that turns a function of groups into an analysis step.

    The decorated function receives the groups that have not failed
    yet and returns (or yields) the new groups. Calling the step on an
    analysis queues it; with ``defer=False`` it runs right away.

    """

    def wrapper(fn: OperatorFunction):
        @wraps(fn)
        def inner(analysis: "Analysis", *args, **kwargs) -> "Analysis":
            new_operation = Operation(desc=desc, func=fn, args=args, kwargs=kwargs)
            new_analysis = type(analysis)(
                groups=analysis.groups,
                operations=(*analysis.operations, new_operation),
            )
            if defer:
                return new_analysis
            else:
                return new_analysis.calculate()

        return inner

    return wrapper


class Analysis:
    """A chain of deferred operations over a collection of groups.

    Groups with a ``failure`` attribute have dropped out of the chain:
    later operations pass them through unchanged.
    """

    groups: Iterable[Group]
    operations: tuple[Operation, ...]

    def __init__(
        self,
        groups: Iterable[Group] = (),
        operations: tuple[Operation, ...] = (),
    ):
        self.groups = groups
        self.operations = operations

    def calculate(self):
        """Apply all pending operations and produce a new analysis object."""
        groups = list(self.groups)
        for op in self.operations:
            op.bound_arguments = signature(op.func).bind(groups, *op.args, **op.kwargs)
            active = [group for group in groups if not hasattr(group, "failure")]
            failed = [group for group in groups if hasattr(group, "failure")]
            log.info("%s (%d groups)", op.desc, len(active))
            active = list(op.func(active, *op.args, **op.kwargs))
            # Keep track of the operations that have already been performed on the groups
            for group in active:
                past_operations = getattr(group, "past_operations", ())
                group.past_operations = (*past_operations, op)
            groups = [*active, *failed]
            if len(active) == 0:
                warnings.warn(f"Operation {op.desc!r} produced 0 valid groups")
        return type(self)(
            tuple(groups),
            operations=(),
        )

    @property
    def failures(self) -> list[Group]:
        return [group for group in self.groups if hasattr(group, "failure")]

    def summarize(self):
        """Print the steps applied to the groups and return the result."""
        new_analysis = self.calculate()
        print("Steps:")
        seen = []
        for group in new_analysis.groups:
            for op in group.past_operations:
                if op not in seen:
                    seen.append(op)
        for op in seen:
            print(f"- {op.desc}")
        if new_analysis.failures:
            print(f"Failed groups: {len(new_analysis.failures)}")
        return new_analysis

from collections.abc import Sequence
from types import SimpleNamespace

__all__ = ["Group"]


class Group(SimpleNamespace):
    """An attribute bag for one dataset moving through an analysis.

    Attributes can also be set and read by name, as in
    ``group["system"]``.
    """

    past_operations: Sequence

    def __init__(self, *args, **kwargs):
        self.past_operations = ()
        super().__init__(*args, **kwargs)

    def __getitem__(self, name: str):
        return getattr(self, name)

    def __setitem__(self, name: str, value):
        setattr(self, name, value)

    def __contains__(self, name: str) -> bool:
        return hasattr(self, name)

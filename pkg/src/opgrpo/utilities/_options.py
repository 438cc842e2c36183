"""Module to define a base class for all string-valued option enums."""

from enum import StrEnum
from typing import List


class OptionEnum(StrEnum):
    """Top level enum for all named options (modes, origins, reward kinds, ...)."""

    @classmethod
    def members(cls) -> List[str]:
        """classmethod to get all members of an Enum returned as a list.

        Returns
        -------
        List[str]
            The values of the enum returned as a list.
        """
        return [member.value for member in cls]

    @classmethod
    def parse(cls, value: "str | OptionEnum") -> "OptionEnum":
        """Parse a raw string into a member of this enum.

        Parameters
        ----------
        value : str | OptionEnum
            Raw option value, e.g. read from a config file or the command line.

        Returns
        -------
        OptionEnum
            The matching member.

        Raises
        ------
        ValueError
            If the value is not one of the members.
        """
        if value not in cls.members():
            raise ValueError(
                f"Invalid {cls.__name__} value: {value}. Options are {cls.members()}."
            )
        return cls(value)

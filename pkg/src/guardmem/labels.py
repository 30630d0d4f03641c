"""Binary decision labels and their textual forms."""

from enum import IntEnum


class Label(IntEnum):
    ALLOW = 0
    REFUSE = 1

    @property
    def wire(self) -> str:
        """Label as written in prompts and model responses."""
        return "appropriate" if self is Label.ALLOW else "inappropriate"

    def flipped(self) -> "Label":
        return Label(1 - int(self))

    @classmethod
    def parse(cls, value) -> "Label":
        """Accept 0/1, ALLOW/REFUSE or appropriate/inappropriate (any case)."""
        if isinstance(value, Label):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            return cls(value)
        text = str(value).strip().strip("\"'.").lower()
        if text in ("allow", "appropriate", "0"):
            return cls.ALLOW
        if text in ("refuse", "inappropriate", "1"):
            return cls.REFUSE
        raise ValueError(f"unrecognized label: {value!r}")


ALLOW = Label.ALLOW
REFUSE = Label.REFUSE

"""Generation sampling controls shared by the LLM client and the store."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SamplingParams:
    """Decoder sampling knobs. Temperature lives in [0, 2]; campaigns
    restrict it further via their own schedule range."""

    temperature: float
    top_p: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p}

    @classmethod
    def from_dict(cls, data: dict) -> "SamplingParams":
        return cls(temperature=data["temperature"], top_p=data.get("top_p", 0.9))

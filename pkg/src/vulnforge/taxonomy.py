"""Built-in CWE taxonomy covered by the corpus.

Thirteen weakness instances; CWE-310 appears three times with different
trojans, so labels are keyed by (cwe_id, disambiguator), not cwe_id alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import UnknownLabelError

_CWE_ID_RE = re.compile(r"^CWE-\d{1,4}$")


@dataclass(frozen=True)
class CweLabel:
    cwe_id: str
    short_name: str
    disambiguator: str | None = None

    def __post_init__(self):
        if not _CWE_ID_RE.match(self.cwe_id):
            raise ValueError(f"malformed CWE id: {self.cwe_id!r}")

    @property
    def key(self) -> tuple[str, str | None]:
        return (self.cwe_id, self.disambiguator)

    @property
    def sort_key(self) -> tuple[str, str]:
        return (self.cwe_id, self.disambiguator or "")

    @property
    def slug(self) -> str:
        """Filesystem/row-id friendly form, e.g. ``cwe-310-aes-leakage``."""
        slug = self.cwe_id.lower()
        if self.disambiguator:
            slug += "-" + re.sub(r"[^a-z0-9]+", "-", self.disambiguator.lower()).strip("-")
        return slug

    def describe(self) -> str:
        if self.disambiguator:
            return f"{self.cwe_id} [{self.disambiguator}]: {self.short_name}"
        return f"{self.cwe_id}: {self.short_name}"

    def to_dict(self) -> dict:
        return {
            "cwe_id": self.cwe_id,
            "short_name": self.short_name,
            "disambiguator": self.disambiguator,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CweLabel":
        return cls(
            cwe_id=data["cwe_id"],
            short_name=data["short_name"],
            disambiguator=data.get("disambiguator"),
        )


BUILTIN_TAXONOMY: tuple[CweLabel, ...] = (
    CweLabel("CWE-1198", "Improper handling of privilege issues"),
    CweLabel("CWE-269", "Improper privilege level during interrupt handling"),
    CweLabel("CWE-1245", "Less secured FSM encoding"),
    CweLabel("CWE-1260", "Overlapping between memory ranges"),
    CweLabel("CWE-506", "Hardware trojan inside the decoder module"),
    CweLabel("CWE-310", "Trojan in AES for information leakage", "aes-leakage"),
    CweLabel("CWE-310", "Trojan in AES for denial of service", "aes-dos"),
    CweLabel("CWE-310", "Trojan in CSR module unauthorized access", "csr-access"),
    CweLabel("CWE-321", "Use of hardcoded cryptographic key"),
    CweLabel("CWE-250", "Improper trap privilege assignment"),
    CweLabel("CWE-1244", "Unlocking JTAG during reset"),
    CweLabel("CWE-284", "Improper direct memory access"),
    CweLabel("CWE-1271", "Unauthorized access to important registers"),
)


def lookup(
    cwe_id: str,
    disambiguator: str | None = None,
    taxonomy: tuple[CweLabel, ...] = BUILTIN_TAXONOMY,
) -> CweLabel:
    """Resolve a (cwe_id, disambiguator) pair against a taxonomy.

    A bare cwe_id is enough when it is unambiguous; ids with multiple
    variants require the disambiguator.
    """
    matches = [t for t in taxonomy if t.cwe_id == cwe_id]
    if not matches:
        raise UnknownLabelError(f"{cwe_id} is not in the taxonomy")
    if disambiguator is None:
        if len(matches) > 1:
            variants = ", ".join(repr(m.disambiguator) for m in matches)
            raise UnknownLabelError(
                f"{cwe_id} is ambiguous; pass a disambiguator (one of: {variants})"
            )
        return matches[0]
    for entry in matches:
        if entry.disambiguator == disambiguator:
            return entry
    raise UnknownLabelError(f"({cwe_id}, {disambiguator!r}) is not in the taxonomy")


def validate_taxonomy(taxonomy: tuple[CweLabel, ...]) -> None:
    keys = [t.key for t in taxonomy]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate (cwe_id, disambiguator) entries in taxonomy")

"""NIST SP 800-61r3 incident taxonomy and answer-text parsing.

Twelve categories (CAT1..CAT12) with names, descriptions and response
priorities, plus the extraction cascade that turns free-form model replies
back into category codes. UNPARSED is a sentinel for replies from which no
category could be recovered; it never appears in the taxonomy itself.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class TaxonomyError(ValueError):
    """Invalid taxonomy content or an operation on the UNPARSED sentinel."""


class CategoryCode(str, Enum):
    CAT1 = "CAT1"
    CAT2 = "CAT2"
    CAT3 = "CAT3"
    CAT4 = "CAT4"
    CAT5 = "CAT5"
    CAT6 = "CAT6"
    CAT7 = "CAT7"
    CAT8 = "CAT8"
    CAT9 = "CAT9"
    CAT10 = "CAT10"
    CAT11 = "CAT11"
    CAT12 = "CAT12"
    UNPARSED = "UNPARSED"

    @classmethod
    def taxonomy_codes(cls) -> tuple["CategoryCode", ...]:
        """The 12 real codes, in order, excluding the UNPARSED sentinel."""
        return tuple(c for c in cls if c is not cls.UNPARSED)

    @classmethod
    def from_number(cls, k: int) -> "CategoryCode":
        if not 1 <= k <= 12:
            raise TaxonomyError(f"category number out of range: {k}")
        return cls(f"CAT{k}")


@dataclass(frozen=True)
class Category:
    code: CategoryCode
    name: str
    description: str
    priority: int

    def __post_init__(self) -> None:
        if self.code is CategoryCode.UNPARSED:
            raise TaxonomyError("UNPARSED is not a taxonomy category")
        if not self.name:
            raise TaxonomyError(f"{self.code.value}: empty category name")
        if not 1 <= self.priority <= 5:
            raise TaxonomyError(
                f"{self.code.value}: priority {self.priority} outside 1..5"
            )


@dataclass(frozen=True)
class Taxonomy:
    categories: tuple[Category, ...]

    def __post_init__(self) -> None:
        expected = CategoryCode.taxonomy_codes()
        codes = tuple(c.code for c in self.categories)
        if codes != expected:
            raise TaxonomyError(
                "taxonomy must contain exactly CAT1..CAT12 in order, "
                f"got {[c.value for c in codes]}"
            )
        names = [c.name for c in self.categories]
        if len(set(n.casefold() for n in names)) != len(names):
            raise TaxonomyError("category names must be unique")

    def by_code(self, code: CategoryCode) -> Category:
        if code is CategoryCode.UNPARSED:
            raise TaxonomyError("no category for sentinel UNPARSED")
        return self.categories[int(code.value[3:]) - 1]


_BUILTIN_ROWS: tuple[tuple[str, str, str, int], ...] = (
    ("CAT1", "Account Compromise",
     "Unauthorized access to user or administrator accounts.", 5),
    ("CAT2", "Malware",
     "Infection by malicious code compromising devices or data.", 5),
    ("CAT3", "Denial-of-Service Attack (DoS/DDoS)",
     "Making systems or networks unavailable.", 4),
    ("CAT4", "Data Exfiltration or Leakage",
     "Unauthorized access, copying, or disclosure of sensitive data.", 5),
    ("CAT5", "Vulnerability Exploitation",
     "Use of known or unknown flaws to compromise assets.", 5),
    ("CAT6", "Insider Abuse",
     "Intentional or negligent actions by internal users.", 5),
    ("CAT7", "Social Engineering",
     "Deceiving people to obtain access or information.", 3),
    ("CAT8", "Physical or Infrastructure Incident",
     "Physical breach impacting computational assets.", 4),
    ("CAT9", "Unauthorized Modification",
     "Unauthorized changes to systems, data, or configurations.", 3),
    ("CAT10", "Misuse of Resources",
     "Unauthorized use of systems for other purposes.", 2),
    ("CAT11", "Vendor/Third-Party Problem",
     "Incident originating from a third-party security failure.", 4),
    ("CAT12", "Intrusion Attempt",
     "Hostile attempts to break in not yet confirmed as successful.", 3),
)

_BUILTIN = Taxonomy(
    categories=tuple(
        Category(CategoryCode(code), name, desc, prio)
        for code, name, desc, prio in _BUILTIN_ROWS
    )
)

# Answer contract stated once in every system prompt; parsing rule (1) keys
# on the "FINAL: CATk" line it demands.
ANSWER_CONTRACT = (
    'End your reply with exactly one line of the form "FINAL: CATk", '
    "where k is the number of the chosen category (1-12)."
)


def builtin_taxonomy() -> Taxonomy:
    """The 12-category NIST SP 800-61r3 table shipped with the package."""
    return _BUILTIN


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load a taxonomy override file: a JSON array of category objects.

    Each object needs code, name, description and priority; the result must
    satisfy the same invariants as the builtin table (12 codes in order,
    unique names, priorities 1..5).
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise TaxonomyError("taxonomy file must be a JSON array")
    categories = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise TaxonomyError(f"entry {i}: expected an object")
        try:
            code = CategoryCode(entry["code"])
        except (KeyError, ValueError) as exc:
            raise TaxonomyError(f"entry {i}: bad or missing code") from exc
        try:
            categories.append(
                Category(code, entry["name"], entry["description"],
                         int(entry["priority"]))
            )
        except KeyError as exc:
            raise TaxonomyError(f"entry {i}: missing field {exc}") from exc
    return Taxonomy(categories=tuple(categories))


def render_prompt_block(taxonomy: Taxonomy) -> str:
    """One line per category, "CODE — Name: Description", for system prompts."""
    return "\n".join(
        f"{c.code.value} — {c.name}: {c.description}" for c in taxonomy.categories
    )


def priority_of(code: CategoryCode, taxonomy: Taxonomy | None = None) -> int:
    if code is CategoryCode.UNPARSED:
        raise TaxonomyError("no priority for sentinel UNPARSED")
    return (taxonomy or _BUILTIN).by_code(code).priority


# Rule (1): the declared answer contract, anywhere in a line, last one wins.
_FINAL_RE = re.compile(r"FINAL\s*:\s*\[?CAT\s?(\d{1,2})\]?", re.IGNORECASE)
# Rule (2): a standalone CATk token (no space; "cat 3" in prose must not hit).
_TOKEN_RE = re.compile(r"\bCAT(\d{1,2})\b", re.IGNORECASE)


def _last_valid(matches: list[re.Match]) -> CategoryCode | None:
    for m in reversed(matches):
        k = int(m.group(1))
        if 1 <= k <= 12:
            return CategoryCode.from_number(k)
    return None


def _name_pattern(name: str) -> re.Pattern:
    # Full-name match, case-insensitive, tolerant of whitespace runs; the
    # lookarounds stop "Malware" from matching inside e.g. "Malwarebytes".
    parts = [re.escape(p) for p in name.split()]
    return re.compile(r"(?<!\w)" + r"\s+".join(parts) + r"(?!\w)", re.IGNORECASE)


def parse_category(reply: str, taxonomy: Taxonomy | None = None) -> CategoryCode:
    """Extract a category code from a model reply.

    Cascade, first hit wins: (1) last "FINAL: CATk" contract line,
    (2) last standalone CATk token, (3) last full category-name occurrence,
    (4) UNPARSED. Total over arbitrary text; never raises.
    """
    taxonomy = taxonomy or _BUILTIN
    if not reply:
        return CategoryCode.UNPARSED

    code = _last_valid(list(_FINAL_RE.finditer(reply)))
    if code is not None:
        return code

    code = _last_valid(list(_TOKEN_RE.finditer(reply)))
    if code is not None:
        return code

    best: tuple[int, int, CategoryCode] | None = None
    for cat in taxonomy.categories:
        for m in _name_pattern(cat.name).finditer(reply):
            key = (m.end(), m.end() - m.start(), cat.code)
            if best is None or key[:2] > best[:2]:
                best = key
    if best is not None:
        return best[2]

    return CategoryCode.UNPARSED

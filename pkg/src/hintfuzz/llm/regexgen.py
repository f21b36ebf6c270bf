"""Deterministic example strings for a regular expression.

``instantiate(pattern, v)`` walks the parsed regex and makes every choice from
the variant number ``v``: which alternative, which character of a class, how
many repetitions and which digits. Variants are grouped in blocks of ten:

* block 0: every digit is ``v % 10``, repetitions at their minimum
* block 1: digits increase from ``v % 10`` along the string
* block 2: digits decrease from ``v % 10`` along the string
* block 3: like block 0 with one extra repetition where allowed
"""

from __future__ import annotations

import re
import string

try:  # Python 3.11+
    import re._constants as C
    import re._parser as P
except ImportError:  # pragma: no cover - depends on interpreter version
    import sre_constants as C
    import sre_parse as P

ANY_CHOICES = (".", "a", "0", "-")
VARIANTS = 40

_CATEGORY_SAMPLES = {
    C.CATEGORY_DIGIT: string.digits,
    C.CATEGORY_NOT_DIGIT: "a-.",
    C.CATEGORY_SPACE: " ",
    C.CATEGORY_NOT_SPACE: "a0-",
    C.CATEGORY_WORD: "a0_",
    C.CATEGORY_NOT_WORD: "-. ",
}


class _Gen:
    def __init__(self, variant: int):
        self.variant = variant
        self.block, self.base = divmod(variant, 10)
        self.digit_index = 0
        self.groups: dict = {}

    def digit(self) -> str:
        i = self.digit_index
        self.digit_index += 1
        if self.block == 1:
            return str((self.base + i) % 10)
        if self.block == 2:
            return str((self.base - i) % 10)
        return str(self.base)

    def pick(self, options: str) -> str:
        if options and all(c in string.digits for c in options) and len(options) == 10:
            return self.digit()
        return options[self.base % len(options)] if options else ""

    def emit(self, items) -> str:
        return "".join(self.item(op, av) for op, av in items)

    def item(self, op, av) -> str:
        if op is C.LITERAL:
            return chr(av)
        if op is C.NOT_LITERAL:
            return "a" if chr(av) != "a" else "b"
        if op is C.ANY:
            return ANY_CHOICES[self.base % len(ANY_CHOICES)]
        if op is C.IN:
            return self.pick(self.class_options(av))
        if op is C.BRANCH:
            alternatives = av[1]
            return self.emit(alternatives[self.base % len(alternatives)])
        if op is C.SUBPATTERN:
            group, items = av[0], av[-1]
            text = self.emit(items)
            if group:
                self.groups[group] = text
            return text
        if op in (C.MAX_REPEAT, C.MIN_REPEAT):
            lo, hi, items = av
            n = lo
            if self.block == 3 and (hi is C.MAXREPEAT or hi > lo):
                n = lo + 1
            return "".join(self.emit(items) for _ in range(n))
        if op is C.GROUPREF:
            return self.groups.get(av, "")
        if op is C.CATEGORY:
            return self.pick(_CATEGORY_SAMPLES.get(av, "a"))
        if op in (C.AT, C.ASSERT, C.ASSERT_NOT):
            return ""
        raise ValueError(f"unsupported regex construct {op}")

    def class_options(self, items) -> str:
        negate = False
        chars: list = []
        for op, av in items:
            if op is C.NEGATE:
                negate = True
            elif op is C.LITERAL:
                chars.append(chr(av))
            elif op is C.RANGE:
                lo, hi = av
                chars.extend(chr(c) for c in range(lo, min(hi, lo + 255) + 1))
            elif op is C.CATEGORY:
                chars.extend(_CATEGORY_SAMPLES.get(av, ""))
        if negate:
            banned = set(chars)
            return "".join(c for c in "a0.-_ A" if c not in banned)
        seen = dict.fromkeys(chars)
        return "".join(seen)


def instantiate(pattern: str, variant: int = 0) -> str | None:
    """An example string fully matching ``pattern``, or None if none is found."""
    try:
        parsed = P.parse(pattern)
        text = _Gen(variant).emit(parsed)
        ok = re.fullmatch(pattern, text) is not None
    except (re.error, ValueError, RecursionError, OverflowError, MemoryError):
        return None
    return text if ok else None


def instances(pattern: str, variants: int = VARIANTS) -> list:
    """Distinct instances over the first ``variants`` variants, in order."""
    out: dict = {}
    for v in range(variants):
        s = instantiate(pattern, v)
        if s is not None:
            out.setdefault(s, None)
    return list(out)


_META = set(".*+?[](){}|\\^$")


def looks_like_regex(s: str) -> bool:
    if not any(c in _META for c in s):
        return False
    try:
        re.compile(s)
    except re.error:
        return False
    return True

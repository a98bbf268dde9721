"""Registry for acceptance-criterion verdicts.

Criterion tests record their verdict here before asserting, so the terminal
summary can print one line per criterion even when a later assertion fails.
"""

RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    RESULTS[int(criterion)] = (bool(passed), str(detail))


def check(criterion: int, passed: bool, detail: str) -> None:
    """Record the verdict, then assert it."""
    record(criterion, passed, detail)
    assert passed, f"criterion {criterion}: {detail}"

"""Collects one PASS/FAIL line per acceptance criterion."""

import contextlib

RESULTS: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record (and print) whether the enclosed checks for ``number`` passed."""
    detail: list[str] = []
    try:
        yield detail
    except BaseException as exc:
        line = f"criterion {number:2d} FAIL  {title}: {type(exc).__name__}: {exc}".splitlines()[0]
        RESULTS[number] = line
        print(line)
        raise
    line = f"criterion {number:2d} PASS  {title}" + (f" ({'; '.join(detail)})" if detail else "")
    RESULTS[number] = line
    print(line)

"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> bool:
    RESULTS[number] = (bool(passed), detail)
    print(line(number))
    return bool(passed)


def line(number: int) -> str:
    passed, detail = RESULTS[number]
    return f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"

"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, tuple[bool, str, str]] = {}


def report(number: int, title: str, ok: bool, detail: str) -> bool:
    RESULTS[number] = (bool(ok), title, detail)
    print(format_line(number))
    return ok


def format_line(number: int) -> str:
    ok, title, detail = RESULTS[number]
    return f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"

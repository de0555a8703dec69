"""Collects one pass/fail line per acceptance criterion for the run summary."""

LINES: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
    LINES.append(line)
    print(line)
    return ok

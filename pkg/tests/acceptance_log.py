"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS: list[str] = []


def record(criterion: int, title: str, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {title} -- {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return line

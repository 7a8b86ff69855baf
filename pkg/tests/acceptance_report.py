"""Collects one result line per acceptance criterion for the terminal summary."""
LINES = []


def report(number: int, passed: bool, detail: str):
    line = f"CRITERION {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
    LINES.append(line)
    print(line)
    return passed

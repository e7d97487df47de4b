"""Registry of acceptance outcomes, printed in the pytest terminal summary."""

RESULTS: dict = {}


def record(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    return line

import functools

import pytest

from reachsos.certify import build_certificate
from reachsos.model import SolveConfig, load_example
from reachsos.sdp import solve
from reachsos.soscompile import compile_spec

ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def solved(name: str, k: int):
    """(spec, cfg, program, instance, solution, certificate) for a bundled example.

    Cached across the session; several test modules reuse the same solves.
    """
    spec = load_example(name)
    cfg = SolveConfig(k)
    program, instance = compile_spec(spec, cfg)
    sol = solve(instance)
    cert = build_certificate(spec, cfg, instance, sol, program)
    return spec, cfg, program, instance, sol, cert


@functools.lru_cache(maxsize=None)
def hj_field(name: str, n: int):
    from reachsos.hjgrid import run

    return run(load_example(name), n)


@pytest.fixture
def acceptance_line():
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    # one visible pass/fail line per acceptance criterion
    if rep.when == "call" and item.fspath.basename == "test_acceptance.py":
        status = "PASS" if rep.passed else "FAIL"
        print(f"\n[acceptance] {item.name}: {status}", flush=True)

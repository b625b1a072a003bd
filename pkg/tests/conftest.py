import pytest

from synthcorpus import build_world

ACCEPTANCE_PREFIX = "tests/test_acceptance.py::"

CRITERIA = {
    "test_gradient_suite": "gradient suite (span / contrastive / adaptation vs finite differences)",
    "test_tagging_scheme_suite": "tagging-scheme suite (exhaustive round trips, length <= 8)",
    "test_metric_oracle": "metric oracle (micro-F1 + error taxonomy vs brute force)",
    "test_synthetic_end_to_end": "synthetic end-to-end (mean micro-F1 >= 0.90)",
    "test_filtering_efficacy": "filtering efficacy (distractor removal / true-span retention)",
    "test_invariance_suite": "invariance suite (losses, scaling, thresholds, prototypes)",
    "test_determinism": "determinism (byte-identical reports under one seed)",
    "test_zero_shot_wiring": "zero-shot wiring (k=0 pipeline, F1 >= 0.5)",
    "test_exporter_round_trip": "exporter round trip (TADE reload within 1e-6)",
}


@pytest.fixture(scope="session")
def synth_world():
    return build_world(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if name not in CRITERIA:
                continue
            status = "PASS" if outcome == "passed" else outcome.upper()
            lines.append((name, f"[{status}] {CRITERIA[name]}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        order = list(CRITERIA)
        for _, line in sorted(lines, key=lambda item: order.index(item[0])):
            terminalreporter.write_line(line)

import math

import pytest

from callback_audit.corpus import JobPosting
from callback_audit.elicitation import CallbackRecord, PersonaSpec


def make_posting(pid="j1", title="Chef", description="Prepare meals.", **kw):
    return JobPosting(id=pid, title=title, description=description, **kw)


def make_record(pid, outcome, p_female=None, persona=None, arm="mr_first"):
    if p_female is None and outcome != "refusal":
        p_female = 0.9 if outcome == "female" else 0.1
    return CallbackRecord(pid, persona or PersonaSpec.base(), arm, outcome, p_female, "")


@pytest.fixture
def chef():
    return make_posting("job1", "Chef", "Prepare meals for guests in a busy hotel kitchen.")


def logit(p):
    return math.log(p / (1 - p))


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)

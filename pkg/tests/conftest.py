import random

import pytest

from secure5g.ida import provision_device, provision_service
from secure5g.pki import CertificateAuthority, StatusResponder


class World:
    """CA, responder, IDA service and a few provisioned devices, all seeded."""

    def __init__(self, seed=0, n_devices=3, interval=30_000):
        self.rand = random.Random(seed).randbytes
        self.ca = CertificateAuthority(random_bytes=self.rand)
        self.responder = StatusResponder(self.ca)
        self.service = provision_service(self.ca, "ida-service", self.responder, self.rand, interval=interval)
        self.agents = {}
        for i in range(1, n_devices + 1):
            dev = f"robot-{i:02d}"
            self.agents[dev] = provision_device(self.ca, self.service, dev, f"0010100000000{i:02d}", self.rand)


@pytest.fixture
def world():
    return World()


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def verdict(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])

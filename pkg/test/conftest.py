import json
import re
from pathlib import Path
from typing import Optional
import pytest

ANCHOR_FILE = Path(__file__).with_name("anchors.json")


def pytest_addoption(parser: pytest.Parser):
    group = parser.getgroup("igprune")
    group.addoption(
        "--igprune-slow",
        action="store_true",
        help="Also run tests marked slow (desk-scale experiment runs).",
    )
    group.addoption(
        "--igprune-update-anchors",
        action="store_true",
        help="Record every pinned seeded value afresh in test/anchors.json.",
    )
    group.addoption(
        "--igprune-list",
        action="store_true",
        help="List all tests in flatten format.",
    )
    group.addoption(
        "--igprune-test-name",
        action="store",
        type=str,
        help="Name or regexp in flatten format matching the tests to run.",
    )
    group.addoption(
        "--igprune-test-count",
        action="store",
        type=int,
        help="Number of tests to start. If less than number of all selected tests, then starts only subset of them.",
    )


def generate_unittestname(item: pytest.Item) -> str:
    full_name = ".".join(
        map(
            lambda s: s[:-3] if s[-3:] == ".py" else s,
            map(lambda x: x.name, item.listchain()),
        )
    )
    return full_name


def generate_test_cases_list(session: pytest.Session) -> list[str]:
    return [generate_unittestname(item) for item in session.items]


def pytest_collection_finish(session: pytest.Session):
    if session.config.getoption("igprune_list"):
        for name in generate_test_cases_list(session):
            print(name)


@pytest.hookimpl(tryfirst=True)
def pytest_runtestloop(session: pytest.Session) -> Optional[bool]:
    if session.config.getoption("igprune_list"):
        return True
    return None


def deselect_slow(items: list[pytest.Item], config: pytest.Config) -> None:
    if config.getoption("igprune_slow"):
        return

    skip = pytest.mark.skip(reason="slow; run with --igprune-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def deselect_based_on_flatten_name(items: list[pytest.Item], config: pytest.Config) -> None:
    igprune_test_name = config.getoption("igprune_test_name")
    if not isinstance(igprune_test_name, str):
        return

    deselected = []
    remaining = []
    regexp = re.compile(igprune_test_name)
    for item in items:
        full_name = generate_unittestname(item)
        match = regexp.search(full_name)
        if match is None:
            deselected.append(item)
        else:
            remaining.append(item)
    if deselected:
        config.hook.pytest_deselected(items=deselected)
        items[:] = remaining


def deselect_based_on_count(items: list[pytest.Item], config: pytest.Config) -> None:
    igprune_test_count = config.getoption("igprune_test_count")
    if not isinstance(igprune_test_count, int):
        return

    deselected = items[igprune_test_count:]
    remaining = items[:igprune_test_count]
    if deselected:
        config.hook.pytest_deselected(items=deselected)
        items[:] = remaining


def pytest_collection_modifyitems(items: list[pytest.Item], config: pytest.Config) -> None:
    deselect_slow(items, config)
    deselect_based_on_flatten_name(items, config)
    deselect_based_on_count(items, config)


class Anchors:
    """
    Seeded results pinned in ``anchors.json``.

    A key without an entry is recorded by the run that first computes it and
    compared against on every later run.
    """

    def __init__(self, path: Path, update: bool) -> None:
        self.path = path
        self.update = update
        self.pinned: dict[str, float] = {} if update else self._read()
        self.recorded: dict[str, float] = {}

    def _read(self) -> dict[str, float]:
        if not self.path.exists():
            return {}
        return json.loads(self.path.read_text(encoding="utf-8"))

    def check(self, key: str, value: float, rel: float = 1e-9) -> None:
        if key not in self.pinned:
            self.recorded[key] = value
            return
        assert value == pytest.approx(self.pinned[key], rel=rel), f"{key}: {value!r}, pinned {self.pinned[key]!r}"

    def at_least(self, key: str, value: float) -> None:
        if key not in self.pinned:
            self.recorded[key] = value
            return
        assert value >= self.pinned[key], f"{key}: {value!r} below pinned {self.pinned[key]!r}"

    def save(self) -> None:
        if not self.recorded:
            return
        # xdist workers save separately; merge with what is on disk now
        merged = {**self._read(), **self.recorded}
        self.path.write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def anchors(request: pytest.FixtureRequest):
    store = Anchors(ANCHOR_FILE, request.config.getoption("igprune_update_anchors"))
    yield store
    store.save()

import pytest

from upside import env as maze
from upside.algo import UpsideConfig, run
from upside.model import TrainedModel

FAST = dict(hidden=32, k_steps=3000, k_discr=60, k_pol=10, J=4, k_initial=300)


def fast_config(**kw) -> UpsideConfig:
    return UpsideConfig(**{**FAST, **kw})


@pytest.fixture(scope="session")
def small_model() -> TrainedModel:
    """A short UPSIDE run on the wall-free maze, shared by evaluation and CLI tests."""
    learner = run(maze.load_maze("wallfree"), fast_config(t_max=25_000), seed=0)
    return TrainedModel.from_learner(learner)


@pytest.fixture(scope="session")
def root_model() -> TrainedModel:
    return TrainedModel.from_learner(run(maze.load_maze("wallfree"), fast_config(t_max=0)))


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

import pytest

from tsrec.harness import Pipeline, parse_config

# a pipeline small enough to run every stage in seconds
SMALL = """
n_entities = 30
series_length = 140
methods = Naive; Mean; SES; AR(1); HoltWinters(7)
cv_folds = 10
label_folds = 10
n2v_walks = 2
n2v_length = 6
n2v_dim = 8
hidden = 6
seq_len = 24
batch_size = 8
epochs = 2
seq_sizes = 16,24
batch_sizes = 4,8,16
"""


@pytest.fixture(scope="session")
def small_config_text():
    return SMALL


@pytest.fixture(scope="session")
def small_pipeline(tmp_path_factory):
    pipe = Pipeline(parse_config(SMALL, seed=0), tmp_path_factory.mktemp("small"))
    pipe.labels()
    pipe.embedding()
    return pipe


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criteria lines at the end of the run."""
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

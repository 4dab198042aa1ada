import pytest

from flatrec import Dataset, RatingScale

ALICE = [1, 1, 2, 2, 3, 3, 3, 4, 5]
BOB = [3, 3, 4, 4, 4, 5, 5, 5, 5]

# user-item matrix with similarities to U1 (None = unrated), columns I1..I11
NEIGHBOUR_MATRIX = {
    "U1": [1, 1, 1, None, 1, 1, None, 2, 2, 3, 3],
    "U2": [1, 2, 3, None, None, None, 3, 4, None, 5, 5],
    "U3": [None, None, None, None, 1, 3, None, 2, 5, None, 4],
    "U4": [1, 4, 4, None, 4, 5, None, 5, 5, 5, 5],
    "U5": [3, 3, None, 3, 2, 2, None, 2, 4, 5, None],
    "U6": [5, 5, 5, None, 5, 5, None, 2, 2, 4, 4],
}
U1_SIMILARITY = {"U2": 0.914, "U3": 0.567, "U4": 0.606, "U5": 0.734, "U6": -0.531}

# rating counts for levels 1..10 with reference D(v) and ln(10 D(v)) to four places
TEN_LEVEL_COUNTS = [349, 606, 1300, 1944, 11322, 8934, 19776, 29233, 21221, 24113]
TEN_LEVEL_MASS = [0.0029, 0.0051, 0.0109, 0.0164, 0.0953, 0.0752, 0.1665, 0.2461, 0.1786, 0.203]
TEN_LEVEL_LOG = [-3.5275, -2.9757, -2.2125, -1.8101, -0.0481, -0.285, 0.5096, 0.9005, 0.5802, 0.7079]

FIVE_STAR = RatingScale.from_range(1, 5)


def neighbour_profiles():
    return {
        u: {f"I{j + 1}": v for j, v in enumerate(row) if v is not None} for u, row in NEIGHBOUR_MATRIX.items()
    }


@pytest.fixture
def alice_bob():
    rows = [("alice", f"a{j}", v) for j, v in enumerate(ALICE)]
    rows += [("bob", f"b{j}", v) for j, v in enumerate(BOB)]
    return Dataset(rows)


@pytest.fixture
def neighbours():
    return Dataset((u, i, v) for u, p in neighbour_profiles().items() for i, v in p.items())


@pytest.fixture(scope="session")
def synthetic():
    from flatrec.synthetic import skewed_ratings

    return skewed_ratings(120, 150, mean_profile=20, seed=3)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (not k.isdigit(), int(k) if k.isdigit() else k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

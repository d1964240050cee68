import pytest

TINY_COMPARE = """
[model]
d_model = 16
n_heads = 2
n_layers = 1
d_ff = 32
vocab_size = 32
max_len = 8

[train]
lr = 3e-3
batch_size = 8
seeds = 0, 1

[task]
name = both
k_symbols = 4
n_train = 64
n_eval = 20

[schedule]
pt_steps = 5
sft_steps = 15
rows = CAUSAL, MMA_PAIRWISE, DOT+CAUSAL
"""


@pytest.fixture
def tiny_compare_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_COMPARE)
    return path


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: int, name: str, ok: bool, detail: str, seconds: float):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} {name}: {detail} ({seconds:.1f}s)"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)

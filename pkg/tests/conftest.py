import numpy as np
import pytest

from s2a.model import ModelConfig, S2AModel
from s2a.tokenizer import SPECIALS

CAT_X = "The cat is sat at mat . [/S]".split()
CAT_Y = "The cat sat on the mat . [/S]".split()


@pytest.fixture
def tiny_model():
    cfg = ModelConfig(vocab_size=12, layers=2, heads=2, d_model=16, d_ff=32, dropout=0.0, max_len=32)
    return S2AModel(cfg, np.random.default_rng(0))


def random_ids(rng, n_max, low=len(SPECIALS), high=12, n_min=0):
    """Random regular-token sequence terminated by [/S]."""
    n = int(rng.integers(n_min, n_max + 1))
    return [int(t) for t in rng.integers(low, high, size=n)] + [1]


def tiny_batch(seed=0, n=3, vocab_size=12):
    """A padded batch of random aligned examples over ids 5..vocab_size-1."""
    from s2a.align import align_example
    from s2a.model import make_batch

    rng = np.random.default_rng(seed)
    exs = [align_example(random_ids(rng, 5, high=vocab_size, n_min=1), random_ids(rng, 5, high=vocab_size, n_min=1)) for _ in range(n)]
    return make_batch(exs)


def model_grad_errors(model, batch, lam, h=1e-5, per_param=None, seed=0):
    """Worst relative error of analytic vs central-difference gradients per parameter.

    ``per_param`` limits the number of checked entries per tensor (all when None).
    """
    from s2a import tensor as T

    model.zero_grad()
    T.backward(model.joint_loss(batch, lam))
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size) if per_param is None else rng.choice(flat.size, min(per_param, flat.size), replace=False)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = model.joint_loss(batch, lam).item()
            flat[i] = old - h
            down = model.joint_loss(batch, lam).item()
            flat[i] = old
            num[k] = (up - down) / (2 * h)
        ana = p.grad.reshape(-1)[idx]
        # key biases have an exactly zero gradient; the floor keeps
        # difference noise (~1e-11) on those from reading as relative error
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-6)
        errors[name] = float(np.abs(ana - num).max() / scale)
    return errors


# ------------------------------------------------------------ acceptance reporting

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = marker.args
    detail = getattr(item, "criterion_detail", "")
    _criteria[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"AC{number:<3} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

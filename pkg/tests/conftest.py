import time

import numpy as np
import pytest
import torch

from tvsd.datamodel import generate_synthetic


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """2 videos x 8 frames at 64px, seed 1."""
    root = tmp_path_factory.mktemp("fixture")
    generate_synthetic(root, n_videos=2, frames_per_video=8, size=64, seed=1)
    return root


@pytest.fixture(scope="session")
def fixture_index(fixture_root):
    from tvsd.datamodel import index_dataset

    return index_dataset(fixture_root, "train")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def relative_error(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return 0.0
    return abs(analytic - numeric) / scale


def directional_gradcheck(loss_fn, params, h=1e-6, seed=0):
    """Compare autograd against central differences along one random direction per tensor.

    ``params`` maps names to leaf tensors with ``requires_grad``; returns
    ``{name: relative error}``. Every entry of every tensor takes part in its
    direction, so each parameter is exercised.
    """
    gen = torch.Generator().manual_seed(seed)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    errors = {}
    with torch.no_grad():
        for (name, p), g in zip(params.items(), grads):
            v = torch.randn(p.shape, generator=gen, dtype=p.dtype)
            v /= v.norm()
            analytic = 0.0 if g is None else float((g * v).sum())
            p += h * v
            up = float(loss_fn())
            p -= 2 * h * v
            down = float(loss_fn())
            p += h * v
            errors[name] = relative_error(analytic, (up - down) / (2 * h))
    return errors


def entrywise_gradcheck(loss_fn, tensor, h=1e-6):
    """Max relative error of autograd vs. central differences over every entry."""
    tensor.grad = None
    (g,) = torch.autograd.grad(loss_fn(), [tensor])
    worst = 0.0
    with torch.no_grad():
        flat = tensor.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = float(loss_fn())
            flat[i] = old - h
            down = float(loss_fn())
            flat[i] = old
            worst = max(worst, relative_error(float(g.view(-1)[i]), (up - down) / (2 * h)))
    return worst


@pytest.fixture(scope="session")
def trained(fixture_index, tmp_path_factory):
    """The 200-step desk-scale run on the fixture: ``(config, result, out_dir, seconds)``."""
    from tvsd.pipeline import fixture_config, train

    out = tmp_path_factory.mktemp("trained")
    cfg = fixture_config(seed=1)
    started = time.perf_counter()
    result = train(cfg, fixture_index, out_dir=out)
    return cfg, result, out, time.perf_counter() - started


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    """Log one acceptance line, then fail the calling test if ``ok`` is false."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])

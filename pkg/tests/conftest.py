import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def _flat_params(module):
    return [p for p in module.parameters() if p.requires_grad]


def finite_difference_errors(loss_fn, tensors, n_directions=4, eps=1e-6, seed=0, per_tensor=True):
    """Relative errors between autograd and central differences for a scalar ``loss_fn()``.

    Checks random joint directions over all ``tensors`` and, with ``per_tensor``,
    the largest-gradient coordinate of every tensor. Returns ``{label: rel_err}``.
    """
    gen = torch.Generator().manual_seed(seed)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]

    def directional(vs):
        with torch.no_grad():
            for t, v in zip(tensors, vs):
                t.add_(eps * v)
            plus = loss_fn().item()
            for t, v in zip(tensors, vs):
                t.sub_(2 * eps * v)
            minus = loss_fn().item()
            for t, v in zip(tensors, vs):
                t.add_(eps * v)
        fd = (plus - minus) / (2 * eps)
        an = sum(float((g * v).sum()) for g, v in zip(grads, vs))
        scale = max(abs(fd), abs(an))
        # a structurally zero gradient (e.g. a bias feeding batch norm) is compared absolutely
        return abs(fd - an) / scale if scale > 1e-6 else abs(fd - an)

    errors = {}
    for k in range(n_directions):
        vs = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in tensors]
        # unit-norm direction so the actual step length is eps
        norm = sum(float((v * v).sum()) for v in vs) ** 0.5
        vs = [v / norm for v in vs]
        errors[f"direction{k}"] = directional(vs)
    if per_tensor:
        for i, t in enumerate(tensors):
            vs = [torch.zeros_like(u) for u in tensors]
            idx = int(grads[i].abs().argmax())
            vs[i].view(-1)[idx] = 1.0
            errors[f"tensor{i}[{idx}]"] = directional(vs)
    return errors


@pytest.fixture
def fd_errors():
    return finite_difference_errors


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)

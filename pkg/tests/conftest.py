import itertools

import numpy as np
import pytest

from lifevit.tensor import Tensor


def numeric_grad(f, arrays, h_scale=1e-4):
    """Central differences of scalar ``f(*arrays)`` with ``h = h_scale·(1+|x|)``."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            h = h_scale * (1.0 + abs(orig))
            a[idx] = orig + h
            fp = f(*arrays)
            a[idx] = orig - h
            fm = f(*arrays)
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))


def check_gradients(build, arrays, tol=1e-5, h_scale=1e-4):
    """Compare autograd against finite differences for ``loss = build(*tensors)``.

    ``build`` maps Tensors to a scalar Tensor. A fixed random projection of the
    output is folded in by the caller when the op is not scalar-valued.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def f(*raw):
        return build(*[Tensor(r) for r in raw]).item()

    expected = numeric_grad(f, [a.copy() for a in arrays], h_scale)
    errs = [rel_error(t.grad, e) for t, e in zip(tensors, expected)]
    assert max(errs) < tol, errs
    return errs


def weighted_sum(out, seed=123):
    """Scalar loss ``Σ w⊙out`` with a fixed random ``w`` of ``out``'s shape."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * Tensor(w)).sum()


def direct_conv(x, w, b, pad, stride=1):
    """Nested-loop cross-correlation; ``x`` is C×H×W, ``w`` Cout×Cin×k×k."""
    c, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o, i, j in itertools.product(range(cout), range(ho), range(wo)):
        acc = 0.0 if b is None else b[o]
        for ci, di, dj in itertools.product(range(c), range(k), range(k)):
            acc += w[o, ci, di, dj] * xp[ci, i * stride + di, j * stride + dj]
        out[o, i, j] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_life_params(cfg, rng):
    """float64 generator parameters for one block, fan-in scaled."""
    from lifevit.life import life_param_shapes

    out = {}
    for name, shape in life_param_shapes(cfg).items():
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        out[name] = Tensor(rng.uniform(-1, 1, size=shape) / np.sqrt(fan_in))
    return out


def chebyshev_footprint(fn, x, cell, side):
    """Max Chebyshev distance from ``cell`` of lattice cells whose output moved.

    ``fn`` maps a ``C×side×side`` lattice to a list of ``C×side×side`` outputs;
    returns one radius per output (``-1`` when nothing moved) and the boolean
    change masks.
    """
    base = fn(x)
    bumped = x.copy()
    bumped[:, cell[0], cell[1]] += 1.0
    moved = fn(bumped)
    rr, cc = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    dist = np.maximum(abs(rr - cell[0]), abs(cc - cell[1]))
    radii, masks = [], []
    for b, m in zip(base, moved):
        changed = (b != m).any(axis=0)
        masks.append(changed)
        radii.append(int(dist[changed].max()) if changed.any() else -1)
    return radii, masks, dist


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

"""Independent reference computations used by several test modules."""

import itertools
import math

import torch


def central_differences(params, loss_fn, step=1e-5):
    """Gradient of ``loss_fn()`` w.r.t. each tensor in ``params`` by central differences."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                g.view(-1)[i] = (up - down) / (2 * step)
            grads.append(g)
    return grads


def relative_error(a, b, floor=1e-10):
    denom = max(a.norm().item(), b.norm().item())
    if denom < floor:
        return 0.0
    return (a - b).norm().item() / denom


def levenshtein(a, b):
    """Plain recursive edit distance (exponential; keep inputs short)."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    if a[0] == b[0]:
        return levenshtein(a[1:], b[1:])
    return 1 + min(levenshtein(a[1:], b), levenshtein(a, b[1:]), levenshtein(a[1:], b[1:]))


def gaussian_entry(i, j, sigma):
    return math.exp(-((i - j) ** 2) / (2.0 * sigma ** 2))


def reg_loss_loops(rows, G):
    """Scalar-loop cosine-similarity MSE over all N*N entries."""
    n = len(rows)
    normed = []
    for r in rows:
        norm = math.sqrt(sum(x * x for x in r))
        normed.append([x / norm for x in r])
    total = 0.0
    for i, j in itertools.product(range(n), range(n)):
        s = sum(x * y for x, y in zip(normed[i], normed[j]))
        total += (s - G[i][j]) ** 2
    return total / (n * n)

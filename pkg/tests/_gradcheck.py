"""Central finite-difference oracle for the autodiff engine (64-bit)."""
import numpy as np

from noisy_sei import engine as E

H = 1e-4


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.max(np.abs(a), initial=0), np.max(np.abs(n), initial=0), 1e-8)
    return float(np.max(np.abs(a - n), initial=0) / scale)


class Kink(Exception):
    """A perturbed coordinate straddles a ReLU/max-pool kink within +-h."""


def _central(f, scale_hint):
    """Central difference of ``f(step)`` at step ``H``.

    On a smooth stretch the estimates at ``H`` and ``H/2`` agree to O(H^2);
    a kink within the step makes them disagree, and the instance is
    rejected rather than scored.
    """
    c1 = (f(H) - f(-H)) / (2 * H)
    c2 = (f(H / 2) - f(-H / 2)) / H
    if abs(c1 - c2) > 1e-5 * max(scale_hint, 1e-12):
        raise Kink
    return c1


def check(fn, arrays, rng, coords=None):
    """Max relative error between backprop and central differences.

    ``fn`` maps a list of Tensors to an output Tensor; it is reduced to a
    scalar by a fixed random projection.  ``coords`` limits how many
    entries per array are perturbed (all when None).  Raises ``Kink`` when
    the instance is not differentiable at the step size.
    """
    with E.float64():
        leaves = [E.Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = fn(leaves)
        proj = rng.normal(size=out.shape)
        E.tsum(E.mul(out, E.Tensor(proj))).backward()
        worst = 0.0
        for i, a in enumerate(arrays):
            flat = a.ravel()
            picks = np.arange(flat.size) if coords is None or flat.size <= coords else \
                rng.choice(flat.size, coords, replace=False)
            grad = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
            hint = float(np.max(np.abs(grad), initial=0))
            num = np.empty(len(picks))
            for j, p in enumerate(picks):
                def f(step):
                    pert = [b.copy() for b in arrays]
                    pert[i].ravel()[p] += step
                    with E.no_grad():
                        return np.sum(fn([E.Tensor(b) for b in pert]).data * proj)
                num[j] = _central(f, hint)
            worst = max(worst, rel_error(grad.ravel()[picks], num))
        return worst


def check_module(loss_fn, module, inputs, rng, coords=12):
    """Finite differences over a module's parameters and its inputs."""
    with E.float64():
        params = module.parameters()
        x = E.Tensor(inputs.copy(), requires_grad=True)
        module.zero_grad()
        loss_fn(module, x).backward()
        analytic = [p.grad.copy() for p in params] + [x.grad.copy()]
        worst = 0.0
        targets = [p.data for p in params] + [None]
        for t_i, (target, grad) in enumerate(zip(targets, analytic)):
            base = inputs if target is None else target
            picks = rng.choice(base.size, min(coords, base.size), replace=False)
            hint = float(np.max(np.abs(grad), initial=0))
            num = np.empty(len(picks))
            for j, p in enumerate(picks):
                def f(step):
                    if target is None:
                        xi = inputs.copy()
                        xi.ravel()[p] += step
                    else:
                        xi = inputs
                        old = target.ravel()[p]
                        target.ravel()[p] = old + step
                    with E.no_grad():
                        val = float(loss_fn(module, E.Tensor(xi)).data)
                    if target is not None:
                        target.ravel()[p] = old
                    return val
                num[j] = _central(f, hint)
            worst = max(worst, rel_error(grad.ravel()[picks], num))
        return worst


# --- one random instance per call, for every primitive ------------------------------

def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(x >= 0, x + gap, x - gap)


def case_add(rng):
    b, n = rng.integers(1, 5, 2)
    return (lambda t: E.add(t[0], t[1])), [rng.normal(size=(b, n)), rng.normal(size=(1, n))]


def case_mul(rng):
    b, n = rng.integers(1, 5, 2)
    return (lambda t: E.mul(t[0], t[1])), [rng.normal(size=(b, n)), rng.normal(size=(n,))]


def case_scalar_ops(rng):
    c = float(rng.normal())
    return (lambda t: E.add_scalar(E.scale(E.neg(t[0]), c), 0.3)), [rng.normal(size=(3, 4))]


def case_relu(rng):
    return (lambda t: E.relu(t[0])), [_away_from_zero(rng, tuple(rng.integers(1, 6, 2)))]


def case_matmul(rng):
    a, b, c = rng.integers(1, 6, 3)
    return (lambda t: E.matmul(t[0], t[1])), [rng.normal(size=(a, b)), rng.normal(size=(b, c))]


def case_linear(rng):
    n, i, o = rng.integers(1, 6, 3)
    return (lambda t: E.linear(t[0], t[1], t[2])), [rng.normal(size=(n, i)), rng.normal(size=(o, i)),
                                                    rng.normal(size=(o,))]


def case_conv1d(rng):
    b, ci, co = rng.integers(1, 4, 3)
    k = int(rng.choice([1, 3, 5]))
    length = int(rng.integers(k, 12))
    return (lambda t: E.conv1d(t[0], t[1])), [rng.normal(size=(b, ci, length)), rng.normal(size=(co, ci, k))]


def case_maxpool(rng):
    b, c, half = rng.integers(1, 4, 3)
    # well-separated values so no pair ties within the step
    x = rng.permutation(b * c * 2 * half).reshape(b, c, 2 * half) * 0.1 + rng.normal(0, 0.01, (b, c, 2 * half))
    return (lambda t: E.maxpool1d(t[0], 2)), [x]


def case_batchnorm_train(rng):
    b, c = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    shape = (b, c) if rng.random() < 0.5 else (b, c, int(rng.integers(1, 5)))

    def fn(t):
        return E.batchnorm1d(t[0], t[1], t[2], np.zeros(c), np.ones(c), True)

    return fn, [rng.normal(size=shape), rng.normal(size=c), rng.normal(size=c)]


def case_batchnorm_eval(rng):
    b, c, length = rng.integers(1, 4, 3)
    rm, rv = rng.normal(size=c), rng.uniform(0.5, 2, size=c)

    def fn(t):
        return E.batchnorm1d(t[0], t[1], t[2], rm.copy(), rv.copy(), False)

    return fn, [rng.normal(size=(b, c, length)), rng.normal(size=c), rng.normal(size=c)]


def case_l2_normalize(rng):
    n, d = rng.integers(1, 5), rng.integers(2, 6)
    return (lambda t: E.l2_normalize(t[0], 1e-12)), [rng.normal(size=(n, d))]


def case_cross_entropy(rng):
    n, c = int(rng.integers(1, 6)), int(rng.integers(2, 6))
    labels = rng.integers(0, c, n)
    return (lambda t: E.softmax_cross_entropy(t[0], labels)), [rng.normal(size=(n, c))]


def case_concat(rng):
    b, l = rng.integers(1, 4, 2)
    c1, c2 = rng.integers(1, 4, 2)
    return (lambda t: E.concat([t[0], t[1]], axis=1)), [rng.normal(size=(b, c1, l)), rng.normal(size=(b, c2, l))]


def case_dropout(rng):
    seed = int(rng.integers(1 << 30))
    p = float(rng.uniform(0.1, 0.7))
    return (lambda t: E.dropout(t[0], p, np.random.default_rng(seed), True)), [rng.normal(size=(4, 5))]


def case_reductions(rng):
    axis = int(rng.integers(0, 2))
    return (lambda t: E.add(E.tsum(t[0], axis=axis), E.mean(t[0], axis=axis))), [rng.normal(size=(3, 4))]


def case_reshape(rng):
    return (lambda t: E.reshape(t[0], (6, -1))), [rng.normal(size=(2, 3, 4))]


PRIMITIVE_CASES = {f.__name__[5:]: f for f in (
    case_add, case_mul, case_scalar_ops, case_relu, case_matmul, case_linear, case_conv1d, case_maxpool,
    case_batchnorm_train, case_batchnorm_eval, case_l2_normalize, case_cross_entropy, case_concat,
    case_dropout, case_reductions, case_reshape)}


def smooth_instances(make_error, count, first_seed=0):
    """Errors of the first ``count`` seeds whose instances avoid kinks, and the number skipped."""
    errors, skipped, seed = [], 0, first_seed
    while len(errors) < count:
        try:
            errors.append(make_error(seed))
        except Kink:
            skipped += 1
        seed += 1
    return errors, skipped


def composed_loss_error(seed):
    """Encoder + projection head under InfoNCE against a fixed key set and queue."""
    from noisy_sei.cvnn import ContrastiveNet, Encoder, EncoderConfig, ProjectionHead
    from noisy_sei.moco import info_nce
    rng = np.random.default_rng(seed)
    with E.float64():
        enc = Encoder(EncoderConfig(num_blocks=2, filters=2, kernel_len=3, embed_dim=8), 16, rng)
        net = ContrastiveNet(enc, ProjectionHead(8, 8, rng))
        x = rng.normal(size=(4, 2, 16))
        keys = rng.normal(size=(4, 8))
        keys /= np.linalg.norm(keys, axis=1, keepdims=True)
        queue = rng.normal(size=(6, 8))
        queue /= np.linalg.norm(queue, axis=1, keepdims=True)

        def loss(m, inp):
            return info_nce(E.l2_normalize(m(inp)), keys, queue, 0.5)

        return check_module(loss, net.train(), x, rng)


def classifier_loss_error(seed):
    """Encoder + classifier head under cross-entropy (dropout disabled)."""
    from noisy_sei.cvnn import CVNNClassifier, EncoderConfig
    rng = np.random.default_rng(seed)
    with E.float64():
        model = CVNNClassifier(EncoderConfig(num_blocks=2, filters=2, kernel_len=3, embed_dim=8), 16, 3,
                               rng, hidden_dim=6, dropout=0.0)
        x = rng.normal(size=(5, 2, 16))
        y = rng.integers(0, 3, 5)
        return check_module(lambda m, inp: E.softmax_cross_entropy(m(inp), y), model.train(), x, rng)

"""Independent oracles shared by the test modules."""

import numpy as np

from scene2patch import ndcore as nd


def param(arr, name="p"):
    return nd.Parameter(np.asarray(arr, dtype=np.float64), name=name)


def rand(rng, *shape):
    return rng.normal(size=shape)


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def finite_difference(loss_fn, arr, indices, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. ``arr[idx]`` for each index, in place."""
    out = []
    for idx in indices:
        orig = arr[idx]
        arr[idx] = orig + h
        fp = loss_fn()
        arr[idx] = orig - h
        fm = loss_fn()
        arr[idx] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def sample_indices(shape, n, rng):
    flat = rng.choice(int(np.prod(shape)), size=min(n, int(np.prod(shape))), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def check_grads(build_loss, tensors, n_per_tensor=30, seed=0, h=1e-5):
    """Max relative error between taped gradients and central differences.

    ``build_loss()`` runs the forward pass and returns a scalar Tensor; every
    tensor in ``tensors`` must require a gradient.
    """
    for t in tensors:
        if isinstance(t, nd.Parameter):
            t.zero_grad()
        else:
            t.grad = None
    with nd.Tape() as tape:
        loss = build_loss()
    nd.backward(loss, tape)
    analytic = [t.grad.copy() for t in tensors]

    def value():
        return build_loss().item()

    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for t, g in zip(tensors, analytic):
        idx = sample_indices(t.shape, n_per_tensor, rng)
        numeric = finite_difference(value, t.data, idx, h)
        worst = max(worst, float(rel_error([g[i] for i in idx], numeric).max()))
        count += len(idx)
    return worst, count


def conv2d_reference(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation."""
    bsz, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h - k + 2 * padding) // stride + 1
    wo = (wd - k + 2 * padding) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, o, i, j] = (patch * w[o]).sum() + b[o]
    return out


def iou_by_sets(true, pred, n_classes, exclude=()):
    """mIoU from explicit index sets per class."""
    true = np.asarray(true).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    keep = np.array([t not in exclude for t in true])
    units = [i for i in range(true.size) if keep[i]]
    ious = []
    for c in range(n_classes):
        if c in exclude:
            continue
        t_set = {i for i in units if true[i] == c}
        p_set = {i for i in units if pred[i] == c}
        union = t_set | p_set
        if union:
            ious.append(len(t_set & p_set) / len(union))
    return float(np.mean(ious))


def op_gradient_cases():
    """name -> (loss builder, tensors to check) for every differentiable op."""
    rng = np.random.default_rng(10)
    cases = {}

    x = nd.Tensor(rand(rng, 2, 3, 7, 7), requires_grad=True)
    w, b = param(rand(rng, 4, 3, 3, 3)), param(rand(rng, 4))
    probe = rand(rng, 2, 4, 4, 4)
    cases["conv2d_s2_p1"] = (lambda: nd.sum_all(nd.linear(
        nd.reshape(nd.conv2d(x, w, b, 2, 1), (1, -1)), nd.Tensor(probe.reshape(1, -1)))), [x, w, b])

    x2 = nd.Tensor(rand(rng, 2, 3, 5, 5), requires_grad=True)
    w2, b2 = param(rand(rng, 2, 3, 2, 2)), param(rand(rng, 2))
    probe2 = rand(rng, 1, 2 * 2 * 4 * 4)
    cases["conv2d_s1_p0"] = (lambda: nd.sum_all(nd.linear(
        nd.reshape(nd.conv2d(x2, w2, b2), (1, -1)), nd.Tensor(probe2))), [x2, w2, b2])

    xt = nd.Tensor(rand(rng, 1, 4, 3, 3), requires_grad=True)
    wt, bt = param(rand(rng, 4, 2, 2, 2)), param(rand(rng, 2))
    probet = rand(rng, 1, 2 * 6 * 6)
    cases["conv_transpose"] = (lambda: nd.sum_all(nd.linear(
        nd.reshape(nd.conv_transpose2d_k2s2(xt, wt, bt), (1, -1)), nd.Tensor(probet))), [xt, wt, bt])

    # distinct, well-separated values so no window has a near tie
    xp = nd.Tensor(rng.permutation(2 * 3 * 6 * 6).reshape(2, 3, 6, 6) * 0.1, requires_grad=True)
    probep = rand(rng, 1, 2 * 3 * 3 * 3)
    cases["maxpool"] = (lambda: nd.sum_all(nd.linear(
        nd.reshape(nd.maxpool2d(xp, 2, 2), (1, -1)), nd.Tensor(probep))), [xp])

    xl = nd.Tensor(rand(rng, 3, 5), requires_grad=True)
    wl, bl = param(rand(rng, 4, 5)), param(rand(rng, 4))
    target = rng.dirichlet(np.ones(4))
    cases["linear_mean_rmse"] = (lambda: nd.rmse_loss(nd.mean_over_instances(nd.linear(xl, wl, bl)), target),
                                 [xl, wl, bl])

    xr = nd.Tensor(rng.choice([-1, 1], size=(4, 6)) * rng.uniform(0.1, 1.0, size=(4, 6)), requires_grad=True)
    prober = rand(rng, 6, 1)
    cases["relu"] = (lambda: nd.sum_all(nd.linear(nd.relu(xr), nd.Tensor(prober.T))), [xr])

    xd = nd.Tensor(rand(rng, 5, 6), requires_grad=True)
    probed = rand(rng, 1, 6)

    def dropout_loss():
        return nd.sum_all(nd.linear(nd.dropout(xd, 0.4, True, np.random.default_rng(7)), nd.Tensor(probed)))
    cases["dropout"] = (dropout_loss, [xd])

    xu = nd.Tensor(rand(rng, 1, 2, 3, 4), requires_grad=True)
    probeu = rand(rng, 1, 2 * 6 * 8)
    cases["upsample_bilinear"] = (lambda: nd.sum_all(nd.linear(
        nd.reshape(nd.upsample_bilinear(xu, 6, 8), (1, -1)), nd.Tensor(probeu))), [xu])

    xa, xb = nd.Tensor(rand(rng, 1, 2, 3, 3), requires_grad=True), nd.Tensor(rand(rng, 1, 3, 3, 3), requires_grad=True)
    probec = rand(rng, 1, 5)
    cases["concat_gap"] = (lambda: nd.sum_all(nd.linear(nd.global_avg_pool(nd.concat([xa, xb], axis=1)),
                                                        nd.Tensor(probec))), [xa, xb])

    xs, ys = nd.Tensor(rand(rng, 3, 3), requires_grad=True), nd.Tensor(rand(rng, 3, 3), requires_grad=True)
    targets = rng.normal(size=9)
    cases["add_scale"] = (lambda: nd.rmse_loss(nd.reshape(nd.add(nd.scale(xs, 1.7), ys), (-1,)), targets),
                          [xs, ys])
    return cases


def _pool_margin(x):
    """Smallest gap between the top two values of 2x2 windows whose max is positive."""
    b, c, h, w = x.shape
    win = x[:, :, :h // 2 * 2, :w // 2 * 2].reshape(b, c, h // 2, 2, w // 2, 2)
    win = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4), axis=1)
    live = win[:, -1] > 0
    return float((win[live, -1] - win[live, -2]).min()) if live.any() else np.inf


def miniature_composite(seed):
    """conv -> relu -> pool -> conv -> relu -> pool -> FC -> relu -> FC -> mean -> RMSE
    over a two-patch bag. Returns (build_loss, parameters, kink margin)."""
    rng = np.random.default_rng(seed)
    x = nd.Tensor(rand(rng, 2, 3, 8, 8))
    w1, b1 = param(0.5 * rand(rng, 4, 3, 3, 3)), param(0.1 * rand(rng, 4))
    w2, b2 = param(0.5 * rand(rng, 5, 4, 2, 2)), param(0.1 * rand(rng, 5))
    f1, c1 = param(0.5 * rand(rng, 6, 5)), param(0.1 * rand(rng, 6))
    f2, c2 = param(0.5 * rand(rng, 3, 6)), param(0.1 * rand(rng, 3))
    target = rng.dirichlet(np.ones(3))
    margins = []

    def build_loss(track=False):
        a1 = nd.conv2d(x, w1, b1)
        h = nd.maxpool2d(nd.relu(a1), 2, 2)
        a2 = nd.conv2d(h, w2, b2)
        r2 = nd.relu(a2)
        h = nd.flatten(nd.maxpool2d(r2, 2, 2))
        a3 = nd.linear(h, f1, c1)
        out = nd.linear(nd.relu(a3), f2, c2)
        if track:
            margins.extend([np.abs(a1.data).min(), np.abs(a2.data).min(), np.abs(a3.data).min(),
                            _pool_margin(np.maximum(a1.data, 0)), _pool_margin(r2.data)])
        return nd.rmse_loss(nd.mean_over_instances(out), target)

    build_loss(track=True)
    return build_loss, [w1, b1, w2, b2, f1, c1, f2, c2], float(min(margins))

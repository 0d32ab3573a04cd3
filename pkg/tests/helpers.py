"""Independent reference implementations used as test oracles.

Everything here deliberately avoids the library's own vectorized paths:
pure-Python loops and scalar math, so a bug in the package cannot hide in
its oracle.
"""

import math

import numpy as np


def ref_score_pair(params, v, e):
    """Loop-based forward pass of the relation scorer: (score, logit)."""
    h = [float(x) for x in v] + [float(x) for x in e]
    last = len(params.weights) - 1
    for li, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += h[i] * float(w[i, j])
            out.append(s)
        if li < last:
            out = [o if o > 0.0 else params.slope * o for o in out]
        h = out
    z = h[0]
    return 1.0 / (1.0 + math.exp(-z)), z


def ref_scalar_adam(x0, grad_fn, lr, beta1, beta2, eps, steps):
    """Hand-rolled scalar Adam trajectory."""
    m = v = 0.0
    x = x0
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        x -= lr * mhat / (math.sqrt(vhat) + eps)
        traj.append(x)
    return traj


def flat_param_views(params):
    """(array, index) pairs covering every parameter coordinate."""
    views = []
    for arr in (*params.weights, *params.biases):
        flat = arr.reshape(-1)
        for i in range(flat.shape[0]):
            views.append((flat, i))
    return views


def central_difference_check(params, vs, protos, targets, h=1e-5, rtol=1e-4,
                             coords=None):
    """Compare every analytic gradient coordinate with central differences.

    Relative error uses the guarded denominator max(|analytic|, |fd|, 1e-3),
    so near-zero coordinates are compared absolutely at rtol * 1e-3. Returns
    the worst guarded relative error seen.
    """
    from tfa.alignment import loss_and_grad

    _, grads = loss_and_grad(params, vs, protos, targets)
    flat_grads = []
    for arr in (*grads.d_weights, *grads.d_biases):
        flat_grads.extend(arr.reshape(-1).tolist())
    views = flat_param_views(params)
    assert len(views) == len(flat_grads)
    if coords is None:
        coords = range(len(views))
    worst = 0.0
    for c in coords:
        flat, i = views[c]
        keep = flat[i]
        flat[i] = keep + h
        up = loss_and_grad(params, vs, protos, targets)[0]
        flat[i] = keep - h
        down = loss_and_grad(params, vs, protos, targets)[0]
        flat[i] = keep
        fd = (up - down) / (2.0 * h)
        ana = flat_grads[c]
        err = abs(ana - fd) / max(abs(ana), abs(fd), 1e-3)
        worst = max(worst, err)
        assert err <= rtol, (
            f"coordinate {c}: analytic {ana:.10g} vs finite difference {fd:.10g} "
            f"(guarded relative error {err:.3g})")
    return worst


def nearest_prototype_predictions(data, prototypes, indices):
    """Brute-force cosine argmax against all prototypes."""
    protos = sorted(prototypes, key=lambda p: p.class_id)
    ids = np.array([p.class_id for p in protos])
    mat = np.vstack([p.vector for p in protos])
    preds = []
    for i in indices:
        v = data.vectors[int(i)]
        sims = [float(np.dot(v, mat[j]) / (np.linalg.norm(v) * np.linalg.norm(mat[j])))
                for j in range(mat.shape[0])]
        preds.append(int(ids[int(np.argmax(sims))]))
    return np.array(preds)


def make_unit(stream, m):
    v = stream.normal(m)
    return v / np.linalg.norm(v)

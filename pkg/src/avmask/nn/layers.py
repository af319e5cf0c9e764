"""LSTM/BLSTM stacks and bounded dense heads with explicit backpropagation.

Arrays are batch-major: inputs have shape (B, T, features). Parameters
live in a flat ``dict`` keyed by dotted names; every ``forward`` returns a
cache consumed by the matching ``backward``, which accumulates parameter
gradients into a dict of the same layout and returns the input gradient.

Gate order inside the stacked weight matrices is input, forget, cell, output.
"""

import numpy as np
from scipy.special import expit


def init_lstm(params, prefix, n_in, units, rng):
    """Orthogonal recurrent blocks, Glorot-uniform input blocks, forget bias 1."""
    limit = np.sqrt(6.0 / (n_in + units))
    wx = rng.uniform(-limit, limit, size=(n_in, 4 * units))
    wh = np.concatenate([_orthogonal(units, rng) for _ in range(4)], axis=1)
    b = np.zeros(4 * units)
    b[units : 2 * units] = 1.0
    params[prefix + ".Wx"] = wx
    params[prefix + ".Wh"] = wh
    params[prefix + ".b"] = b


def _orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def lstm_forward(params, prefix, x):
    wx, wh, b = params[prefix + ".Wx"], params[prefix + ".Wh"], params[prefix + ".b"]
    x = np.ascontiguousarray(x)  # reversed views would bypass BLAS
    n_batch, n_steps, _ = x.shape
    units = wh.shape[0]
    pre = x @ wx + b
    hs = np.empty((n_batch, n_steps, units))
    cs = np.empty((n_batch, n_steps, units))
    tcs = np.empty((n_batch, n_steps, units))
    acts = np.empty((n_batch, n_steps, 4 * units))
    h = np.zeros((n_batch, units))
    c = np.zeros((n_batch, units))
    for t in range(n_steps):
        z = pre[:, t] + h @ wh
        a = acts[:, t]
        a[:, : 2 * units] = expit(z[:, : 2 * units])
        a[:, 2 * units : 3 * units] = np.tanh(z[:, 2 * units : 3 * units])
        a[:, 3 * units :] = expit(z[:, 3 * units :])
        c = a[:, units : 2 * units] * c + a[:, :units] * a[:, 2 * units : 3 * units]
        tc = np.tanh(c)
        h = a[:, 3 * units :] * tc
        hs[:, t], cs[:, t], tcs[:, t] = h, c, tc
    return hs, (x, hs, cs, tcs, acts)


def lstm_backward(params, prefix, cache, dhs, grads):
    x, hs, cs, tcs, acts = cache
    wx, wh = params[prefix + ".Wx"], params[prefix + ".Wh"]
    n_batch, n_steps, units = hs.shape
    dz = np.empty((n_batch, n_steps, 4 * units))
    dh_next = np.zeros((n_batch, units))
    dc_next = np.zeros((n_batch, units))
    zeros = np.zeros((n_batch, units))
    for t in range(n_steps - 1, -1, -1):
        a = acts[:, t]
        i, f = a[:, :units], a[:, units : 2 * units]
        g, o = a[:, 2 * units : 3 * units], a[:, 3 * units :]
        tc = tcs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else zeros
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d = dz[:, t]
        d[:, :units] = dc * g * i * (1.0 - i)
        d[:, units : 2 * units] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * units : 3 * units] = dc * i * (1.0 - g * g)
        d[:, 3 * units :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ wh.T
    h_prev = np.zeros_like(hs)
    h_prev[:, 1:] = hs[:, :-1]
    flat_dz = dz.reshape(-1, 4 * units)
    _acc(grads, prefix + ".Wx", x.reshape(-1, x.shape[2]).T @ flat_dz)
    _acc(grads, prefix + ".Wh", h_prev.reshape(-1, units).T @ flat_dz)
    _acc(grads, prefix + ".b", flat_dz.sum(axis=0))
    return dz @ wx.T


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def init_blstm_stack(params, prefix, n_in, units, n_layers, rng):
    for k in range(n_layers):
        layer_in = n_in if k == 0 else 2 * units
        init_lstm(params, f"{prefix}.l{k}.fw", layer_in, units, rng)
        init_lstm(params, f"{prefix}.l{k}.bw", layer_in, units, rng)


def stack_depth(params, prefix):
    k = 0
    while f"{prefix}.l{k}.fw.Wx" in params:
        k += 1
    return k


def blstm_stack_forward(params, prefix, x):
    """Run stacked BLSTM layers; each layer emits [forward, backward] concatenated."""
    caches = []
    for k in range(stack_depth(params, prefix)):
        hf, cf = lstm_forward(params, f"{prefix}.l{k}.fw", x)
        hb, cb = lstm_forward(params, f"{prefix}.l{k}.bw", x[:, ::-1])
        caches.append((cf, cb))
        x = np.concatenate([hf, hb[:, ::-1]], axis=2)
    return x, caches


def blstm_stack_backward(params, prefix, caches, dout, grads):
    for k in range(len(caches) - 1, -1, -1):
        cf, cb = caches[k]
        units = params[f"{prefix}.l{k}.fw.Wh"].shape[0]
        dx_f = lstm_backward(params, f"{prefix}.l{k}.fw", cf, dout[:, :, :units], grads)
        dx_b = lstm_backward(
            params, f"{prefix}.l{k}.bw", cb, np.ascontiguousarray(dout[:, ::-1, units:]), grads
        )
        dout = dx_f + dx_b[:, ::-1]
    return dout


def init_dense(params, prefix, n_in, n_out, rng):
    limit = np.sqrt(6.0 / (n_in + n_out))
    params[prefix + ".W"] = rng.uniform(-limit, limit, size=(n_in, n_out))
    params[prefix + ".b"] = np.zeros(n_out)


def bounded_head_forward(params, prefix, x, scale):
    """Affine map followed by ``scale * sigmoid``; output lies in (0, scale)."""
    s = expit(x @ params[prefix + ".W"] + params[prefix + ".b"])
    return scale * s, (x, s, scale)


def bounded_head_backward(params, prefix, cache, dout, grads):
    x, s, scale = cache
    dpre = dout * scale * s * (1.0 - s)
    flat = dpre.reshape(-1, dpre.shape[-1])
    _acc(grads, prefix + ".W", x.reshape(-1, x.shape[-1]).T @ flat)
    _acc(grads, prefix + ".b", flat.sum(axis=0))
    return dpre @ params[prefix + ".W"].T

"""Shared instance builders and naive reference implementations."""

import numpy as np

from sparsevb.core import FactorState, Observation


def random_state(rng, L, M, H, var_scale=1.0):
    return FactorState(
        rng.standard_normal((L, H)),
        rng.standard_normal((H, M)),
        var_scale * rng.uniform(0.2, 1.5, (L, H)),
        var_scale * rng.uniform(0.2, 1.5, (M, H)),
    )


def random_obs(rng, L, M, miss=0.0):
    mask = (rng.random((L, M)) >= miss).astype(float)
    return Observation(rng.standard_normal((L, M)), mask)


def naive_sigma_hat_a(state, obs, sigma2, c_a, l):
    H = state.a_mean.shape[1]
    M = obs.shape[1]
    out = np.zeros((H, H))
    for h in range(H):
        for hp in range(H):
            acc = sigma2 / c_a[h] if h == hp else 0.0
            for m in range(M):
                t = obs.mask[l, m]
                acc += t * ((state.sigma_b[m, h] if h == hp else 0.0)
                            + state.b_mean[h, m] * state.b_mean[hp, m])
            out[h, hp] = acc
    return out


def naive_sigma_hat_b(state, obs, m, extra_diag=0.0):
    H = state.a_mean.shape[1]
    L = obs.shape[0]
    out = np.zeros((H, H))
    for h in range(H):
        for hp in range(H):
            acc = extra_diag if h == hp else 0.0
            for l in range(L):
                t = obs.mask[l, m]
                acc += t * ((state.sigma_a[l, h] if h == hp else 0.0)
                            + state.a_mean[l, h] * state.a_mean[l, hp])
            out[h, hp] = acc
    return out


def naive_update_a(state, obs, sigma2, c_a):
    L, H = state.a_mean.shape
    M = obs.shape[1]
    a = np.zeros((L, H))
    s = np.zeros((L, H))
    for l in range(L):
        inv = np.linalg.inv(naive_sigma_hat_a(state, obs, sigma2, c_a, l))
        for h in range(H):
            acc = 0.0
            for m in range(M):
                for hp in range(H):
                    acc += obs.mask[l, m] * inv[h, hp] * obs.V[l, m] * state.b_mean[hp, m]
            a[l, h] = acc
            s[l, h] = sigma2 * inv[h, h]
    return a, s


def naive_update_b_uniform(state, obs, sigma2, extra_diag=0.0):
    L, H = state.a_mean.shape
    M = obs.shape[1]
    b = np.zeros((H, M))
    s = np.zeros((M, H))
    for m in range(M):
        inv = np.linalg.inv(naive_sigma_hat_b(state, obs, m, extra_diag))
        for h in range(H):
            acc = 0.0
            for l in range(L):
                for hp in range(H):
                    acc += obs.mask[l, m] * inv[h, hp] * obs.V[l, m] * state.a_mean[l, hp]
            b[h, m] = acc
            s[m, h] = sigma2 * inv[h, h]
    return b, s


def rel_err(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.max(np.abs(x - y) / np.maximum(np.abs(y), 1e-300)))

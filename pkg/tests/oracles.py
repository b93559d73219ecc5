"""Slow reference implementations used only by the tests."""

import math

import numpy as np


def ln_rows(x, g, b, eps):
    out = np.empty_like(x)
    for i, row in enumerate(x):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = (row - mu) / math.sqrt(var + eps) * g + b
    return out


def gelu_scalar(v):
    return 0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v**3)))


def masked_block(tokens, coords, keep, b, heads, eps):
    """One pre-norm block over the full token set with pruned columns masked to -inf.

    Returns output rows for the kept tokens only, so it can be compared with
    physically gathered execution.
    """
    n, e = tokens.shape
    dh = e // heads
    z = ln_rows(tokens, b.ln1_g, b.ln1_b, eps)
    q, k, v = z @ b.w_q, z @ b.w_k, z @ b.w_v
    att_out = np.zeros((n, e))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            if not keep[i]:
                continue
            logits = np.full(n, -np.inf)
            for j in range(n):
                if keep[j]:
                    dist = math.hypot(*(coords[i] - coords[j]))
                    logits[j] = float(q[i, sl] @ k[j, sl]) / math.sqrt(dh) - b.dist_slope[h] * dist
            w = np.exp(logits - logits.max())
            w /= w.sum()
            att_out[i, sl] = w @ v[:, sl]
    x = tokens + att_out @ b.w_o + b.b_o
    z2 = ln_rows(x, b.ln2_g, b.ln2_b, eps)
    hid = np.vectorize(gelu_scalar)(z2 @ b.w_fc1 + b.b_fc1)
    x = x + hid @ b.w_fc2 + b.b_fc2
    return x[keep]


def hand_flops(cfg, counts):
    """Dense-style spreadsheet: every matrix product costs 2*rows*inner*cols."""
    e, hid = cfg.embed_dim, int(round(cfg.mlp_ratio * cfg.embed_dim))
    total = 0.0
    for n in counts:
        total += 2 * n * e * e * 3      # Q, K, V
        total += 2 * n * e * n          # scores
        total += 2 * n * n * e          # mixing values
        total += 2 * n * e * e          # output projection
        total += 2 * n * e * hid        # fc1
        total += 2 * n * hid * e        # fc2
    return total

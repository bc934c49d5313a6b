"""Independent reference implementations used as test oracles.

Everything here is written with explicit Python loops over floats (or mpmath
for extended precision) and shares no code with the package's fast paths.
"""
from __future__ import annotations

import math

import mpmath

mpmath.mp.dps = 40


def tolist(a):
    return a.tolist() if hasattr(a, "tolist") else a


def matmul(a, b):
    a, b = tolist(a), tolist(b)
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def softmax(row):
    mx = max(row)
    e = [math.exp(x - mx) for x in row]
    s = sum(e)
    return [x / s for x in e]


def softmax_mp(row):
    e = [mpmath.exp(mpmath.mpf(x)) for x in row]
    s = mpmath.fsum(e)
    return [float(x / s) for x in e]


def layer_norm_row(row, eps=1e-5):
    vals = [mpmath.mpf(x) for x in row]
    mean = mpmath.fsum(vals) / len(vals)
    var = mpmath.fsum((v - mean) ** 2 for v in vals) / len(vals)
    return [float((v - mean) / mpmath.sqrt(var + eps)) for v in vals]


def layer_norm(m, eps=1e-5):
    return [layer_norm_row(r, eps) for r in tolist(m)]


def gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def attention(q_in, kv_in, w_q, w_k, w_v, w_o, n_heads, mask=None):
    q, k, v = matmul(q_in, w_q), matmul(kv_in, w_k), matmul(kv_in, w_v)
    d_model = len(q[0])
    hd = d_model // n_heads
    keep = [True] * len(k) if mask is None else list(tolist(mask))
    ctx = [[0.0] * d_model for _ in q]
    for h in range(n_heads):
        cols = range(h * hd, (h + 1) * hd)
        for i in range(len(q)):
            idx = [j for j in range(len(k)) if keep[j]]
            logits = [sum(q[i][c] * k[j][c] for c in cols) / math.sqrt(hd) for j in idx]
            w = softmax(logits)
            for c in cols:
                ctx[i][c] = sum(w[t] * v[j][c] for t, j in enumerate(idx))
    return matmul(ctx, w_o)


def feed_forward(m, w1, w2, b1, b2):
    h = matmul(m, w1)
    b1, b2 = tolist(b1), tolist(b2)
    h = [[gelu(x + b1[j]) for j, x in enumerate(row)] for row in h]
    out = matmul(h, w2)
    return [[x + b2[j] for j, x in enumerate(row)] for row in out]


def add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def scale(a, s):
    return [[s * x for x in r] for r in a]


def attn_of(module, q_in, kv_in, mask=None):
    """Oracle attention using the weights of an ``pca.nn.Attention`` module."""
    return attention(q_in, kv_in, module.w_q.detach(), module.w_k.detach(), module.w_v.detach(),
                     module.w_o.detach(), module.n_heads, mask)


def ffn_of(module, m):
    return feed_forward(m, module.w1.detach(), module.w2.detach(), module.b1.detach(), module.b2.detach())


def compress(block, f, modality, mask=None):
    """Oracle of the adapter compression chain (adapt / res_prompt variants)."""
    p = layer_norm(block.p_raw.detach())
    h = attn_of(block.compress_attn[modality], p, tolist(f), mask)
    if block.variant == "adapt":
        n = layer_norm(h)
        h = add(h, attn_of(block.self_attn, n, n))
        h = add(h, ffn_of(block.ffn, layer_norm(h)))
    return h


def adapter_forward(block, f_b, f_v=None, f_t=None):
    f_b = tolist(f_b)
    w1 = block.w1.item()
    w2 = block.w2.item() if block.textual else 0.0
    out = f_b
    if block.variant == "addition":
        for mod, f, w in (("visual", f_v, w1), ("textual", f_t, w2)):
            if f is None or (mod == "textual" and not block.textual):
                continue
            f = tolist(f)
            pooled = [sum(col) / len(f) for col in zip(*f)]
            proj = matmul([pooled], block.proj[f"{mod}_w"].detach())[0]
            bias = tolist(block.proj[f"{mod}_b"].detach())
            proj = [x + b for x, b in zip(proj, bias)]
            out = [[x + w * y for x, y in zip(row, proj)] for row in out]
        return out
    for mod, f, w in (("visual", f_v, w1), ("textual", f_t, w2)):
        if f is None or (mod == "textual" and not block.textual):
            continue
        kv = tolist(f) if block.variant == "res_cross" else compress(block, f, mod)
        out = add(out, scale(attn_of(block.fuse_attn[mod], layer_norm(f_b), kv), w))
    return out


# ------------------------------------------------------------------- metrics

def micro_f1(scores, targets, thr=0.5):
    tp = fp = fn = 0
    for srow, trow in zip(tolist(scores), tolist(targets)):
        for s, t in zip(srow, trow):
            p = s >= thr
            if p and t:
                tp += 1
            elif p and not t:
                fp += 1
            elif t and not p:
                fn += 1
    if tp == fp == fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def _rank(values, i):
    """0-based rank of item i under (value desc, index asc)."""
    return sum(1 for j, v in enumerate(values) if v > values[i] or (v == values[i] and j < i))


def top_k(scores, targets, k):
    hits = 0
    for row, t in zip(tolist(scores), tolist(targets)):
        hits += _rank(row, int(t)) < k
    return hits / len(tolist(targets))


def average_precision(scores, labels):
    scores, labels = tolist(scores), tolist(labels)
    pos = [i for i, l in enumerate(labels) if l]
    if not pos:
        return None
    total = 0.0
    for i in pos:
        r = _rank(scores, i)
        above = sum(1 for j in pos if _rank(scores, j) <= r)
        total += above / (r + 1)
    return total / len(pos)


def mean_ap(scores, targets):
    scores, targets = tolist(scores), tolist(targets)
    aps = []
    for c in range(len(scores[0])):
        ap = average_precision([r[c] for r in scores], [r[c] for r in targets])
        if ap is not None:
            aps.append(ap)
    return sum(aps) / len(aps)


def adamw_step(p, g, lr, beta1, beta2, eps, wd):
    """One AdamW update from zero moments, step 1, in closed form."""
    m = (1 - beta1) * g
    v = (1 - beta2) * g * g
    m_hat = m / (1 - beta1)
    v_hat = v / (1 - beta2)
    return p - lr * wd * p - lr * m_hat / (math.sqrt(v_hat) + eps)

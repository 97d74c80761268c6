"""Independent reference implementations used by the unit and acceptance tests.

Each oracle is written directly from the definition (loops, brute force,
breadth-first search) and shares no code with the package under test.
"""

import itertools
import math
from collections import deque

import numpy as np


def attention_loops(x, attn, mask=None):
    """Direct per-head evaluation of softmax(QK^T/sqrt(d) + mask) V for one window."""
    t, c = x.shape
    h, d = attn.num_heads, attn.head_dim
    wq = attn.qkv_weight.data
    qkv = x @ wq + attn.qkv_bias.data
    heads = []
    for head in range(h):
        q = qkv[:, head * d:(head + 1) * d]
        k = qkv[:, c + head * d:c + (head + 1) * d]
        v = qkv[:, 2 * c + head * d:2 * c + (head + 1) * d]
        out = np.zeros((t, d))
        for i in range(t):
            logits = [sum(q[i, a] * k[j, a] for a in range(d)) / math.sqrt(d) for j in range(t)]
            if mask is not None:
                logits = [lg + mask[head, i, j] for j, lg in enumerate(logits)]
            top = max(logits)
            e = [math.exp(lg - top) for lg in logits]
            s = sum(e)
            for j in range(t):
                out[i] += e[j] / s * v[j]
        heads.append(out)
    return np.concatenate(heads, axis=1) @ attn.proj_weight.data + attn.proj_bias.data


def region_of(q, n, m, s):
    if s == 0 or q < n - m:
        return 0
    return 1 if q < n - s else 2


def shifted_attention_bruteforce(x_cl, attn, window, shift):
    """Shifted-window attention computed voxel by voxel, without partition/roll helpers.

    A query at original position p sits at rolled coordinate q = (p - s) mod n.
    Its keys are the voxels whose rolled coordinates share q's window and
    q's source region along every axis.
    """
    b, d, h, w, c = x_cl.shape
    spatial = (d, h, w)
    out = np.zeros_like(x_cl)
    nh, hd = attn.num_heads, attn.head_dim
    qkv = x_cl @ attn.qkv_weight.data + attn.qkv_bias.data
    coords = list(itertools.product(*(range(n) for n in spatial)))

    def rolled(p):
        return tuple((pi - si) % n for pi, si, n in zip(p, shift, spatial))

    def key_of(q):
        win = tuple(qi // m for qi, m in zip(q, window))
        reg = tuple(region_of(qi, n, m, s) for qi, n, m, s in zip(q, spatial, window, shift))
        return win, reg

    groups = {}
    for p in coords:
        groups.setdefault(key_of(rolled(p)), []).append(p)
    for bi in range(b):
        for p in coords:
            q = rolled(p)
            members = groups[key_of(q)]
            heads = []
            for head in range(nh):
                sl = slice(head * hd, (head + 1) * hd)
                qv = qkv[bi][p][sl]
                logits = np.array([qv @ qkv[bi][m][c:][sl] for m in members]) / math.sqrt(hd)
                wts = np.exp(logits - logits.max())
                wts /= wts.sum()
                heads.append(sum(wt * qkv[bi][m][2 * c:][sl] for wt, m in zip(wts, members)))
            out[bi][p] = np.concatenate(heads) @ attn.proj_weight.data + attn.proj_bias.data
    return out


def hausdorff_bruteforce(x, y):
    a = np.argwhere(x).astype(np.int64)
    b = np.argwhere(y).astype(np.int64)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return math.sqrt(max(d2.min(axis=1).max(), d2.min(axis=0).max()))


def random_mask_pairs(n, shape=(8, 8, 8), seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n:
        x = rng.random(shape) < rng.uniform(0.01, 0.4)
        y = rng.random(shape) < rng.uniform(0.01, 0.4)
        if x.any() and y.any():
            pairs.append((x, y))
    return pairs


def flood_fill_components(mask, connectivity):
    """Breadth-first labelling; returns a list of components as sets of voxel tuples, in scan order."""
    fg = np.asarray(mask, bool)
    offs = [o for o in np.ndindex(3, 3, 3) if o != (1, 1, 1)]
    offs = [tuple(c - 1 for c in o) for o in offs]
    if connectivity == 6:
        offs = [o for o in offs if sum(map(abs, o)) == 1]
    seen = np.zeros_like(fg)
    comps = []
    for start in zip(*np.nonzero(fg)):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = {start}, deque([start])
        while queue:
            v = queue.popleft()
            for o in offs:
                w = tuple(a + b for a, b in zip(v, o))
                if all(0 <= c < n for c, n in zip(w, fg.shape)) and fg[w] and not seen[w]:
                    seen[w] = True
                    comp.add(w)
                    queue.append(w)
        comps.append(comp)
    return comps


def oracle_largest(mask, connectivity):
    comps = flood_fill_components(mask, connectivity)
    out = np.zeros(np.shape(mask), np.uint8)
    if comps:
        # stable max over scan order == lowest minimal linear index on ties
        best = max(comps, key=len)
        for v in best:
            out[v] = 1
    return out

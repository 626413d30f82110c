"""Independent scalar reference implementations used as test oracles.

Plain Python loops over pixels/elements, written without reusing any code
from the package so they can catch vectorization mistakes.
"""

import math


def ce_loop(logits, target, weights=None):
    """logits: nested [N][C][H][W]; target: [N][H][W]."""
    total, count = 0.0, 0
    n, c = len(logits), len(logits[0])
    h, w = len(logits[0][0]), len(logits[0][0][0])
    for b in range(n):
        for y in range(h):
            for x in range(w):
                vals = [logits[b][k][y][x] for k in range(c)]
                m = max(vals)
                lse = m + math.log(sum(math.exp(v - m) for v in vals))
                t = target[b][y][x]
                term = lse - vals[t]
                if weights is not None:
                    term *= weights[t]
                total += term
                count += 1
    return total / count


def sync_loss_loop(p, labels, eps_p=1e-7):
    total = 0.0
    for pi, yi in zip(p, labels):
        q = min(max(pi, eps_p), 1 - eps_p)
        total += -math.log(q) if yi == 1 else -math.log(1 - q)
    return total / len(p)


def cosine_prob_loop(s, m, eps=1e-8, eps_p=1e-7):
    dot = sum(a * b for a, b in zip(s, m))
    ns = math.sqrt(sum(a * a for a in s))
    nm = math.sqrt(sum(b * b for b in m))
    return min(max(dot / max(ns * nm, eps), eps_p), 1.0)


def pool_loop(feature, mask, num_regions):
    """feature: [ch][h][w] at a coarse scale; mask: [H][W] full-res labels.

    Every full-resolution pixel contributes the feature of the coarse cell
    containing it; returns per-region channel means (None for absent regions).
    """
    ch, h, w = len(feature), len(feature[0]), len(feature[0][0])
    big_h, big_w = len(mask), len(mask[0])
    sy, sx = big_h // h, big_w // w
    sums = [[0.0] * ch for _ in range(num_regions)]
    counts = [0] * num_regions
    for y in range(big_h):
        for x in range(big_w):
            j = mask[y][x]
            counts[j] += 1
            for k in range(ch):
                sums[j][k] += feature[k][y // sy][x // sx]
    return [None if counts[j] == 0 else [s / counts[j] for s in sums[j]] for j in range(num_regions)]


def psnr_loop(a, b, max_val=1.0):
    flat_a, flat_b = _flatten(a), _flatten(b)
    mse = sum((x - y) ** 2 for x, y in zip(flat_a, flat_b)) / len(flat_a)
    if mse == 0:
        return 100.0
    return min(100.0, 10 * math.log10(max_val ** 2 / mse))


def _flatten(x):
    if isinstance(x, (list, tuple)):
        out = []
        for v in x:
            out.extend(_flatten(v))
        return out
    return [float(x)]


def ssim_loop(a, b, window=8, k1=0.01, k2=0.03, max_val=1.0):
    """a, b: 2-D grayscale lists."""
    h, w = len(a), len(a[0])
    c1, c2 = (k1 * max_val) ** 2, (k2 * max_val) ** 2
    scores = []
    n = window * window
    for y in range(h - window + 1):
        for x in range(w - window + 1):
            pa = [a[y + i][x + j] for i in range(window) for j in range(window)]
            pb = [b[y + i][x + j] for i in range(window) for j in range(window)]
            ma, mb = sum(pa) / n, sum(pb) / n
            va = sum((v - ma) ** 2 for v in pa) / n
            vb = sum((v - mb) ** 2 for v in pb) / n
            cov = sum((u - ma) * (v - mb) for u, v in zip(pa, pb)) / n
            scores.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(scores) / len(scores)


def frechet_1d(mu1, var1, mu2, var2):
    return (mu1 - mu2) ** 2 + (math.sqrt(var1) - math.sqrt(var2)) ** 2


def frechet_commuting(mu1, diag1, mu2, diag2):
    """Closed form for diagonal covariances: sum (m1-m2)^2 + (sqrt(d1)-sqrt(d2))^2."""
    return sum((a - b) ** 2 for a, b in zip(mu1, mu2)) + sum(
        (math.sqrt(x) - math.sqrt(y)) ** 2 for x, y in zip(diag1, diag2))


def keypoints_loop(mask, region):
    pts = [(y, x) for y, row in enumerate(mask) for x, v in enumerate(row) if v == region]
    if not pts:
        return None
    cy = sum(p[0] for p in pts) / len(pts)
    cx = sum(p[1] for p in pts) / len(pts)
    top = min(p[0] for p in pts)
    bottom = max(p[0] for p in pts)
    left = min(p[1] for p in pts)
    right = max(p[1] for p in pts)

    def mean(vals):
        return sum(vals) / len(vals)

    return [
        (cy, cx),
        (top, mean([p[1] for p in pts if p[0] == top])),
        (bottom, mean([p[1] for p in pts if p[0] == bottom])),
        (mean([p[0] for p in pts if p[1] == left]), left),
        (mean([p[0] for p in pts if p[1] == right]), right),
    ]


def landmark_loop(pred, gt, regions, penalty):
    dists = []
    for r in regions:
        g = keypoints_loop(gt, r)
        if g is None:
            continue
        p = keypoints_loop(pred, r)
        if p is None:
            dists.extend([penalty] * 5)
            continue
        for (py, px), (gy, gx) in zip(p, g):
            dists.append(math.hypot(py - gy, px - gx))
    return sum(dists) / len(dists)


def class_weights_loop(maps, num_classes, eps=1e-6, lo=0.1, hi=10.0):
    counts = [0] * num_classes
    total = 0
    for m in maps:
        for row in m:
            for v in row:
                counts[v] += 1
                total += 1
    raw = [1.0 / (c / total + eps) for c in counts]
    mean = sum(raw) / len(raw)
    return [min(max(r / mean, lo), hi) for r in raw]

"""Independent scalar-loop oracles used to pin expected values.

Everything here is deliberately naive (plain Python loops over pixels) and
shares no code with the implementations under test.
"""

import math

import numpy as np


def conv2d_oracle(x, w, b, stride=1, padding=0, dilation=1):
    """Direct cross-correlation, one tap at a time."""
    n, ci, h, width = x.shape
    co, _, kh, kw = w.shape
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (width + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for nn in range(n):
        for oc in range(co):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(ci):
                        for i in range(kh):
                            for j in range(kw):
                                iy = oy * stride + i * dilation - padding
                                ix = ox * stride + j * dilation - padding
                                if 0 <= iy < h and 0 <= ix < width:
                                    acc += x[nn, ic, iy, ix] * w[oc, ic, i, j]
                    out[nn, oc, oy, ox] = acc
    return out


def avg_pool2_oracle(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=np.float64)
    for nn in range(n):
        for cc in range(c):
            for oy in range(h // 2):
                for ox in range(w // 2):
                    vals = [x[nn, cc, 2 * oy + dy, 2 * ox + dx]
                            for dy in range(2) for dx in range(2)]
                    out[nn, cc, oy, ox] = sum(vals) / 4.0
    return out


def upsample_bilinear_oracle(x, factor):
    """Per-pixel bilinear interpolation, align-corners false, edges clamped."""
    n, c, h, w = x.shape
    oh, ow = h * factor, w * factor
    out = np.zeros((n, c, oh, ow), dtype=np.float64)
    for nn in range(n):
        for cc in range(c):
            for oy in range(oh):
                sy = (oy + 0.5) / factor - 0.5
                y0 = math.floor(sy)
                fy = sy - y0
                y0c = min(max(y0, 0), h - 1)
                y1c = min(max(y0 + 1, 0), h - 1)
                for ox in range(ow):
                    sx = (ox + 0.5) / factor - 0.5
                    x0 = math.floor(sx)
                    fx = sx - x0
                    x0c = min(max(x0, 0), w - 1)
                    x1c = min(max(x0 + 1, 0), w - 1)
                    top = x[nn, cc, y0c, x0c] * (1 - fx) + x[nn, cc, y0c, x1c] * fx
                    bot = x[nn, cc, y1c, x0c] * (1 - fx) + x[nn, cc, y1c, x1c] * fx
                    out[nn, cc, oy, ox] = top * (1 - fy) + bot * fy
    return out


def metric_oracles(pred, truth, lam=1.25):
    """All evaluation metrics by scalar accumulation over a flat valid list."""
    pred = [float(v) for v in np.asarray(pred).ravel()]
    truth = [float(v) for v in np.asarray(truth).ravel()]
    t = len(pred)
    se = se_log = s_dlog = a_rel = s_rel = l10 = 0.0
    deltas = [0, 0, 0]
    for p, g in zip(pred, truth):
        se += (p - g) ** 2
        dl = math.log(p) - math.log(g)
        se_log += dl * dl
        s_dlog += dl
        a_rel += abs(p - g) / g
        s_rel += (p - g) ** 2 / g
        l10 += abs(math.log10(p) - math.log10(g))
        ratio = max(p / g, g / p)
        for k in range(3):
            if ratio < lam ** (k + 1):
                deltas[k] += 1
    return {
        "rmse": math.sqrt(se / t),
        "rmse_log": math.sqrt(se_log / t),
        "silog": se_log / t - (s_dlog / t) ** 2,
        "abs_rel": a_rel / t,
        "sq_rel": s_rel / t,
        "delta1": deltas[0] / t,
        "delta2": deltas[1] / t,
        "delta3": deltas[2] / t,
        "rel": a_rel / t,
        "log10": l10 / t,
    }


def ssim_constant_oracle(a, b, c1):
    """Closed form for constant images: zero variances collapse the formula."""
    return (2 * a * b + c1) / (a * a + b * b + c1)


def softmax_nll_oracle(logits, label):
    """-log softmax[label] for one pixel, plain math."""
    mx = max(logits)
    exps = [math.exp(v - mx) for v in logits]
    z = sum(exps)
    return -(logits[label] - mx - math.log(z))

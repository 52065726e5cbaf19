"""Independent reference computations used by several test modules."""

import math

import torch


def dense_window_attention(attn, x, window_size, shift):
    """Token-by-token attention over a (1, H, W, C) grid.

    Two tokens may attend to each other iff they fall in the same window of
    the cyclically shifted grid *and* their displacement is the same before
    and after the shift, i.e. no wrap-around separates them. The bias of a
    pair comes from its displacement (dr, dc) in the shifted frame.
    """
    _, h, w, c = x.shape
    heads = attn.num_heads
    hd = c // heads
    tokens = x[0].reshape(h * w, c)
    qkv = attn.qkv(tokens).reshape(h * w, 3, heads, hd)
    q, k, v = qkv[:, 0], qkv[:, 1], qkv[:, 2]
    table = attn.relative_position_bias_table
    span = 2 * attn.window_size - 1
    out = torch.zeros(h * w, heads, hd, dtype=x.dtype)
    for p in range(h * w):
        r, col = divmod(p, w)
        rs, cs = (r - shift) % h, (col - shift) % w
        logits, values = [], []
        for t in range(h * w):
            r2, c2 = divmod(t, w)
            rs2, cs2 = (r2 - shift) % h, (c2 - shift) % w
            if rs // window_size != rs2 // window_size or cs // window_size != cs2 // window_size:
                continue
            if rs - rs2 != r - r2 or cs - cs2 != col - c2:
                continue
            dr, dc = rs - rs2, cs - cs2
            bias = table[(dr + attn.window_size - 1) * span + (dc + attn.window_size - 1)]
            logits.append((q[p] * k[t]).sum(-1) / math.sqrt(hd) + bias)
            values.append(v[t])
        weights = torch.softmax(torch.stack(logits), dim=0)
        out[p] = (weights[:, :, None] * torch.stack(values)).sum(0)
    return attn.proj(out.reshape(h * w, c)).reshape(1, h, w, c)

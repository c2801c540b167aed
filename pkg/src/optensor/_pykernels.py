"""Pure numpy conv1d kernels (fallback for the compiled backend)."""
import numpy as np


def _columns(xp, k, dilation, out_w):
    # (B, C, k, out_w) view of the padded input, one slab per kernel tap
    return np.stack([xp[:, :, j * dilation:j * dilation + out_w] for j in range(k)], axis=2)


def conv1d_forward(x, w, b, dilation, pad_left, pad_right):
    bsz, cin, _ = x.shape
    cout, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad_left, pad_right))) if pad_left or pad_right else x
    out_w = xp.shape[2] - (k - 1) * dilation
    cols = _columns(xp, k, dilation, out_w)
    cols = cols.transpose(0, 3, 1, 2).reshape(bsz * out_w, cin * k)
    out = cols @ w.reshape(cout, cin * k).T
    out = np.ascontiguousarray(out.reshape(bsz, out_w, cout).transpose(0, 2, 1))
    if b is not None:
        out += b[None, :, None]
    return out


def conv1d_backward(g, x, w, dilation, pad_left, pad_right, need_x=True, need_w=True):
    bsz, cin, width = x.shape
    cout, _, k = w.shape
    out_w = g.shape[2]
    gmat = g.transpose(0, 2, 1).reshape(bsz * out_w, cout)
    gx = gw = None
    if need_w:
        xp = np.pad(x, ((0, 0), (0, 0), (pad_left, pad_right))) if pad_left or pad_right else x
        cols = _columns(xp, k, dilation, out_w).transpose(0, 3, 1, 2).reshape(bsz * out_w, cin * k)
        gw = (gmat.T @ cols).reshape(cout, cin, k)
    if need_x:
        dcols = (gmat @ w.reshape(cout, cin * k)).reshape(bsz, out_w, cin, k)
        gxp = np.zeros((bsz, cin, width + pad_left + pad_right))
        for j in range(k):
            gxp[:, :, j * dilation:j * dilation + out_w] += dcols[:, :, :, j].transpose(0, 2, 1)
        gx = np.ascontiguousarray(gxp[:, :, pad_left:pad_left + width])
    return gx, gw

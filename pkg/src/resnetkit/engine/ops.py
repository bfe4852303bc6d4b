"""Differentiable primitive layers for 2-D convolutional networks (NCHW).

Every op takes an optional :class:`~resnetkit.engine.tape.Tape`; passing
``None`` runs forward-only (no backward record is kept). Convolution uses
explicit patch expansion into a column matrix laid out so each direction
is one fat GEMM per group; pooling streams over the k*k window shifts
without materializing patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import Parameter, Tape, Tensor, check_finite


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _out_dim(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _pad_zeros(xd: np.ndarray, ph: int, pw: int) -> np.ndarray:
    n, c, h, w = xd.shape
    buf = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=xd.dtype)
    buf[:, :, ph : ph + h, pw : pw + w] = xd
    return buf


def _im2col_gemm(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """Gather windows directly into GEMM layout [C, kh, kw, N, ho, wo]."""
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw].transpose(1, 0, 2, 3)
    return cols


def _col2im_gemm(cols: np.ndarray, h: int, w: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    """Scatter-add [C, kh, kw, N, ho, wo] window gradients onto [N,C,H,W]."""
    c, kh, kw, n, ho, wo = cols.shape
    buf = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[:, i, j].transpose(1, 0, 2, 3)
    if ph or pw:
        return buf[:, :, ph : ph + h, pw : pw + w]
    return buf


def conv2d(
    tape: Tape | None,
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    *,
    stride=(1, 1),
    padding=(0, 0),
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D convolution, no implicit activation.

    x: [N, Cin, H, W]; weight: [Cout, Cin/groups, kh, kw]; bias: [Cout].
    Output channels of group g depend only on input channels of group g.
    """
    xd, wd = x.data, weight.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d input must be 4-d [N,C,H,W], got {xd.ndim}-d")
    if wd.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-d [Cout,Cin/G,kh,kw], got {wd.ndim}-d")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, cin, h, w = xd.shape
    cout, cin_g, kh, kw = wd.shape
    g = int(groups)
    if g < 1:
        raise ValueError(f"groups must be >= 1, got {g}")
    if cin % g:
        raise ValueError(f"input channels {cin} not divisible by groups {g}")
    if cout % g:
        raise ValueError(f"output channels {cout} not divisible by groups {g}")
    if cin_g != cin // g:
        raise ValueError(
            f"weight expects {cin_g} input channels per group, input supplies {cin // g}"
        )
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be positive, got ({sh},{sw})")
    if ph < 0 or pw < 0:
        raise ValueError(f"padding must be non-negative, got ({ph},{pw})")
    ho = _out_dim(h, kh, sh, ph)
    wo = _out_dim(w, kw, sw, pw)
    if ho < 1:
        raise ValueError(f"output height {ho} < 1 (H={h}, kernel={kh}, stride={sh}, pad={ph})")
    if wo < 1:
        raise ValueError(f"output width {wo} < 1 (W={w}, kernel={kw}, stride={sw}, pad={pw})")

    xp = _pad_zeros(xd, ph, pw) if (ph or pw) else xd
    kdim = (cin // g) * kh * kw
    length = ho * wo
    # one fat GEMM per group: fold batch and position into the GEMM columns
    cols = _im2col_gemm(xp, kh, kw, sh, sw, ho, wo).reshape(g, kdim, n * length)
    wmat = wd.reshape(g, cout // g, kdim)
    out = np.matmul(wmat, cols).reshape(cout, n, length).transpose(1, 0, 2).reshape(n, cout, ho, wo)
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ValueError(f"bias shape {bias.data.shape} != ({cout},)")
        out = out + bias.data[None, :, None, None]
    check_finite("conv2d", out)
    result = Tensor(out)

    if tape is not None:

        def bwd() -> None:
            if result.grad is None:
                return
            dy = (
                result.grad.reshape(n, cout, length)
                .transpose(1, 0, 2)
                .reshape(g, cout // g, n * length)
            )
            weight.accumulate(np.matmul(dy, cols.swapaxes(1, 2)).reshape(cout, cin // g, kh, kw))
            dcols = np.matmul(wmat.swapaxes(1, 2), dy).reshape(cin, kh, kw, n, ho, wo)
            x.accumulate(_col2im_gemm(dcols, h, w, sh, sw, ph, pw))
            if bias is not None:
                bias.accumulate(result.grad.sum(axis=(0, 2, 3)))

        tape.record("conv2d", bwd)
    return result


@dataclass
class BatchNormState:
    """Per-channel batch-normalization state.

    gamma/beta are learnable; running_mean/running_var blend train-mode batch
    statistics with ``momentum`` weight on the new value and feed the
    eval-mode forward. ``running_var`` stays elementwise non-negative.
    """

    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    training: bool = True

    @classmethod
    def create(cls, name: str, channels: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        return cls(
            gamma=Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype)),
            beta=Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype)),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


def batch_norm(tape: Tape | None, x: Tensor, state: BatchNormState, *, update_running: bool = True) -> Tensor:
    """Channelwise normalization with affine transform applied last.

    Train mode normalizes by batch statistics (biased variance) and, unless
    ``update_running`` is off, folds them into the running estimates. Eval
    mode normalizes by the running estimates.
    """
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"batch_norm input must be 4-d [N,C,H,W], got {xd.ndim}-d")
    n, c, h, w = xd.shape
    if c != state.channels:
        raise ValueError(f"channel mismatch: input has {c}, state has {state.channels}")
    gamma, beta = state.gamma, state.beta
    if state.training:
        n_stat = n * h * w
        if n_stat < 2:
            raise ValueError(f"train-mode batch_norm needs N*H*W >= 2, got {n_stat}")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if update_running:
            m = state.momentum
            unbiased = var * (n_stat / (n_stat - 1))
            state.running_mean = (1.0 - m) * state.running_mean + m * mean
            state.running_var = (1.0 - m) * state.running_var + m * unbiased
    else:
        mean = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    # fused per-channel affine: out = x * scale + shift
    scale = gamma.data * inv
    out = xd * scale[None, :, None, None]
    out += (beta.data - mean * scale)[None, :, None, None]
    check_finite("batch_norm", out)
    result = Tensor(out)

    if tape is not None:
        training = state.training
        n_stat = n * h * w

        def bwd() -> None:
            if result.grad is None:
                return
            dy = result.grad
            dbeta = dy.sum(axis=(0, 2, 3))
            # dgamma = sum(dy * xhat) without materializing xhat
            dgamma = inv * (np.einsum("nchw,nchw->c", dy, xd, optimize=True) - mean * dbeta)
            gamma.accumulate(dgamma.astype(dy.dtype, copy=False))
            beta.accumulate(dbeta)
            if training:
                # dx = dy*a + x*b + c with per-channel constants, from the
                # batch-statistics chain rule
                a = gamma.data * inv
                b = -inv * a * dgamma / n_stat
                c = -(mean * b) - a * dbeta / n_stat
                dx = dy * a[None, :, None, None]
                dx += xd * b[None, :, None, None]
                dx += c[None, :, None, None]
            else:
                dx = dy * (gamma.data * inv)[None, :, None, None]
            x.accumulate(dx)

        tape.record("batch_norm", bwd)
    return result


def relu(tape: Tape | None, x: Tensor) -> Tensor:
    """Elementwise max(0, x); gradient is zero at exactly 0."""
    out = np.maximum(x.data, 0)
    check_finite("relu", out)
    result = Tensor(out)
    if tape is not None:
        def bwd() -> None:
            if result.grad is None:
                return
            x.accumulate(result.grad * (x.data > 0))

        tape.record("relu", bwd)
    return result


def _pool_prologue(op: str, x: Tensor, kernel, stride, padding):
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"{op} input must be 4-d [N,C,H,W], got {xd.ndim}-d")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    ph, pw = _pair(padding)
    if kh < 1 or kw < 1 or sh < 1 or sw < 1:
        raise ValueError(f"{op}: degenerate window kernel=({kh},{kw}) stride=({sh},{sw})")
    if ph >= kh or pw >= kw or ph < 0 or pw < 0:
        raise ValueError(f"{op}: padding ({ph},{pw}) must be in [0, kernel)")
    n, c, h, w = xd.shape
    ho = _out_dim(h, kh, sh, ph)
    wo = _out_dim(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ValueError(f"{op}: degenerate output {ho}x{wo} for input {h}x{w}")
    return xd, (n, c, h, w), (kh, kw, sh, sw, ph, pw), (ho, wo)


def max_pool2d(tape: Tape | None, x: Tensor, *, kernel, stride=None, padding=(0, 0)) -> Tensor:
    """Sliding-window maximum; padded cells hold -inf and never win.

    Backward routes each output gradient to the first (row-major) maximal
    input cell of its window.
    """
    xd, (n, c, h, w), (kh, kw, sh, sw, ph, pw), (ho, wo) = _pool_prologue(
        "max_pool2d", x, kernel, stride, padding
    )
    if ph or pw:
        xp = np.full((n, c, h + 2 * ph, w + 2 * pw), -np.inf, dtype=xd.dtype)
        xp[:, :, ph : ph + h, pw : pw + w] = xd
    else:
        xp = xd
    out = None
    for i in range(kh):
        for j in range(kw):
            view = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
            if out is None:
                out = view.copy()
            else:
                np.maximum(out, view, out=out)
    check_finite("max_pool2d", out)
    result = Tensor(out)

    if tape is not None:

        def bwd() -> None:
            if result.grad is None:
                return
            dy = result.grad
            buf = np.zeros_like(xp)
            taken = np.zeros(out.shape, dtype=bool)
            # walk windows in row-major order so the first maximum wins ties
            for i in range(kh):
                for j in range(kw):
                    view = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
                    hit = (view == out) & ~taken
                    buf[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += dy * hit
                    taken |= hit
            x.accumulate(buf[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else buf)

        tape.record("max_pool2d", bwd)
    return result


def avg_pool2d(tape: Tape | None, x: Tensor, *, kernel, stride=None, padding=(0, 0)) -> Tensor:
    """Sliding-window arithmetic mean over kernel-size windows."""
    xd, (n, c, h, w), (kh, kw, sh, sw, ph, pw), (ho, wo) = _pool_prologue(
        "avg_pool2d", x, kernel, stride, padding
    )
    xp = _pad_zeros(xd, ph, pw) if (ph or pw) else xd
    scale = 1.0 / (kh * kw)
    out = np.zeros((n, c, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
    out *= scale
    check_finite("avg_pool2d", out)
    result = Tensor(out)

    if tape is not None:

        def bwd() -> None:
            if result.grad is None:
                return
            share = result.grad * scale
            buf = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=share.dtype)
            for i in range(kh):
                for j in range(kw):
                    buf[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += share
            x.accumulate(buf[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else buf)

        tape.record("avg_pool2d", bwd)
    return result


def global_avg_pool(tape: Tape | None, x: Tensor) -> Tensor:
    """Mean over the full spatial extent; output is [N, C]."""
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"global_avg_pool input must be 4-d [N,C,H,W], got {xd.ndim}-d")
    n, c, h, w = xd.shape
    if h < 1 or w < 1:
        raise ValueError(f"global_avg_pool: degenerate window {h}x{w}")
    out = xd.mean(axis=(2, 3))
    check_finite("global_avg_pool", out)
    result = Tensor(out)
    if tape is not None:
        scale = 1.0 / (h * w)

        def bwd() -> None:
            if result.grad is None:
                return
            x.accumulate(np.broadcast_to((result.grad * scale)[:, :, None, None], xd.shape).copy())

        tape.record("global_avg_pool", bwd)
    return result


def linear(tape: Tape | None, x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map: [N,D] @ [K,D]^T + [K]."""
    xd, wd = x.data, weight.data
    if xd.ndim != 2:
        raise ValueError(f"linear input must be 2-d [N,D], got {xd.ndim}-d")
    if wd.ndim != 2:
        raise ValueError(f"linear weight must be 2-d [K,D], got {wd.ndim}-d")
    if xd.shape[1] != wd.shape[1]:
        raise ValueError(f"linear: input features {xd.shape[1]} != weight features {wd.shape[1]}")
    out = xd @ wd.T
    if bias is not None:
        if bias.data.shape != (wd.shape[0],):
            raise ValueError(f"linear bias shape {bias.data.shape} != ({wd.shape[0]},)")
        out = out + bias.data[None, :]
    check_finite("linear", out)
    result = Tensor(out)

    if tape is not None:

        def bwd() -> None:
            if result.grad is None:
                return
            weight.accumulate(result.grad.T @ xd)
            x.accumulate(result.grad @ wd)
            if bias is not None:
                bias.accumulate(result.grad.sum(axis=0))

        tape.record("linear", bwd)
    return result


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of identically shaped tensors."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data
    check_finite("add", out)
    result = Tensor(out)
    if tape is not None:
        def bwd() -> None:
            if result.grad is None:
                return
            a.accumulate(result.grad)
            b.accumulate(result.grad)

        tape.record("add", bwd)
    return result


def softmax_cross_entropy(tape: Tape | None, logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the integer labels.

    Numerically stabilized by row-max subtraction before exponentiation.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise ValueError(f"logits must be 2-d [N,K], got {ld.ndim}-d")
    lab = np.asarray(labels)
    n, k = ld.shape
    if lab.shape != (n,):
        raise ValueError(f"labels shape {lab.shape} != ({n},)")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {lab.dtype}")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ValueError(f"label out of range [0,{k}): min={lab.min()}, max={lab.max()}")
    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), lab].mean()
    out = np.asarray(loss, dtype=ld.dtype)
    check_finite("softmax_cross_entropy", out)
    result = Tensor(out)

    if tape is not None:

        def bwd() -> None:
            if result.grad is None:
                return
            p = np.exp(logp)
            p[np.arange(n), lab] -= 1.0
            logits.accumulate(p * (result.grad / n))

        tape.record("softmax_cross_entropy", bwd)
    return result

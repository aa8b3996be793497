"""Batched forward/backward pass of the spline network on coefficient tensors.

Samples are fitted once, refined onto the kernel grid (so every interval sits
inside one kernel piece) and packed into padded arrays of shape
``(batch, intervals, channels, order+1)``. Every layer is then a dense tensor
operation with a hand-written adjoint. The knot structure never depends on
trainable parameters, which is what makes the adjoints exact.

Batches are processed in fixed-size chunks; area normalization needs a
batch-wide barrier, and every cross-chunk reduction runs in chunk order so
results do not depend on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import polynomial as P
from .layers import uniform_grid
from .spline import Spline, TimeSeries, fit, insert_knots

CHUNK = 16


@dataclass(frozen=True)
class Prepared:
    """A fitted sample refined onto the kernel grid."""

    knots: np.ndarray  # (M+1,)
    coeffs: np.ndarray  # (M, d, P0)
    grid_index: np.ndarray  # (M,) kernel grid interval containing each piece
    reexpress: np.ndarray  # (M, Pk, Pk): unit-grid kernel coeffs -> local coeffs

    @property
    def n_intervals(self) -> int:
        return self.coeffs.shape[0]

    @property
    def length(self) -> float:
        return float(self.knots[-1] - self.knots[0])


def kernel_operator(knots: np.ndarray, g: int, kernel_order: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid interval of every piece and the linear map from unit-span kernel
    coefficients to local coefficients on that piece.

    ``knots`` must already contain the rescaled kernel grid.
    """
    lo, length = knots[0], knots[-1] - knots[0]
    grid = uniform_grid(g)
    unit_left = (knots[:-1] - lo) / length
    src = np.clip(np.searchsorted(grid, unit_left + 1e-9, side="right") - 1, 0, g - 2)
    pk = kernel_order + 1
    rescale = length ** -np.arange(pk, dtype=np.float64)
    ops = np.stack([rescale[:, None] * P.shift_matrix(s, pk) for s in unit_left - grid[src]])
    return src, ops


def prepare(ts: TimeSeries | Spline, fit_kind: str, g: int, kernel_order: int) -> Prepared:
    s = ts if isinstance(ts, Spline) else fit(ts, fit_kind)
    s = insert_knots(s, s.knots[0] + uniform_grid(g)[1:-1] * s.length)
    src, ops = kernel_operator(s.knots, g, kernel_order)
    return Prepared(s.knots, s.coeffs, src, ops)


@dataclass
class Packed:
    X: np.ndarray  # (B, M, d, P0)
    knots: np.ndarray  # (B, M+1), +inf padding
    widths: np.ndarray  # (B, M), zero padding
    valid: np.ndarray  # (B, M)
    n_int: np.ndarray  # (B,)
    length: np.ndarray  # (B,)
    onehot: np.ndarray  # (B*M, g-1) grid interval indicator, zero rows for padding
    R: np.ndarray  # (B, M, Pk, Pk)

    @property
    def size(self) -> int:
        return self.X.shape[0]


def pack(samples: list[Prepared], g: int | None = None) -> Packed:
    B = len(samples)
    M = max(s.n_intervals for s in samples)
    d = samples[0].coeffs.shape[1]
    width = max(s.coeffs.shape[2] for s in samples)
    pk = samples[0].reexpress.shape[-1]
    g = g or int(max(s.grid_index.max() for s in samples)) + 2
    X = np.zeros((B, M, d, width))
    knots = np.full((B, M + 1), np.inf)
    widths = np.zeros((B, M))
    onehot = np.zeros((B, M, g - 1))
    R = np.zeros((B, M, pk, pk))
    n_int = np.empty(B, dtype=np.int64)
    length = np.empty(B)
    for b, s in enumerate(samples):
        m = s.n_intervals
        X[b, :m, :, : s.coeffs.shape[2]] = s.coeffs
        knots[b, : m + 1] = s.knots
        widths[b, :m] = np.diff(s.knots)
        onehot[b, np.arange(m), s.grid_index] = 1.0
        R[b, :m] = s.reexpress
        n_int[b] = m
        length[b] = s.length
    valid = np.arange(M)[None, :] < n_int[:, None]
    return Packed(X, knots, widths, valid, n_int, length, onehot.reshape(B * M, g - 1), R)


def chunked(samples: list[Prepared], g: int | None = None) -> list[Packed]:
    return [pack(samples[i : i + CHUNK], g) for i in range(0, len(samples), CHUNK)]


# --- coefficient-level layers and adjoints ----------------------------------


def width_powers(widths: np.ndarray, n: int) -> np.ndarray:
    """``widths**k / k`` for k = 1..n, shape (B, M, n): integrates a piece over its interval."""
    k = np.arange(1, n + 1, dtype=np.float64)
    return widths[..., None] ** k / k


def integrate_fw(Y: np.ndarray, widths: np.ndarray) -> np.ndarray:
    n = Y.shape[-1]
    k = np.arange(1, n + 1, dtype=np.float64)
    J = (Y @ width_powers(widths, n)[..., None])[..., 0]
    Z = np.empty(Y.shape[:-1] + (n + 1,))
    Z[..., 0] = np.cumsum(J, axis=1) - J
    Z[..., 1:] = Y / k
    return Z


def integrate_bw(dZ: np.ndarray, widths: np.ndarray) -> np.ndarray:
    n = dZ.shape[-1] - 1
    k = np.arange(1, n + 1, dtype=np.float64)
    d_off = dZ[..., 0]
    dJ = np.flip(np.cumsum(np.flip(d_off, axis=1), axis=1), axis=1) - d_off
    return dZ[..., 1:] / k + dJ[..., None] * width_powers(widths, n)[:, :, None, :]


def areas_fw(O: np.ndarray, widths: np.ndarray) -> np.ndarray:
    return (O @ width_powers(widths, O.shape[-1])[..., None])[..., 0].sum(axis=1)


_ANTIDIAG: dict[int, np.ndarray] = {}


def _antidiag(Q: int) -> np.ndarray:
    """(Q*Q, 2Q-1) indicator summing a Q x Q matrix along its anti-diagonals."""
    if Q not in _ANTIDIAG:
        a, b = np.divmod(np.arange(Q * Q), Q)
        m = np.zeros((Q * Q, 2 * Q - 1))
        m[np.arange(Q * Q), a + b] = 1.0
        _ANTIDIAG[Q] = m
    return _ANTIDIAG[Q]


def self_conv_fw(E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum over axis -2 of the coefficient self-convolution of E (..., h, Q).

    Returns the result and the Gram matrix sum_h E_a E_b it was read from.
    """
    Q = E.shape[-1]
    gram = np.swapaxes(E, -1, -2) @ E
    return gram.reshape(gram.shape[:-2] + (Q * Q,)) @ _antidiag(Q), gram


def self_conv_bw(dD: np.ndarray, E: np.ndarray) -> np.ndarray:
    Q = E.shape[-1]
    dgram = (dD @ _antidiag(Q).T).reshape(dD.shape[:-1] + (Q, Q))
    # dgram is symmetric (it only depends on a + b)
    return 2.0 * (E @ dgram)


def conv_fw(A: np.ndarray, K: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    shape = np.broadcast_shapes(A.shape[:-1], K.shape[:-1]) + (n + K.shape[-1] - 1,)
    O = np.zeros(shape)
    for a in range(n):
        O[..., a : a + K.shape[-1]] += A[..., a : a + 1] * K
    return O


def conv_bw(dO: np.ndarray, A: np.ndarray, K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    na, nk = A.shape[-1], K.shape[-1]
    dA = np.stack([np.sum(dO[..., a : a + nk] * K, axis=-1) for a in range(na)], axis=-1)
    dK = np.stack([np.sum(dO[..., b : b + na] * A, axis=-1) for b in range(nk)], axis=-1)
    return dA, dK


def _pad(a: np.ndarray, n: int) -> np.ndarray:
    if a.shape[-1] == n:
        return a
    out = np.zeros(a.shape[:-1] + (n,))
    out[..., : a.shape[-1]] = a
    return out


def kernels_local(Kc: np.ndarray, pk: Packed) -> np.ndarray:
    """Kernel coefficients re-expressed on every packed piece: (B, M, k, h, Pk)."""
    B, M = pk.valid.shape
    n_k, g1, h, q = Kc.shape
    flat = np.moveaxis(Kc, 1, 0).reshape(g1, n_k * h * q)
    Kg = (pk.onehot @ flat).reshape(B, M, n_k, h, q)
    return Kg @ np.swapaxes(pk.R, -1, -2)[:, :, None]


def kernels_local_bw(dKU: np.ndarray, pk: Packed, shape) -> np.ndarray:
    n_k, g1, h, q = shape
    dKg = dKU @ pk.R[:, :, None]
    flat = pk.onehot.T @ dKg.reshape(-1, n_k * h * q)
    return np.moveaxis(flat.reshape(g1, n_k, h, q), 0, 1)


def block_fw(X: np.ndarray, pk: Packed, W, b, Kc, cfg) -> tuple[np.ndarray, dict]:
    """affine -> [integration] -> kernel -> [distance integral]; returns pre-norm output."""
    cache: dict = {"X": X}
    Y = W @ X
    Y[..., 0] += b
    Y *= pk.valid[:, :, None, None]
    Z = integrate_fw(Y, pk.widths) if cfg.integration else Y
    KU = kernels_local(Kc, pk)
    cache.update(Z=Z, KU=KU)
    B, M = X.shape[:2]
    if cfg.kernel_mode == "distance":
        Q = max(Z.shape[-1], KU.shape[-1])
        E = _pad(Z, Q)[:, :, None] - _pad(KU, Q)
        O, _ = self_conv_fw(E)
        cache["E"] = E
        if cfg.distance_integral:
            O = integrate_fw(O, pk.widths)
    else:
        O = conv_fw(Z[:, :, None], KU)
        O = O.reshape(B, M, -1, O.shape[-1])
    return O, cache


def block_bw(dO: np.ndarray, pk: Packed, W, Kc, cfg, cache) -> tuple[np.ndarray, dict]:
    Z, KU = cache["Z"], cache["KU"]
    B, M = dO.shape[:2]
    if cfg.kernel_mode == "distance":
        if cfg.distance_integral:
            dO = integrate_bw(dO, pk.widths)
        dE = self_conv_bw(dO, cache["E"])
        dZ = dE[..., : Z.shape[-1]].sum(axis=2)
        dKU = -dE[..., : KU.shape[-1]]
    else:
        dO = dO.reshape(B, M, KU.shape[2], KU.shape[3], -1)
        dZ, dKU = conv_bw(dO, Z[:, :, None], KU)
        dZ = dZ.sum(axis=2)
    dKc = kernels_local_bw(dKU, pk, Kc.shape)
    dY = integrate_bw(dZ, pk.widths) if cfg.integration else dZ
    dY = dY * pk.valid[:, :, None, None]
    X = cache["X"]
    dW = np.tensordot(dY, X, axes=([0, 1, 3], [0, 1, 3]))
    db = dY[..., 0].sum(axis=(0, 1))
    dX = W.T @ dY
    return dX, {"W": dW, "b": db, "kernels": dKc}


def query_fw(O: np.ndarray, pk: Packed, offsets: np.ndarray) -> tuple[np.ndarray, dict]:
    t = offsets[None, :] * pk.length[:, None]
    idx = (pk.knots[:, None, :] <= t[:, :, None]).sum(axis=-1) - 1
    idx = np.clip(idx, 0, pk.n_int[:, None] - 1)
    left = np.take_along_axis(pk.knots, idx, axis=1)
    tau = t - left
    bidx = np.broadcast_to(np.arange(O.shape[0])[:, None], idx.shape)
    Osel = O[bidx, idx]  # (B, l, c, P)
    powers = tau[..., None] ** np.arange(O.shape[-1])
    V = (Osel @ powers[..., None])[..., 0]
    return V, {"idx": idx, "bidx": bidx, "tau": tau, "Osel": Osel, "powers": powers, "shape": O.shape}


def query_bw(dV: np.ndarray, pk: Packed, cache) -> tuple[np.ndarray, np.ndarray]:
    """Returns dO and the gradient with respect to the relative offsets."""
    powers, Osel, tau = cache["powers"], cache["Osel"], cache["tau"]
    dO = np.zeros(cache["shape"])
    np.add.at(dO, (cache["bidx"], cache["idx"]), dV[..., None] * powers[:, :, None, :])
    n = Osel.shape[-1]
    dpow = np.zeros_like(powers)
    if n > 1:
        dpow[..., 1:] = np.arange(1, n) * tau[..., None] ** np.arange(n - 1)
    dtau = (dV * (Osel @ dpow[..., None])[..., 0]).sum(axis=-1)
    d_offsets = (dtau * pk.length[:, None]).sum(axis=0)
    return dO, d_offsets


# --- recurrent aggregator and head ------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_fw(xs: np.ndarray, Wih, Whh, bih, bhh) -> tuple[np.ndarray, list]:
    B, L, _ = xs.shape
    H = Whh.shape[1]
    h = np.zeros((B, H))
    steps = []
    for t in range(L):
        gi = xs[:, t] @ Wih.T + bih
        gh = h @ Whh.T + bhh
        r = _sigmoid(gi[:, :H] + gh[:, :H])
        z = _sigmoid(gi[:, H : 2 * H] + gh[:, H : 2 * H])
        n = np.tanh(gi[:, 2 * H :] + r * gh[:, 2 * H :])
        h_new = (1.0 - z) * n + z * h
        steps.append((h, r, z, n, gh[:, 2 * H :]))
        h = h_new
    return h, steps


def gru_bw(dh: np.ndarray, xs: np.ndarray, Wih, Whh, steps) -> tuple[np.ndarray, dict]:
    H = Whh.shape[1]
    dxs = np.zeros_like(xs)
    g = {"W_ih": np.zeros_like(Wih), "W_hh": np.zeros_like(Whh), "b_ih": np.zeros(3 * H), "b_hh": np.zeros(3 * H)}
    for t in range(xs.shape[1] - 1, -1, -1):
        h_prev, r, z, n, ghn = steps[t]
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgi = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        g["W_ih"] += dgi.T @ xs[:, t]
        g["b_ih"] += dgi.sum(axis=0)
        g["W_hh"] += dgh.T @ h_prev
        g["b_hh"] += dgh.sum(axis=0)
        dxs[:, t] = dgi @ Wih
        dh = dh_prev + dgh @ Whh
    return dxs, g


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def offsets_fw(logits: np.ndarray | None, l: int) -> tuple[np.ndarray, np.ndarray | None]:
    if logits is None:
        return np.arange(1, l + 1) / l, None
    w = softmax(logits)
    return np.cumsum(w), w


def offsets_bw(d_off: np.ndarray, w: np.ndarray) -> np.ndarray:
    dw = np.flip(np.cumsum(np.flip(d_off)))
    return w * (dw - np.dot(w, dw))


# --- whole network ------------------------------------------------------------


@dataclass
class BatchResult:
    probs: np.ndarray
    loss: float | None
    grads: dict | None
    batch_areas: list  # per block: (B, c) signed areas, training mode only
    features: np.ndarray  # (B, l, c) post-ReLU segment vectors


def _map(pool, fn, *iterables):
    if pool is None:
        return list(map(fn, *iterables))
    return list(pool.map(fn, *iterables))


def run(params: dict, cfg, chunks: list[Packed], labels=None, training: bool = False, need_grad: bool = False, threads: int = 1, dropout_mask=None) -> BatchResult:
    """Forward (and optionally backward) pass over a chunked batch."""
    pool = ThreadPoolExecutor(threads) if threads > 1 and len(chunks) > 1 else None
    try:
        return _run(params, cfg, chunks, labels, training, need_grad, pool, dropout_mask)
    finally:
        if pool is not None:
            pool.shutdown()


def _run(params, cfg, chunks, labels, training, need_grad, pool, dropout_mask) -> BatchResult:
    B_total = sum(c.size for c in chunks)
    X = [c.X for c in chunks]
    block_caches, norm_caches, batch_areas = [], [], []
    for j in range(cfg.blocks):
        W, b, Kc = params[f"block{j}.W"], params[f"block{j}.b"], params[f"block{j}.kernels"]
        outs = _map(pool, lambda x, pk: block_fw(x, pk, W, b, Kc, cfg), X, chunks)
        O_raw = [o for o, _ in outs]
        block_caches.append([c for _, c in outs])
        if cfg.area_norm:
            areas = [areas_fw(o, pk.widths) for o, pk in zip(O_raw, chunks)]
            if training:
                all_areas = np.concatenate(areas, axis=0)
                mu = np.abs(all_areas).mean(axis=0)
                batch_areas.append(all_areas)
            else:
                mu = params[f"block{j}.running_area"]
            scale = 1.0 / (mu + cfg.eps)
            X = [o * scale[None, None, :, None] for o in O_raw]
            norm_caches.append((O_raw, areas, mu, scale))
        else:
            X = O_raw
            norm_caches.append(None)

    logits_off = params.get("offset_logits") if cfg.learnable_offsets else None
    offsets, w_off = offsets_fw(logits_off, cfg.segments)
    q = _map(pool, lambda o, pk: query_fw(o, pk, offsets), X, chunks)
    V = np.concatenate([v for v, _ in q], axis=0)
    F = np.maximum(V, 0.0)

    if cfg.aggregator == "gru":
        hvec, steps = gru_fw(F, params["gru.W_ih"], params["gru.W_hh"], params["gru.b_ih"], params["gru.b_hh"])
    elif cfg.aggregator == "mean":
        hvec = F.mean(axis=1)
    else:
        hvec = F[:, -1]
    if dropout_mask is not None:
        hvec = hvec * dropout_mask
    logits = hvec @ params["head.W"].T + params["head.b"]
    probs = softmax(logits)
    loss = None
    if labels is not None:
        labels = np.asarray(labels)
        picked = probs[np.arange(B_total), labels]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    if not need_grad:
        return BatchResult(probs, loss, None, batch_areas, F)

    grads = {k: np.zeros_like(v) for k, v in params.items() if not k.endswith("running_area")}
    dlogits = probs.copy()
    dlogits[np.arange(B_total), labels] -= 1.0
    dlogits /= B_total
    grads["head.W"] = dlogits.T @ hvec
    grads["head.b"] = dlogits.sum(axis=0)
    dh = dlogits @ params["head.W"]
    if dropout_mask is not None:
        dh = dh * dropout_mask
    if cfg.aggregator == "gru":
        dF, g = gru_bw(dh, F, params["gru.W_ih"], params["gru.W_hh"], steps)
        for k, v in g.items():
            grads[f"gru.{k}"] = v
    elif cfg.aggregator == "mean":
        dF = np.repeat(dh[:, None, :] / F.shape[1], F.shape[1], axis=1)
    else:
        dF = np.zeros_like(F)
        dF[:, -1] = dh
    dV = dF * (V > 0)

    bounds = np.cumsum([0] + [c.size for c in chunks])
    dV_chunks = [dV[bounds[i] : bounds[i + 1]] for i in range(len(chunks))]
    qb = _map(pool, lambda dv, pk, qc: query_bw(dv, pk, qc[1]), dV_chunks, chunks, q)
    dX = [d for d, _ in qb]
    if w_off is not None:
        d_off = np.zeros(cfg.segments)
        for _, g in qb:
            d_off = d_off + g
        grads["offset_logits"] = offsets_bw(d_off, w_off)

    for j in range(cfg.blocks - 1, -1, -1):
        W, Kc = params[f"block{j}.W"], params[f"block{j}.kernels"]
        nc = norm_caches[j]
        if nc is not None:
            O_raw, areas, mu, scale = nc
            dO = [d * scale[None, None, :, None] for d in dX]
            if training:
                d_scale = np.zeros_like(scale)
                for d, o in zip(dX, O_raw):
                    d_scale = d_scale + (d * o).sum(axis=(0, 1, 3))
                d_mu = -d_scale * scale * scale
                dO = [
                    do + (np.sign(a) * d_mu / B_total)[:, None, :, None] * width_powers(pk.widths, do.shape[-1])[:, :, None, :]
                    for do, a, pk in zip(dO, areas, chunks)
                ]
        else:
            dO = dX
        outs = _map(pool, lambda do, pk, c: block_bw(do, pk, W, Kc, cfg, c), dO, chunks, block_caches[j])
        dX = [d for d, _ in outs]
        for name in ("W", "b", "kernels"):
            acc = np.zeros_like(params[f"block{j}.{name}"])
            for _, g in outs:
                acc = acc + g[name]
            grads[f"block{j}.{name}"] = acc
    return BatchResult(probs, loss, grads, batch_areas, F)

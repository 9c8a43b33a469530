"""Conditional noise-prediction network and score conversions.

A residual feed-forward net (pure numpy, hand-written backprop) maps
(x_t, t, rho) to a predicted noise vector. Time and risk level enter as
sinusoidal embeddings; a learned null token replaces the risk embedding
when the condition is dropped. The score at step t is recovered as
s = -eps / sqrt(1 - alpha_bar_t).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .schedule import NoiseSchedule

RHO_POSITION_SCALE = 1000.0  # maps normalized rho in [0,1] onto the embedding's useful range

CHECKPOINT_MAGIC = "chancediff-checkpoint"


def sinusoidal_embedding(position, dim: int) -> np.ndarray:
    """Transformer-style sin/cos features of a scalar position, shape (..., dim)."""
    if dim < 2 or dim % 2:
        raise ValueError("embedding dimension must be an even integer >= 2")
    half = dim // 2
    position = np.asarray(position, dtype=float)
    exponents = np.arange(half) / max(half - 1, 1)
    freqs = (1.0 / 10000.0) ** exponents
    angles = position[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _silu(z):
    sig = 1.0 / (1.0 + np.exp(-z))
    return z * sig, sig


def _silu_grad(z, sig):
    return sig * (1.0 + z * (1.0 - sig))


class ScoreNetwork:
    """Residual MLP noise predictor s.t. output dimension == input dimension.

    Deterministic in evaluation; all stochasticity (dropout of the condition,
    noise draws) lives in the training loop.
    """

    def __init__(self, n: int, width: int = 256, depth: int = 4, embed_dim: int = 32,
                 seed: int = 0, rho_range: tuple[float, float] = (0.0, 1.0),
                 data_radius: float = 1.0):
        if n < 1 or width < 1 or depth < 1:
            raise ValueError("n, width and depth must be positive")
        self.n = n
        self.width = width
        self.depth = depth
        self.embed_dim = embed_dim
        self.rho_lo, self.rho_hi = float(rho_range[0]), float(rho_range[1])
        self.data_radius = float(data_radius)
        rng = np.random.default_rng(seed)
        d_in = n + 2 * embed_dim
        p = {}
        p["W_in"] = rng.standard_normal((width, d_in)) * np.sqrt(2.0 / d_in)
        p["b_in"] = np.zeros(width)
        for i in range(depth):
            p[f"W_{i}"] = rng.standard_normal((width, width)) * np.sqrt(2.0 / width) / depth
            p[f"b_{i}"] = np.zeros(width)
        p["W_out"] = np.zeros((n, width))
        p["b_out"] = np.zeros(n)
        p["null_token"] = rng.standard_normal(embed_dim) * 0.1
        self.params = p

    # -- conditioning ------------------------------------------------------

    def set_rho_normalization(self, lo: float, hi: float) -> None:
        self.rho_lo, self.rho_hi = float(lo), float(hi)

    def _rho_embedding(self, rho, null_mask, batch: int) -> np.ndarray:
        emb = np.broadcast_to(self.params["null_token"], (batch, self.embed_dim)).copy()
        if rho is not None:
            rho = np.broadcast_to(np.asarray(rho, dtype=float), (batch,))
            span = self.rho_hi - self.rho_lo
            norm = (rho - self.rho_lo) / span if span > 0.0 else np.full(batch, 0.5)
            observed = sinusoidal_embedding(norm * RHO_POSITION_SCALE, self.embed_dim)
            keep = ~null_mask if null_mask is not None else np.ones(batch, dtype=bool)
            emb[keep] = observed[keep]
        return emb

    def _assemble_input(self, x, t, rho, null_mask):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        batch = xb.shape[0]
        if xb.shape[1] != self.n:
            raise ValueError(f"x has dimension {xb.shape[1]}, network expects {self.n}")
        t = np.broadcast_to(np.asarray(t, dtype=float), (batch,))
        t_emb = sinusoidal_embedding(t, self.embed_dim)
        if null_mask is not None:
            null_mask = np.broadcast_to(np.asarray(null_mask, dtype=bool), (batch,))
        c_emb = self._rho_embedding(rho, null_mask, batch)
        inp = np.concatenate([xb, t_emb, c_emb], axis=1)
        return inp, single, null_mask

    # -- forward / backward ------------------------------------------------

    def _forward(self, inp):
        p = self.params
        h = inp @ p["W_in"].T + p["b_in"]
        hs = [h]
        acts = []
        for i in range(self.depth):
            u, sig = _silu(h)
            acts.append((u, sig))
            h = h + u @ p[f"W_{i}"].T + p[f"b_{i}"]
            hs.append(h)
        u_out, sig_out = _silu(h)
        out = u_out @ p["W_out"].T + p["b_out"]
        return out, (inp, hs, acts, (u_out, sig_out))

    def _backward(self, cache, d_out):
        inp, hs, acts, (u_out, sig_out) = cache
        p = self.params
        grads = {"W_out": d_out.T @ u_out, "b_out": d_out.sum(axis=0)}
        dh = (d_out @ p["W_out"]) * _silu_grad(hs[-1], sig_out)
        for i in range(self.depth - 1, -1, -1):
            u, sig = acts[i]
            grads[f"W_{i}"] = dh.T @ u
            grads[f"b_{i}"] = dh.sum(axis=0)
            dh = dh + (dh @ p[f"W_{i}"]) * _silu_grad(hs[i], sig)
        grads["W_in"] = dh.T @ inp
        grads["b_in"] = dh.sum(axis=0)
        d_inp = dh @ p["W_in"]
        return grads, d_inp

    def epsilon(self, x, t, rho=None, null_mask=None):
        """Predicted noise for states x at step(s) t under condition rho.

        ``rho=None`` (or a True entry in ``null_mask``) evaluates the
        unconditional branch through the learned null token.
        """
        inp, single, _ = self._assemble_input(x, t, rho, null_mask)
        out, _ = self._forward(inp)
        return out[0] if single else out

    # -- persistence ---------------------------------------------------------

    def _param_names(self):
        names = ["W_in", "b_in"]
        for i in range(self.depth):
            names += [f"W_{i}", f"b_{i}"]
        names += ["W_out", "b_out", "null_token"]
        return names

    def copy(self) -> "ScoreNetwork":
        dup = ScoreNetwork(self.n, self.width, self.depth, self.embed_dim,
                           rho_range=(self.rho_lo, self.rho_hi),
                           data_radius=self.data_radius)
        dup.params = {k: v.copy() for k, v in self.params.items()}
        return dup


def save_checkpoint(net: ScoreNetwork, schedule: NoiseSchedule, path) -> None:
    """Self-describing container: one JSON header line, then the raw
    little-endian float32 weight payload in header-declared order."""
    names = net._param_names()
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "n": net.n,
        "width": net.width,
        "depth": net.depth,
        "embed_dim": net.embed_dim,
        "rho_lo": net.rho_lo,
        "rho_hi": net.rho_hi,
        "data_radius": net.data_radius,
        "schedule_eta": [float(e) for e in schedule.eta],
        "params": [{"name": k, "shape": list(net.params[k].shape)} for k in names],
        "dtype": "<f4",
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for k in names:
            fh.write(np.ascontiguousarray(net.params[k], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ScoreNetwork, NoiseSchedule]:
    """Inverse of save_checkpoint; weights come back as float64 copies of the
    stored float32 payload."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a {CHECKPOINT_MAGIC} file")
    eta = np.asarray(header["schedule_eta"], dtype=float)
    schedule = NoiseSchedule(eta=eta, alpha_bar=np.cumprod(1.0 - eta))
    net = ScoreNetwork(header["n"], header["width"], header["depth"], header["embed_dim"],
                       rho_range=(header["rho_lo"], header["rho_hi"]),
                       data_radius=header["data_radius"])
    offset = nl + 1
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
        net.params[spec["name"]] = block.reshape(shape).astype(float)
        offset += size * 4
    return net, schedule


# -- score conversions -------------------------------------------------------

def score_from_eps(eps, alpha_bar_t):
    """s = -eps / sqrt(1 - alpha_bar_t)."""
    return -np.asarray(eps, dtype=float) / np.sqrt(1.0 - alpha_bar_t)


def eps_from_score(score, alpha_bar_t):
    """Inverse of score_from_eps."""
    return -np.asarray(score, dtype=float) * np.sqrt(1.0 - alpha_bar_t)


def cond_score(net, schedule: NoiseSchedule, x, t, rho, w: float = 0.0):
    """Classifier-free combination (1+w) s(x,t,rho) - w s(x,t,null).

    ``rho=None`` returns the unconditional score regardless of w.
    """
    ab = schedule.alpha_bar_at(t)
    s_cond = score_from_eps(net.epsilon(x, t, rho=rho), ab)
    if w == 0.0 or rho is None:
        return s_cond
    s_uncond = score_from_eps(net.epsilon(x, t, rho=None), ab)
    return (1.0 + w) * s_cond - w * s_uncond


class AnalyticGaussianScore:
    """Exact noise predictor for isotropic Gaussian data N(mean, var I).

    Implements the same ``epsilon`` protocol as ScoreNetwork, which makes it
    a drop-in oracle for sampler checks that need no training. ``var=0``
    gives the diffused point mass.
    """

    def __init__(self, mean, var: float, schedule: NoiseSchedule):
        self.mean = np.asarray(mean, dtype=float)
        if self.mean.ndim == 0:
            self.mean = self.mean[None]
        self.var = float(var)
        if self.var < 0.0:
            raise ValueError("variance must be nonnegative")
        self.schedule = schedule
        self.n = self.mean.shape[0]
        self.data_radius = float(np.linalg.norm(self.mean) + 6.0 * np.sqrt(self.var * self.n) + 1.0)

    def score(self, x, t):
        ab = self.schedule.alpha_bar_at(t)
        marginal_var = ab * self.var + 1.0 - ab
        return -(np.asarray(x, dtype=float) - np.sqrt(ab) * self.mean) / marginal_var

    def epsilon(self, x, t, rho=None, null_mask=None):
        ab = self.schedule.alpha_bar_at(t)
        return eps_from_score(self.score(x, t), ab)

"""Dense residual network with pluggable attention step-size adaptors.

A block computes ``f(x) = W2 relu(W1 x + b1) + b2`` and updates
``x <- x + f(x) * att`` where ``att`` is produced by the adaptor (``att = 1``
for the plain network). All adaptors end in a sigmoid.

Adaptor kinds:

``none``       plain residual step, unit step size
``se_style``   ``sigmoid(W_up relu(W_down f + b_down) + b_up)`` on ``f``
``prev_only``  linear -> IEBN -> sigmoid on ``x_t``
``next_only``  linear -> IEBN -> sigmoid on ``x_t + f``
``diff``       linear -> IEBN -> sigmoid on ``f``
``stepnet``    grouped linear on ``(x_t, x_t + f)`` -> IEBN -> sigmoid

Gradients are hand-written reverse mode over a whole batch. In ``train``
mode the IEBN layers normalise with batch statistics and report updated
running statistics; ``eval`` mode uses the running statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import NumericBlowupError, TrainingDivergedError, ValidationError
from .ode import Trajectory

ADAPTOR_KINDS = ("none", "se_style", "prev_only", "next_only", "diff", "stepnet")
IEBN_KINDS = ("prev_only", "next_only", "diff", "stepnet")

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
IE_WEIGHT_INIT = 0.0
IE_BIAS_INIT = -1.0

_ATT_HI = np.nextafter(1.0, 0.0)
_ATT_LO = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    stage_widths: tuple
    blocks_per_stage: tuple
    adaptor: str = "none"
    bottleneck: Optional[int] = None
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        if self.input_dim < 1:
            raise ValidationError("input_dim must be >= 1")
        if not self.stage_widths or len(self.stage_widths) != len(self.blocks_per_stage):
            raise ValidationError("stage_widths and blocks_per_stage must be non-empty and aligned")
        if min(self.stage_widths) < 2:
            raise ValidationError("stage widths must be >= 2")
        if min(self.blocks_per_stage) < 2:
            raise ValidationError("blocks_per_stage must be >= 2")
        if self.adaptor not in ADAPTOR_KINDS:
            raise ValidationError(f"unknown adaptor {self.adaptor!r}; expected one of {ADAPTOR_KINDS}")
        if self.bottleneck is not None and not 1 <= self.bottleneck < min(self.stage_widths):
            raise ValidationError("bottleneck r must satisfy 1 <= r < min stage width")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")

    @property
    def r(self):
        if self.bottleneck is not None:
            return self.bottleneck
        return max(1, min(self.stage_widths) // 4)

    @property
    def n_blocks(self):
        return sum(self.blocks_per_stage)

    def block_keys(self):
        return [
            (s, f"s{s}.b{b}")
            for s, n in enumerate(self.blocks_per_stage)
            for b in range(n)
        ]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": list(self.blocks_per_stage),
            "adaptor": self.adaptor,
            "bottleneck": self.bottleneck,
            "num_classes": self.num_classes,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_dim=int(d["input_dim"]),
            stage_widths=tuple(d["stage_widths"]),
            blocks_per_stage=tuple(d["blocks_per_stage"]),
            adaptor=d.get("adaptor", "none"),
            bottleneck=d.get("bottleneck"),
            num_classes=int(d.get("num_classes", 2)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class ResidualNet:
    config: NetworkConfig
    params: dict
    buffers: dict = field(default_factory=dict)  # IEBN running statistics
    fixed: dict = field(default_factory=dict)    # untrained stage projections

    def copy(self):
        return ResidualNet(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            {k: v.copy() for k, v in self.fixed.items()},
        )


@dataclass(frozen=True)
class ForwardRecord:
    trajectory: Trajectory
    attention_values: tuple  # one d-vector per block; empty for ``none``
    logits: np.ndarray
    loss: Optional[float] = None


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.02
    epochs: int = 400
    batch_size: int = 64
    weight_decay: float = 1e-4
    momentum: float = 0.9

    def to_dict(self):
        return {
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "momentum": self.momentum,
        }


# -- initialisation -------------------------------------------------------------

def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_network(config):
    rng = np.random.default_rng(config.seed)
    kind = config.adaptor
    params, buffers, fixed = {}, {}, {}
    w0 = config.stage_widths[0]
    params["stem.W"] = _uniform(rng, (w0, config.input_dim), config.input_dim)
    params["stem.b"] = np.zeros(w0)
    for s, key in config.block_keys():
        d = config.stage_widths[s]
        params[f"{key}.W1"] = _uniform(rng, (d, d), d)
        params[f"{key}.b1"] = np.zeros(d)
        params[f"{key}.W2"] = _uniform(rng, (d, d), d)
        params[f"{key}.b2"] = np.zeros(d)
        if kind == "se_style":
            r = config.r
            params[f"{key}.se_W_down"] = _uniform(rng, (r, d), d)
            params[f"{key}.se_b_down"] = np.zeros(r)
            params[f"{key}.se_W_up"] = _uniform(rng, (d, r), r)
            params[f"{key}.se_b_up"] = np.zeros(d)
        elif kind == "stepnet":
            h = d // 2
            params[f"{key}.ad_W_prev"] = _uniform(rng, (h, d), d)
            params[f"{key}.ad_W_next"] = _uniform(rng, (d - h, d), d)
            params[f"{key}.ad_b"] = np.zeros(d)
        elif kind in IEBN_KINDS:
            params[f"{key}.ad_W"] = _uniform(rng, (d, d), d)
            params[f"{key}.ad_b"] = np.zeros(d)
        if kind in IEBN_KINDS:
            params[f"{key}.bn_gain"] = np.ones(d)
            params[f"{key}.bn_bias"] = np.zeros(d)
            params[f"{key}.ie_w"] = np.full(d, IE_WEIGHT_INIT)
            params[f"{key}.ie_b"] = np.full(d, IE_BIAS_INIT)
            buffers[f"{key}.bn_mean"] = np.zeros(d)
            buffers[f"{key}.bn_var"] = np.ones(d)
    for s in range(len(config.stage_widths) - 1):
        w_in, w_out = config.stage_widths[s], config.stage_widths[s + 1]
        if w_in != w_out:
            fixed[f"proj{s}"] = rng.normal(0.0, 1.0 / np.sqrt(w_in), size=(w_out, w_in))
    wl = config.stage_widths[-1]
    params["head.W"] = _uniform(rng, (config.num_classes, wl), wl)
    params["head.b"] = np.zeros(config.num_classes)
    return ResidualNet(config, params, buffers, fixed)


# -- building blocks ------------------------------------------------------------

def sigmoid(y):
    return np.clip(expit(y), _ATT_LO, _ATT_HI)


def iebn_forward(z, gain, bias, w_ie, b_ie, mean, var, mode, eps=BN_EPS):
    """``w_ie * BN(z) + b_ie`` on a batch ``z`` of shape ``(B, d)``.

    Returns ``(out, cache, (new_mean, new_var))``; the running statistics are
    only updated in ``train`` mode.
    """
    if mode == "train":
        mu = z.mean(axis=0)
        v = z.var(axis=0)
        n = z.shape[0]
        unbiased = v * n / (n - 1) if n > 1 else v
        new_stats = (
            (1.0 - BN_MOMENTUM) * mean + BN_MOMENTUM * mu,
            (1.0 - BN_MOMENTUM) * var + BN_MOMENTUM * unbiased,
        )
    else:
        mu, v = mean, var
        new_stats = (mean, var)
    inv = 1.0 / np.sqrt(v + eps)
    zhat = (z - mu) * inv
    bn = gain * zhat + bias
    out = w_ie * bn + b_ie
    return out, (zhat, bn, inv, mode), new_stats


def iebn(x, state, mode="eval"):
    """Single-vector (or batch) IEBN with a state dict of named arrays."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out, _, new_stats = iebn_forward(
        x,
        state["bn_gain"],
        state["bn_bias"],
        state["w_ie"],
        state["b_ie"],
        state["running_mean"],
        state["running_var"],
        mode,
        state.get("epsilon", BN_EPS),
    )
    return out, new_stats


def _iebn_backward(dy, cache, gain, w_ie):
    zhat, bn, inv, mode = cache
    g = {
        "ie_w": (dy * bn).sum(axis=0),
        "ie_b": dy.sum(axis=0),
    }
    dbn = dy * w_ie
    g["bn_gain"] = (dbn * zhat).sum(axis=0)
    g["bn_bias"] = dbn.sum(axis=0)
    dzhat = dbn * gain
    if mode == "train":
        n = dzhat.shape[0]
        dz = (inv / n) * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
    else:
        dz = dzhat * inv
    return dz, g


def _adaptor_forward(p, key, kind, x, f, xn, mode, buffers):
    cache = {}
    if kind == "se_style":
        z = f @ p[f"{key}.se_W_down"].T + p[f"{key}.se_b_down"]
        zr = np.maximum(z, 0.0)
        y = zr @ p[f"{key}.se_W_up"].T + p[f"{key}.se_b_up"]
        cache.update(z=z, zr=zr)
        return sigmoid(y), cache, None
    if kind == "stepnet":
        h = p[f"{key}.ad_W_prev"].shape[0]
        z = np.empty_like(x)
        z[:, :h] = x @ p[f"{key}.ad_W_prev"].T
        z[:, h:] = xn @ p[f"{key}.ad_W_next"].T
        z += p[f"{key}.ad_b"]
    else:
        v = {"prev_only": x, "next_only": xn, "diff": f}[kind]
        z = v @ p[f"{key}.ad_W"].T + p[f"{key}.ad_b"]
        cache["v"] = v
    y, bn_cache, stats = iebn_forward(
        z,
        p[f"{key}.bn_gain"],
        p[f"{key}.bn_bias"],
        p[f"{key}.ie_w"],
        p[f"{key}.ie_b"],
        buffers[f"{key}.bn_mean"],
        buffers[f"{key}.bn_var"],
        mode,
    )
    cache["bn"] = bn_cache
    return sigmoid(y), cache, stats


def _adaptor_backward(p, key, kind, cache, dy, x, f, xn, grads):
    """Back-propagate ``dy`` (w.r.t. the pre-sigmoid output); return ``(dx, df)``."""
    if kind == "se_style":
        zr = cache["zr"]
        grads[f"{key}.se_W_up"] = dy.T @ zr
        grads[f"{key}.se_b_up"] = dy.sum(axis=0)
        dz = (dy @ p[f"{key}.se_W_up"]) * (cache["z"] > 0)
        grads[f"{key}.se_W_down"] = dz.T @ f
        grads[f"{key}.se_b_down"] = dz.sum(axis=0)
        return 0.0, dz @ p[f"{key}.se_W_down"]
    dz, g = _iebn_backward(dy, cache["bn"], p[f"{key}.bn_gain"], p[f"{key}.ie_w"])
    for name, val in g.items():
        grads[f"{key}.{name}"] = val
    grads[f"{key}.ad_b"] = dz.sum(axis=0)
    if kind == "stepnet":
        h = p[f"{key}.ad_W_prev"].shape[0]
        d1, d2 = dz[:, :h], dz[:, h:]
        grads[f"{key}.ad_W_prev"] = d1.T @ x
        grads[f"{key}.ad_W_next"] = d2.T @ xn
        dxn = d2 @ p[f"{key}.ad_W_next"]
        return d1 @ p[f"{key}.ad_W_prev"] + dxn, dxn
    grads[f"{key}.ad_W"] = dz.T @ cache["v"]
    dv = dz @ p[f"{key}.ad_W"]
    if kind == "prev_only":
        return dv, 0.0
    if kind == "next_only":
        return dv, dv
    return 0.0, dv  # diff


def stepnet_adaptor(x_t, x_next, adaptor_params, mode="eval"):
    """Attention from a consecutive state pair.

    ``adaptor_params`` holds ``W_prev`` (h x d), ``W_next`` (d-h x d), ``b``
    and the IEBN state keys accepted by :func:`iebn`. Accepts single vectors
    or batches.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    if x_t.shape != x_next.shape:
        raise ValidationError(f"state shapes differ: {x_t.shape} vs {x_next.shape}")
    wp, wn = np.asarray(adaptor_params["W_prev"]), np.asarray(adaptor_params["W_next"])
    d = x_t.shape[1]
    if wp.shape[1] != d or wn.shape[1] != d or wp.shape[0] + wn.shape[0] != d:
        raise ValidationError(f"grouped weights do not match dimension {d}")
    z = np.concatenate([x_t @ wp.T, x_next @ wn.T], axis=1) + adaptor_params["b"]
    y, _ = iebn(z, adaptor_params, mode)
    att = sigmoid(y)
    return att[0] if att.shape[0] == 1 else att


def residual_branch(model, key, x):
    """``f(x; theta)`` of block ``key`` for a batch or a single vector."""
    p = model.params
    h = np.asarray(x) @ p[f"{key}.W1"].T + p[f"{key}.b1"]
    return np.maximum(h, 0.0) @ p[f"{key}.W2"].T + p[f"{key}.b2"]


@dataclass
class BatchForward:
    positions: list          # states (B, w) in trajectory order
    transitions: list        # per transition: attention (B, d), None (unit) or "proj"
    attention: list          # per block: (B, d) or None
    logits: np.ndarray
    caches: list
    stats: dict              # updated running statistics (train mode)


def forward_batch(model, X, mode="eval", force_attention=None):
    """Batched forward pass.

    ``force_attention`` replaces every adaptor output by a constant (used to
    check that unit attention recovers the plain network).
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = model.config
    p = model.params
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != cfg.input_dim:
        raise ValidationError(f"input has dimension {X.shape[1]}, network expects {cfg.input_dim}")
    kind = cfg.adaptor
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_batch(model, X, mode, force_attention, cfg, p, kind)


def _forward_batch(model, X, mode, force_attention, cfg, p, kind):
    x = X @ p["stem.W"].T + p["stem.b"]
    positions = [x]
    transitions, attention, caches = [], [], []
    stats = {}
    block_index = 0
    keys = cfg.block_keys()
    for s, key in keys:
        h = x @ p[f"{key}.W1"].T + p[f"{key}.b1"]
        a = np.maximum(h, 0.0)
        f = a @ p[f"{key}.W2"].T + p[f"{key}.b2"]
        cache = {"x": x, "h": h, "a": a, "f": f, "key": key}
        if kind == "none":
            att = None
            x_new = x + f
        else:
            xn = x + f
            cache["xn"] = xn
            if force_attention is not None:
                att = np.full_like(f, float(force_attention))
                cache["forced"] = True
            else:
                att, acache, new_stats = _adaptor_forward(p, key, kind, x, f, xn, mode, model.buffers)
                cache["adaptor"] = acache
                if new_stats is not None and mode == "train":
                    stats[f"{key}.bn_mean"], stats[f"{key}.bn_var"] = new_stats
            cache["att"] = att
            x_new = x + f * att
        if not np.all(np.isfinite(x_new)):
            raise NumericBlowupError(block_index)
        caches.append(cache)
        attention.append(att)
        transitions.append(att)
        positions.append(x_new)
        x = x_new
        block_index += 1
        last_of_stage = key.endswith(f".b{cfg.blocks_per_stage[s] - 1}")
        if last_of_stage and s < len(cfg.stage_widths) - 1:
            proj = model.fixed.get(f"proj{s}")
            x = x.copy() if proj is None else x @ proj.T
            caches.append({"proj": s})
            transitions.append("proj")
            positions.append(x)
    logits = x @ p["head.W"].T + p["head.b"]
    if not np.all(np.isfinite(logits)):
        raise NumericBlowupError(block_index, "non-finite logits")
    return BatchForward(positions, transitions, attention, logits, caches, stats)


def _stage_boundaries(cfg):
    bounds, pos = [], 0
    for n in cfg.blocks_per_stage:
        bounds.append(pos)
        pos += n + 1
    return tuple(bounds)


def _trajectories(model, fb, nsi_mode):
    cfg = model.config
    bounds = _stage_boundaries(cfg)
    out = []
    for i in range(fb.logits.shape[0]):
        states = [pos[i] for pos in fb.positions]
        steps = []
        for tr in fb.transitions:
            if tr is None or isinstance(tr, str) or nsi_mode == "unit_step":
                steps.append(1.0)
            else:
                steps.append(tr[i])
        out.append(Trajectory(states, steps, bounds, "network"))
    return out


def softmax_cross_entropy(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), y].mean()
    probs = np.exp(logp)
    return float(loss), probs


def forward(model, x0, mode="eval", label=None, force_attention=None):
    """Forward one input; returns a :class:`ForwardRecord`."""
    fb = forward_batch(model, np.atleast_2d(x0), mode, force_attention)
    traj = _trajectories(model, fb, "recorded_step")[0]
    att = tuple(a[0].copy() for a in fb.attention if a is not None)
    loss = None
    if label is not None:
        loss, _ = softmax_cross_entropy(fb.logits, np.asarray([label]))
    return ForwardRecord(traj, att, fb.logits[0].copy(), loss)


def extract_trajectories(model, inputs, nsi_mode="recorded_step"):
    """Eval-mode trajectories, one per input row.

    With ``recorded_step`` the block step sizes are the attention vectors
    (scalar 1 for the plain network); with ``unit_step`` every step is 1.
    Stage-change projections are recorded as scalar unit steps and are never
    measured by :func:`stiffkit.metrics.nsi_profile`.
    """
    if nsi_mode not in ("unit_step", "recorded_step"):
        raise ValidationError(f"unknown NSI mode {nsi_mode!r}")
    fb = forward_batch(model, inputs, "eval")
    return _trajectories(model, fb, nsi_mode)


def loss_and_gradients(model, X, y, mode="train"):
    """Mean softmax cross-entropy and exact gradients for every parameter.

    Returns ``(loss, grads, stats)``; ``stats`` holds the running IEBN
    statistics after this batch (train mode only).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValidationError("empty batch")
    cfg = model.config
    p = model.params
    fb = forward_batch(model, X, mode)
    loss, probs = softmax_cross_entropy(fb.logits, y)
    n = X.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = {}
    x_last = fb.positions[-1]
    grads["head.W"] = dlogits.T @ x_last
    grads["head.b"] = dlogits.sum(axis=0)
    dx = dlogits @ p["head.W"]
    kind = cfg.adaptor
    for cache in reversed(fb.caches):
        if "proj" in cache:
            proj = model.fixed.get(f"proj{cache['proj']}")
            if proj is not None:
                dx = dx @ proj
            continue
        key = cache["key"]
        x, h, a, f = cache["x"], cache["h"], cache["a"], cache["f"]
        dout = dx
        if kind == "none":
            dx = dout.copy()
            df = dout
        else:
            att = cache["att"]
            dx = dout.copy()
            df = dout * att
            if not cache.get("forced"):
                dy = dout * f * att * (1.0 - att)
                ex, ef = _adaptor_backward(p, key, kind, cache["adaptor"], dy, x, f, cache["xn"], grads)
                dx = dx + ex
                df = df + ef
        grads[f"{key}.W2"] = df.T @ a
        grads[f"{key}.b2"] = df.sum(axis=0)
        dh = (df @ p[f"{key}.W2"]) * (h > 0)
        grads[f"{key}.W1"] = dh.T @ x
        grads[f"{key}.b1"] = dh.sum(axis=0)
        dx = dx + dh @ p[f"{key}.W1"]
    grads["stem.W"] = dx.T @ X
    grads["stem.b"] = dx.sum(axis=0)
    for k in p:
        if k not in grads:  # parameters unreachable through a forced adaptor
            grads[k] = np.zeros_like(p[k])
    return loss, grads, fb.stats


def predict(model, X):
    return forward_batch(model, X, "eval").logits.argmax(axis=1)


def accuracy(model, X, y):
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(model, X) == np.asarray(y)))


def train(config, dataset, hyper=TrainHyper()):
    """Plain SGD with momentum; deterministic for a fixed ``config.seed``.

    Returns ``(model, metrics)`` where ``metrics["test_acc"]`` is the task
    performance used downstream.
    """
    model = init_network(config)
    p = model.params
    rng = np.random.default_rng([config.seed, 0x5EED])
    velocity = {k: np.zeros_like(v) for k, v in p.items()}
    X, y = dataset.X_train, dataset.y_train
    n = X.shape[0]
    if n == 0:
        raise ValidationError("empty training set")
    n_batches = max(1, int(np.ceil(n / hyper.batch_size)))
    history = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for idx in np.array_split(order, n_batches):
            try:
                loss, grads, stats = loss_and_gradients(model, X[idx], y[idx], "train")
            except NumericBlowupError as exc:
                raise TrainingDivergedError(epoch) from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            model.buffers.update(stats)
            for k, g in grads.items():
                v = velocity[k]
                v *= hyper.momentum
                v += g + hyper.weight_decay * p[k]
                p[k] -= hyper.lr * v
            total += loss * len(idx)
        history.append(total / n)
    metrics = {
        "train_acc": accuracy(model, dataset.X_train, dataset.y_train),
        "test_acc": accuracy(model, dataset.X_test, dataset.y_test),
        "final_loss": history[-1] if history else None,
        "epochs": hyper.epochs,
    }
    return model, metrics

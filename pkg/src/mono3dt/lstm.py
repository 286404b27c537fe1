"""From-scratch recurrent motion model: prediction and update LSTMs.

Two single-layer LSTM cells cooperate per tracked object:

  * the prediction cell steps on the newest updated velocity and emits a
    velocity estimate, advancing the object one frame;
  * the update cell consumes the embeddings of (predicted - previous) and
    (observed - previous) location offsets and emits a refinement added to
    the prediction.

Everything is float64 numpy with an explicit backward pass so gradients
can be verified against finite differences. Offsets rather than absolute
world coordinates are embedded, keeping inputs at meters-per-frame scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMBED_DIM = 64
HIDDEN_DIM = 128
HISTORY_LEN = 5
GATE_DIM = 4 * HIDDEN_DIM

WEIGHTS_FORMAT_VERSION = 1

# name -> shape of every parameter array
PARAM_SHAPES = {
    "w_embed": (EMBED_DIM, 3),
    "b_embed": (EMBED_DIM,),
    "w_pgate": (GATE_DIM, EMBED_DIM + HIDDEN_DIM),
    "b_pgate": (GATE_DIM,),
    "w_ugate": (GATE_DIM, 2 * EMBED_DIM + HIDDEN_DIM),
    "b_ugate": (GATE_DIM,),
    "w_phead1": (EMBED_DIM, HIDDEN_DIM),
    "b_phead1": (EMBED_DIM,),
    "w_phead2": (3, EMBED_DIM),
    "b_phead2": (3,),
    "w_uhead1": (EMBED_DIM, HIDDEN_DIM),
    "b_uhead1": (EMBED_DIM,),
    "w_uhead2": (3, EMBED_DIM),
    "b_uhead2": (3,),
}


class DivergedTraining(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class LstmWeights:
    arrays: dict

    def __post_init__(self):
        for name, shape in PARAM_SHAPES.items():
            arr = np.asarray(self.arrays[name], dtype=float).reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            self.arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @staticmethod
    def zeros() -> "LstmWeights":
        return LstmWeights({name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()})

    @staticmethod
    def initialize(rng: np.random.Generator, scale: float = 1.0) -> "LstmWeights":
        arrays = {}
        for name, shape in PARAM_SHAPES.items():
            if name.startswith("b_"):
                arrays[name] = np.zeros(shape)
            else:
                fan_in = shape[-1]
                arrays[name] = rng.normal(scale=scale / math.sqrt(fan_in), size=shape)
        # forget-gate bias starts open so early memory survives
        for gate_bias in ("b_pgate", "b_ugate"):
            arrays[gate_bias][HIDDEN_DIM : 2 * HIDDEN_DIM] = 1.0
        return LstmWeights(arrays)

    def copy(self) -> "LstmWeights":
        return LstmWeights({k: v.copy() for k, v in self.arrays.items()})


@dataclass
class LstmMotionState:
    """Per-tracklet recurrent state: velocity ring plus both cells' memory."""

    velocity_history: np.ndarray = field(default_factory=lambda: np.zeros((HISTORY_LEN, 3)))
    h_pred: np.ndarray = field(default_factory=lambda: np.zeros(HIDDEN_DIM))
    c_pred: np.ndarray = field(default_factory=lambda: np.zeros(HIDDEN_DIM))
    h_upd: np.ndarray = field(default_factory=lambda: np.zeros(HIDDEN_DIM))
    c_upd: np.ndarray = field(default_factory=lambda: np.zeros(HIDDEN_DIM))

    def copy(self) -> "LstmMotionState":
        return LstmMotionState(
            self.velocity_history.copy(),
            self.h_pred.copy(),
            self.c_pred.copy(),
            self.h_upd.copy(),
            self.c_upd.copy(),
        )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _cell_forward(w, b, x, h_prev, c_prev):
    z = w @ np.concatenate([x, h_prev]) + b
    i = _sigmoid(z[:HIDDEN_DIM])
    f = _sigmoid(z[HIDDEN_DIM : 2 * HIDDEN_DIM])
    g = np.tanh(z[2 * HIDDEN_DIM : 3 * HIDDEN_DIM])
    o = _sigmoid(z[3 * HIDDEN_DIM :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = (x, h_prev, c_prev, i, f, g, o, tanh_c)
    return h, c, cache


def _cell_backward(w, cache, dh, dc_in, grad_w, grad_b):
    x, h_prev, c_prev, i, f, g, o, tanh_c = cache
    do = dh * tanh_c
    dc = dc_in + dh * o * (1.0 - tanh_c * tanh_c)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)]
    )
    xh = np.concatenate([x, h_prev])
    grad_w += np.outer(dz, xh)
    grad_b += dz
    dxh = w.T @ dz
    return dxh[: len(x)], dxh[len(x) :], dc_prev


def _head_forward(w1, b1, w2, b2, h):
    a = w1 @ h + b1
    t = np.tanh(a)
    y = w2 @ t + b2
    return y, (h, t)


def _head_backward(w1, w2, cache, dy, grads, names):
    h, t = cache
    n1, nb1, n2, nb2 = names
    grads[n2] += np.outer(dy, t)
    grads[nb2] += dy
    dt = w2.T @ dy
    da = dt * (1.0 - t * t)
    grads[n1] += np.outer(da, h)
    grads[nb1] += da
    return w1.T @ da


def _embed(weights, v):
    return weights["w_embed"] @ v + weights["b_embed"]


def plstm_predict(state: LstmMotionState, weights: LstmWeights, p_prev: np.ndarray):
    """One prediction step. Returns (predicted location, advanced state).

    The input state is not mutated; velocity history is left untouched so
    coasting through occlusion keeps the pre-occlusion motion signature.
    """
    ep = _embed(weights, state.velocity_history[-1])
    h, c, _ = _cell_forward(weights["w_pgate"], weights["b_pgate"], ep, state.h_pred, state.c_pred)
    v_hat, _ = _head_forward(
        weights["w_phead1"], weights["b_phead1"], weights["w_phead2"], weights["b_phead2"], h
    )
    new_state = state.copy()
    new_state.h_pred = h
    new_state.c_pred = c
    return np.asarray(p_prev, dtype=float) + v_hat, new_state


def ulstm_update(
    state: LstmMotionState,
    weights: LstmWeights,
    p_tilde: np.ndarray,
    p_obs: np.ndarray,
    p_prev: np.ndarray,
):
    """Refine a prediction with the current observation.

    Returns (refined location, advanced state); the refined velocity
    (refined - previous) is pushed into the velocity ring.
    """
    p_prev = np.asarray(p_prev, dtype=float)
    e1 = _embed(weights, np.asarray(p_tilde, dtype=float) - p_prev)
    e2 = _embed(weights, np.asarray(p_obs, dtype=float) - p_prev)
    xu = np.concatenate([e1, e2])
    h, c, _ = _cell_forward(weights["w_ugate"], weights["b_ugate"], xu, state.h_upd, state.c_upd)
    corr, _ = _head_forward(
        weights["w_uhead1"], weights["b_uhead1"], weights["w_uhead2"], weights["b_uhead2"], h
    )
    p_bar = np.asarray(p_tilde, dtype=float) + corr
    new_state = state.copy()
    new_state.h_upd = h
    new_state.c_upd = c
    new_state.velocity_history = np.vstack([state.velocity_history[1:], p_bar - p_prev])
    return p_bar, new_state


_COS_EPS = 1e-8


def forward_window(weights: LstmWeights, obs: np.ndarray, gt: np.ndarray, linear_loss_to_gt=False):
    """Run both cells over one observation window and compute the loss.

    obs and gt are (T, 3); the first observation anchors the estimate.
    Loss per transition = L1(refined location, gt location)
                        + (1 - cos(consecutive refined velocities))
                        + L1(consecutive refined velocities),
    averaged over the T-1 transitions. Anchoring the first term on
    location keeps velocity biases from integrating into unbounded drift.
    Returns (loss, caches) where caches carry everything the backward pass
    needs.
    """
    T = len(obs)
    p_bar = obs[0].astype(float)
    v_last = np.zeros(3)
    hp = np.zeros(HIDDEN_DIM)
    cp = np.zeros(HIDDEN_DIM)
    hu = np.zeros(HIDDEN_DIM)
    cu = np.zeros(HIDDEN_DIM)
    steps = []
    total = 0.0
    vbar_prev = None
    for t in range(1, T):
        ep = _embed(weights, v_last)
        hp, cp, cache_p = _cell_forward(weights["w_pgate"], weights["b_pgate"], ep, hp, cp)
        v_hat, head_p = _head_forward(
            weights["w_phead1"], weights["b_phead1"], weights["w_phead2"], weights["b_phead2"], hp
        )
        d_obs = obs[t] - p_bar
        e1 = _embed(weights, v_hat)
        e2 = _embed(weights, d_obs)
        xu = np.concatenate([e1, e2])
        hu, cu, cache_u = _cell_forward(weights["w_ugate"], weights["b_ugate"], xu, hu, cu)
        corr, head_u = _head_forward(
            weights["w_uhead1"], weights["b_uhead1"], weights["w_uhead2"], weights["b_uhead2"], hu
        )
        v_bar = v_hat + corr
        v_gt = gt[t] - gt[t - 1]
        p_bar_new = p_bar + v_bar
        step_loss = float(np.sum(np.abs(p_bar_new - gt[t])))
        cos_cache = None
        v_ref = v_gt if linear_loss_to_gt else vbar_prev
        if v_ref is not None:
            na = float(np.linalg.norm(v_bar))
            nb = float(np.linalg.norm(v_ref))
            den = na * nb + _COS_EPS
            dot = float(np.dot(v_bar, v_ref))
            step_loss += 1.0 - dot / den
            step_loss += float(np.sum(np.abs(v_bar - v_ref)))
            cos_cache = (na, nb, den, dot, v_ref.copy())
        total += step_loss
        steps.append(
            {
                "v_last": v_last.copy(),
                "cache_p": cache_p,
                "head_p": head_p,
                "v_hat": v_hat,
                "d_obs": d_obs,
                "cache_u": cache_u,
                "head_u": head_u,
                "v_bar": v_bar,
                "v_gt": v_gt,
                "p_residual": p_bar_new - gt[t],
                "cos": cos_cache,
            }
        )
        v_last = v_bar
        vbar_prev = v_bar
        p_bar = p_bar_new
    loss = total / (T - 1)
    return loss, steps


def backward_window(weights: LstmWeights, steps, linear_loss_to_gt=False):
    """BPTT over forward_window caches. Returns gradient dict (same keys)."""
    grads = {name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()}
    n_steps = len(steps)
    scale = 1.0 / n_steps
    d_pbar = np.zeros(3)
    d_vbar_future = np.zeros(3)
    dhp = np.zeros(HIDDEN_DIM)
    dcp = np.zeros(HIDDEN_DIM)
    dhu = np.zeros(HIDDEN_DIM)
    dcu = np.zeros(HIDDEN_DIM)
    for t in range(n_steps - 1, -1, -1):
        st = steps[t]
        v_bar = st["v_bar"]
        # location L1 acts on p_bar_t, which both v_bar_t and p_bar_{t-1} feed
        d_pbar = d_pbar + scale * np.sign(st["p_residual"])
        g_vbar = np.zeros(3)
        g_prev_loss = np.zeros(3)
        if st["cos"] is not None:
            na, nb, den, dot, v_ref = st["cos"]
            # d/da [1 - dot(a,b)/den], den = |a||b| + eps
            if na > 0:
                g_vbar += scale * (-(v_ref / den) + dot * (v_bar / na) * nb / (den * den))
            else:
                g_vbar += scale * (-(v_ref / den))
            g_vbar += scale * np.sign(v_bar - v_ref)
            if not linear_loss_to_gt:
                if nb > 0:
                    g_prev_loss += scale * (-(v_bar / den) + dot * (v_ref / nb) * na / (den * den))
                else:
                    g_prev_loss += scale * (-(v_bar / den))
                g_prev_loss -= scale * np.sign(v_bar - v_ref)
        g_vbar = g_vbar + d_vbar_future + d_pbar
        d_pbar_prev = d_pbar.copy()
        g_vhat = g_vbar.copy()
        g_corr = g_vbar.copy()
        dhu_total = dhu + _head_backward(
            weights["w_uhead1"],
            weights["w_uhead2"],
            st["head_u"],
            g_corr,
            grads,
            ("w_uhead1", "b_uhead1", "w_uhead2", "b_uhead2"),
        )
        g_xu, dhu, dcu = _cell_backward(
            weights["w_ugate"], st["cache_u"], dhu_total, dcu, grads["w_ugate"], grads["b_ugate"]
        )
        g_e1 = g_xu[:EMBED_DIM]
        g_e2 = g_xu[EMBED_DIM:]
        grads["w_embed"] += np.outer(g_e2, st["d_obs"])
        grads["b_embed"] += g_e2
        d_pbar_prev += -(weights["w_embed"].T @ g_e2)
        grads["w_embed"] += np.outer(g_e1, st["v_hat"])
        grads["b_embed"] += g_e1
        g_vhat += weights["w_embed"].T @ g_e1
        dhp_total = dhp + _head_backward(
            weights["w_phead1"],
            weights["w_phead2"],
            st["head_p"],
            g_vhat,
            grads,
            ("w_phead1", "b_phead1", "w_phead2", "b_phead2"),
        )
        g_ep, dhp, dcp = _cell_backward(
            weights["w_pgate"], st["cache_p"], dhp_total, dcp, grads["w_pgate"], grads["b_pgate"]
        )
        grads["w_embed"] += np.outer(g_ep, st["v_last"])
        grads["b_embed"] += g_ep
        g_vlast = weights["w_embed"].T @ g_ep
        d_pbar = d_pbar_prev
        d_vbar_future = g_vlast + g_prev_loss
    return grads


@dataclass
class MotionTrainConfig:
    steps: int = 2000
    learning_rate: float = 1e-3
    momentum: float = 0.9
    grad_clip: float = 5.0
    window: int = 10
    batch_size: int = 4
    seed: int = 0
    init_scale: float = 0.5
    lr_decay: float = 0.5
    lr_decay_every: int = 250
    linear_loss_to_gt: bool = False


def train_lstm(dataset, config: MotionTrainConfig):
    """Gradient-descent training over observation windows.

    dataset: list of (true_positions (T,3), observed_positions (T,3)).
    Returns (weights, loss_history). Raises DivergedTraining on a
    non-finite loss and ValueError on an empty dataset.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    window = config.window
    usable = [i for i, (gt, obs) in enumerate(dataset) if len(gt) >= window]
    if not usable:
        raise ValueError(f"no trajectory is at least {window} frames long")
    rng = np.random.default_rng(config.seed)
    weights = LstmWeights.initialize(rng, scale=config.init_scale)
    velocity = {name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()}
    history = []
    lr = config.learning_rate
    for step in range(config.steps):
        if step > 0 and config.lr_decay_every > 0 and step % config.lr_decay_every == 0:
            lr *= config.lr_decay
        grads = {name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()}
        batch_loss = 0.0
        for _ in range(config.batch_size):
            idx = usable[rng.integers(len(usable))]
            gt, obs = dataset[idx]
            start = rng.integers(0, len(gt) - window + 1)
            gt_win = np.asarray(gt[start : start + window], dtype=float)
            obs_win = np.asarray(obs[start : start + window], dtype=float)
            loss, steps_cache = forward_window(
                weights, obs_win, gt_win, linear_loss_to_gt=config.linear_loss_to_gt
            )
            batch_loss += loss
            g = backward_window(weights, steps_cache, linear_loss_to_gt=config.linear_loss_to_gt)
            for name in grads:
                grads[name] += g[name]
        batch_loss /= config.batch_size
        if not math.isfinite(batch_loss):
            raise DivergedTraining(f"loss became non-finite at step {step}")
        history.append(batch_loss)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())) / config.batch_size
        clip_factor = 1.0 / config.batch_size
        if norm > config.grad_clip:
            clip_factor *= config.grad_clip / norm
        for name in weights.arrays:
            velocity[name] = config.momentum * velocity[name] + grads[name] * clip_factor
            weights.arrays[name] -= lr * velocity[name]
    return weights, history


def sample_trajectories(rng: np.random.Generator, count: int, length: int = 40):
    """Synthetic planar vehicle trajectories with observation noise.

    Profiles mix constant velocity, constant turn rate, and braking or
    accelerating speed ramps. Observation noise mimics monocular depth
    recovery: strong along a fixed per-trajectory axis (the view ray),
    weak across it. Returns list of (true (T,3), obs (T,3)).
    """
    dataset = []
    kinds = ("const", "turn", "ramp", "ramp")  # ramp-heavy: braking matters most
    for _ in range(count):
        kind = kinds[rng.integers(len(kinds))]
        speed = rng.uniform(0.2, 1.0)
        heading = rng.uniform(0, 2 * math.pi)
        omega = rng.uniform(-0.03, 0.03) if kind == "turn" else 0.0
        accel = rng.uniform(-0.035, 0.035) if kind == "ramp" else 0.0
        pos = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.5, 1.0)])
        sigma_ray = rng.uniform(0.04, 0.55)
        sigma_lat = rng.uniform(0.01, 0.08)
        ray_angle = rng.uniform(0, 2 * math.pi)
        ray = np.array([math.cos(ray_angle), math.sin(ray_angle), 0.0])
        lat = np.array([-math.sin(ray_angle), math.cos(ray_angle), 0.0])
        true = [pos.copy()]
        for _ in range(length - 1):
            pos = pos + speed * np.array([math.cos(heading), math.sin(heading), 0.0])
            heading += omega
            speed = speed + accel
            if speed > 1.0:
                speed, accel = 1.0, -accel
            elif speed < 0.05:
                speed, accel = 0.05, -accel
            true.append(pos.copy())
        true = np.array(true)
        noise = np.outer(rng.normal(scale=sigma_ray, size=length), ray)
        noise += np.outer(rng.normal(scale=sigma_lat, size=length), lat)
        dataset.append((true, true + noise))
    return dataset


def save_weights(weights: LstmWeights, path) -> None:
    doc = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "arch": {"embed_dim": EMBED_DIM, "hidden_dim": HIDDEN_DIM, "history_len": HISTORY_LEN},
        "arrays": {name: arr.tolist() for name, arr in weights.arrays.items()},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_weights(path) -> LstmWeights:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights format_version {doc.get('format_version')!r}")
    return LstmWeights({name: np.array(vals) for name, vals in doc["arrays"].items()})

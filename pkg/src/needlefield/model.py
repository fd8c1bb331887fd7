"""Per-shape occupancy network, optimizer and training loop.

The field is a small coordinate MLP (default 4 sine layers of 128
units, linear scalar output) fitted to one shape with Adam against the
needle loss.  Sine units with a high-bandwidth first layer (the
sinusoidal-representation-network recipe) are used instead of tanh
because the surface signal lives at the needle length scale, a few
percent of the domain; a low-frequency start cannot sharpen a sign flip
that thin within a few thousand steps.

All forward matrix products go through einsum, whose per-element
summation order does not depend on batch size, so evaluating a batch is
bitwise identical to evaluating its rows one at a time (BLAS kernels do
not guarantee that).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import Aabb, PointCloud, cube_domain
from .loss import (CLAMP, LossBreakdown, reconstruction_loss,
                   reconstruction_loss_grad)
from .needles import (NeedleSet, SigmaRule, sample_crossing_needles,
                      sample_same_side_needles)
from .seeding import MODEL_INIT, NEEDLE_OFFSETS, SPACE_SAMPLES, substream

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NDLFIELD"
CHECKPOINT_VERSION = 1


def _mm(a, b):
    return np.einsum("ik,kj->ij", a, b)


class OccupancyModel:
    """MLP from 3d points to one occupancy logit per point.

    Hidden layers apply sin elementwise; the output layer is linear.
    Holds matching parameter and gradient buffers; `backward` fills the
    gradient buffer for the complete needle loss of one batch.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("weight/bias shape mismatch")
        for wa, wb in zip(weights, weights[1:]):
            if wa.shape[1] != wb.shape[0]:
                raise ValueError("layer widths do not chain")
        if weights[0].shape[0] != 3 or weights[-1].shape[1] != 1:
            raise ValueError("model must map 3 coordinates to 1 logit")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]

    @classmethod
    def create(cls, rng: np.random.Generator, hidden_width: int = 128,
               hidden_layers: int = 4, final_init: str = "small",
               frequency_scale: float = 30.0):
        """Fresh model with the standard sine-network initialization.

        First-layer weights are U(+-frequency_scale/3) with phases
        (biases) U(-pi, pi), so the first layer spans spatial
        frequencies up to roughly frequency_scale radians per unit
        coordinate; deeper sine layers (weights U(+-sqrt(6/fan_in)))
        compose these into finer detail during training.  The output
        layer is either near-zero ("small") or exactly zero ("zero",
        logit 0 everywhere).

        The zero output layer is the neutral start (occupancy 0.5
        everywhere) but it is an exact stationary point of the needle
        loss: every per-needle gradient vanishes at logit pairs (0, 0),
        so training never leaves it.  "small" (weights std 1e-3, bias
        -0.1) keeps the start near-neutral while making the
        saddle escapable, and is the default used by fit_shape.  The
        bias term matters: same-side needles amplify whatever sign the
        start seeds locally, so a zero-mean random start condenses free
        space into a patchwork of confident wrong-sign domains that
        anneal away very slowly.  A faint uniform "empty" tilt seeds one
        coherent domain instead, and the crossing needles then carve the
        interior out of it.
        """
        if hidden_layers < 1 or hidden_width < 1:
            raise ValueError("need at least one hidden layer and unit")
        if final_init not in ("small", "zero"):
            raise ValueError("final_init must be 'small' or 'zero'")
        if frequency_scale <= 0:
            raise ValueError("frequency_scale must be > 0")
        widths = [3] + [hidden_width] * hidden_layers + [1]
        weights, biases = [], []
        limit = frequency_scale / widths[0]
        weights.append(rng.uniform(-limit, limit, size=(widths[0], widths[1])))
        biases.append(rng.uniform(-np.pi, np.pi, size=widths[1]))
        for fan_in, fan_out in zip(widths[1:-2], widths[2:-1]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        if final_init == "zero":
            weights.append(np.zeros((widths[-2], 1)))
            biases.append(np.zeros(1))
        else:
            weights.append(rng.normal(0.0, 1e-3, size=(widths[-2], 1)))
            biases.append(np.full(1, -0.1))
        return cls(weights, biases)

    @property
    def widths(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights) + (1,)

    def copy(self) -> "OccupancyModel":
        return OccupancyModel([w.copy() for w in self.weights],
                              [b.copy() for b in self.biases])

    # --- evaluation ---

    def _forward(self, points: np.ndarray):
        """Logits plus the activation cache needed by backward."""
        x = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if x.ndim != 2 or x.shape[1] != 3:
            raise ValueError(f"expected (n, 3) points, got {x.shape}")
        layer_in = []
        act_grad = []   # cos of each hidden pre-activation
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            layer_in.append(h)
            z = _mm(h, w) + b
            h = np.sin(z)
            act_grad.append(np.cos(z))
        layer_in.append(h)
        logit = _mm(h, self.weights[-1]) + self.biases[-1]
        return logit[:, 0], (layer_in, act_grad)

    def forward_logits(self, points: np.ndarray) -> np.ndarray:
        """One logit per query point, shape (n,)."""
        return self._forward(points)[0]

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        """sigmoid(logit) in [0, 1]."""
        from scipy.special import expit
        return expit(self.forward_logits(points))

    # --- gradients ---

    def zero_grad(self) -> None:
        for g in self.grad_w:
            g[:] = 0.0
        for g in self.grad_b:
            g[:] = 0.0

    def backward(self, cache, dlogit: np.ndarray) -> None:
        """Fill the gradient buffers from d(loss)/d(logit).

        `cache` is the tuple returned by _forward for the same batch;
        dlogit has shape (n,).
        """
        layer_in, act_grad = cache
        d = np.asarray(dlogit, dtype=np.float64).reshape(-1, 1)
        if len(d) != len(layer_in[-1]):
            raise ValueError("gradient/batch size mismatch")
        # plain matmul here: gradients carry no batch-invariance contract,
        # so the faster BLAS path is fine (forward keeps einsum)
        for li in range(len(self.weights) - 1, -1, -1):
            self.grad_w[li][:] = layer_in[li].T @ d
            self.grad_b[li][:] = d.sum(axis=0)
            if li > 0:
                d = (d @ self.weights[li].T) * act_grad[li - 1]

    # --- flat parameter vector (optimizer and checkpoint order) ---

    def params_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def grads_flat(self) -> np.ndarray:
        parts = []
        for gw, gb in zip(self.grad_w, self.grad_b):
            parts.append(gw.ravel())
            parts.append(gb)
        return np.concatenate(parts)

    def set_params_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[:] = vec[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            b[:] = vec[pos:pos + b.size]
            pos += b.size
        if pos != vec.size:
            raise ValueError("parameter vector length mismatch")

    # --- checkpoints: magic, version, widths, little-endian float64 ---

    def save(self, path) -> None:
        widths = self.widths
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(widths)))
            fh.write(struct.pack(f"<{len(widths)}I", *widths))
            fh.write(self.params_flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "OccupancyModel":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an occupancy-model checkpoint")
        off = len(CHECKPOINT_MAGIC)
        version, nw = struct.unpack_from("<II", blob, off)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        off += 8
        widths = struct.unpack_from(f"<{nw}I", blob, off)
        off += 4 * nw
        params = np.frombuffer(blob, dtype="<f8", offset=off)
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(params[pos:pos + fan_in * fan_out]
                           .reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(params[pos:pos + fan_out].copy())
            pos += fan_out
        if pos != params.size:
            raise ValueError(f"{path}: checkpoint payload length mismatch")
        return cls(weights, biases)


@dataclass
class AdamState:
    """Standard Adam with bias correction."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0


def adam_step(state: AdamState, params: np.ndarray,
              grads: np.ndarray) -> np.ndarray:
    """One Adam update; returns the new parameter vector."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError("parameter/gradient shape mismatch")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if state.m.shape != params.shape:
        raise ValueError("optimizer state does not match parameters")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def parse_sigma_schedule(spec_str: str):
    """Parse "1.0:0,0.5:2000" into ((1.0, 0), (0.5, 2000))."""
    entries = []
    for part in spec_str.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            mult, start = part.split(":")
            entries.append((float(mult), int(start)))
        except ValueError:
            raise ValueError(f"bad schedule entry {part!r}, want mult:iter")
    return tuple(entries)


def _validate_schedule(schedule):
    if not schedule:
        raise ValueError("sigma schedule must have at least one entry")
    starts = [s for _, s in schedule]
    if starts[0] != 0:
        raise ValueError("sigma schedule must start at iteration 0")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ValueError("sigma schedule iterations must increase")
    if any(m <= 0 for m, _ in schedule):
        raise ValueError("sigma multipliers must be > 0")


def sigma_multiplier_at(schedule, iteration: int) -> float:
    mult = schedule[0][0]
    for m, start in schedule:
        if start <= iteration:
            mult = m
    return mult


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    sigma_schedule is a tuple of (multiplier, start_iteration) pairs,
    first entry at iteration 0; the halving curriculum is
    ((1.0, 0), (0.5, k)).  In the "fixed" regime needles are drawn once
    at iteration 0 and reused bit-identically, so later schedule entries
    are logged but have no effect on the needles.
    """

    iterations: int = 3000
    n_same: int = 2048
    regime: str = "resample"
    sigma_schedule: tuple = ((1.0, 0),)
    lr: float = 5e-4
    clamp: float = CLAMP
    seed: int = 0
    hidden_width: int = 128
    hidden_layers: int = 4
    final_init: str = "small"
    frequency_scale: float = 30.0
    domain: Aabb | None = None

    def __post_init__(self):
        if self.iterations < 1 or self.n_same < 1:
            raise ValueError("iterations and n_same must be positive")
        if self.regime not in ("resample", "fixed"):
            raise ValueError("regime must be 'resample' or 'fixed'")
        _validate_schedule(self.sigma_schedule)

    def working_domain(self) -> Aabb:
        return self.domain if self.domain is not None else cube_domain()


@dataclass
class LossHistory:
    """Per-iteration loss terms plus sigma-schedule change events."""

    l_opp: np.ndarray
    l_same: np.ndarray
    events: list = field(default_factory=list)   # (iteration, multiplier)

    @property
    def l_total(self) -> np.ndarray:
        return self.l_opp + self.l_same

    def __len__(self) -> int:
        return len(self.l_opp)

    def rows(self):
        """(iteration, l_opp, l_same, l_total) tuples for the CSV."""
        for i in range(len(self)):
            yield i, self.l_opp[i], self.l_same[i], self.l_opp[i] + self.l_same[i]


class FitDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, iteration: int, breakdown: LossBreakdown, history):
        super().__init__(f"non-finite loss at iteration {iteration}: "
                         f"l_opp={breakdown.l_opp} l_same={breakdown.l_same}")
        self.iteration = iteration
        self.breakdown = breakdown
        self.history = history


def needle_batch_loss(model: OccupancyModel, opp: NeedleSet, same: NeedleSet,
                      clamp: float = CLAMP) -> LossBreakdown:
    """Reconstruction loss of one needle batch under the model."""
    lo = model.forward_logits(np.vstack([opp.a, opp.b]))
    ls = model.forward_logits(np.vstack([same.a, same.b]))
    n_o, n_s = len(opp), len(same)
    return reconstruction_loss(lo[:n_o], lo[n_o:], ls[:n_s], ls[n_s:],
                               clamp=clamp)


def needle_batch_gradient(model: OccupancyModel, opp: NeedleSet,
                          same: NeedleSet, clamp: float = CLAMP):
    """Loss and full parameter gradient for one needle batch.

    Fills the model's gradient buffers and returns
    (LossBreakdown, flat gradient vector).
    """
    pts = np.vstack([opp.a, opp.b, same.a, same.b])
    logits, cache = model._forward(pts)
    n_o, n_s = len(opp), len(same)
    lo_a, lo_b = logits[:n_o], logits[n_o:2 * n_o]
    ls_a, ls_b = logits[2 * n_o:2 * n_o + n_s], logits[2 * n_o + n_s:]
    breakdown = reconstruction_loss(lo_a, lo_b, ls_a, ls_b, clamp=clamp)
    d_oa, d_ob, d_sa, d_sb = reconstruction_loss_grad(lo_a, lo_b, ls_a, ls_b)
    model.zero_grad()
    model.backward(cache, np.concatenate([d_oa, d_ob, d_sa, d_sb]))
    return breakdown, model.grads_flat()


def fit_shape(cloud: PointCloud, cfg: TrainConfig,
              init: OccupancyModel | None = None):
    """Fit an occupancy field to one point cloud.

    Per iteration: draw needles (or reuse them in the fixed regime),
    evaluate the loss, backpropagate, take one Adam step.  Returns
    (model, LossHistory).  Raises FitDivergedError on non-finite loss
    with the partial history attached.

    `init` warm-starts from an existing model (used to continue training
    at a smaller sigma); otherwise weights come from the seed's init
    stream.
    """
    if len(cloud) < 2:
        raise ValueError("need at least 2 points to fit")
    domain = cfg.working_domain()
    if init is not None:
        model = init.copy()
    else:
        model = OccupancyModel.create(substream(cfg.seed, MODEL_INIT),
                                      hidden_width=cfg.hidden_width,
                                      hidden_layers=cfg.hidden_layers,
                                      final_init=cfg.final_init,
                                      frequency_scale=cfg.frequency_scale)
    adam = AdamState(lr=cfg.lr)
    params = model.params_flat()
    hist = LossHistory(np.zeros(cfg.iterations), np.zeros(cfg.iterations))
    opp = same = None
    current_mult = None
    for it in range(cfg.iterations):
        mult = sigma_multiplier_at(cfg.sigma_schedule, it)
        if mult != current_mult:
            if current_mult is not None:
                logger.info("sigma multiplier -> %g at iteration %d", mult, it)
            hist.events.append((it, mult))
            current_mult = mult
        if opp is None or cfg.regime == "resample":
            opp = sample_crossing_needles(cloud, SigmaRule(mult),
                                          substream(cfg.seed, NEEDLE_OFFSETS, it))
            same = sample_same_side_needles(cloud, opp.endpoints, cfg.n_same,
                                            domain,
                                            substream(cfg.seed, SPACE_SAMPLES, it))
        breakdown, grads = needle_batch_gradient(model, opp, same,
                                                 clamp=cfg.clamp)
        hist.l_opp[it] = breakdown.l_opp
        hist.l_same[it] = breakdown.l_same
        if not breakdown.finite():
            partial = LossHistory(hist.l_opp[:it + 1].copy(),
                                  hist.l_same[:it + 1].copy(),
                                  list(hist.events))
            raise FitDivergedError(it, breakdown, partial)
        params = adam_step(adam, params, grads)
        model.set_params_flat(params)
        if it % 500 == 0 or it == cfg.iterations - 1:
            logger.debug("iter %d: l_opp=%.4f l_same=%.4f", it,
                         breakdown.l_opp, breakdown.l_same)
    return model, hist

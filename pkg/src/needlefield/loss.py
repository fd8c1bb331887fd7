"""Needle loss on occupancy logits.

For a needle with endpoint logits (u, v) and side target t in {0, 1},
the loss is the binary cross entropy between t and the probability that
two independent Bernoulli draws with parameters sigmoid(u), sigmoid(v)
agree.  Expanding that composition gives the closed form

    loss = log(e^u + 1) + log(e^v + 1)
           - t * log(e^{u+v} + 1) - (1 - t) * log(e^u + e^v)

computed here with logaddexp so nothing overflows.  Logits are clamped
to +-CLAMP before the forward evaluation; the backward pass uses the raw
inputs, so forward and backward are intentionally (slightly)
inconsistent outside the clamp range.  The total training loss is the
mean over the crossing set plus the mean over the same-side set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

CLAMP = 10.0
MIN_CLAMP = 5.0


def composite_bernoulli(b_x, b_y):
    """Probability that independent Bernoulli(b_x) and Bernoulli(b_y)
    draws agree: b_x*b_y + (1-b_x)*(1-b_y).  Inputs must be in [0, 1].
    """
    b_x = np.asarray(b_x, dtype=np.float64)
    b_y = np.asarray(b_y, dtype=np.float64)
    if np.any((b_x < 0) | (b_x > 1) | (b_y < 0) | (b_y > 1)):
        raise ValueError("Bernoulli parameters must lie in [0, 1]")
    return b_x * b_y + (1.0 - b_x) * (1.0 - b_y)


def _check_clamp(clamp: float) -> float:
    if clamp < MIN_CLAMP:
        raise ValueError(f"clamp bound must be >= {MIN_CLAMP}")
    return float(clamp)


def needle_bce_forward(logit_a, logit_b, target, clamp: float = CLAMP):
    """Per-needle loss values, >= 0 up to rounding.

    Inputs broadcast; targets must be 0 or 1.  Logits are clamped to
    [-clamp, clamp] before evaluation.
    """
    clamp = _check_clamp(clamp)
    t = np.asarray(target, dtype=np.float64)
    if np.any((t != 0.0) & (t != 1.0)):
        raise ValueError("targets must be 0 or 1")
    u = np.clip(np.asarray(logit_a, dtype=np.float64), -clamp, clamp)
    v = np.clip(np.asarray(logit_b, dtype=np.float64), -clamp, clamp)
    # log(e^x + 1) = logaddexp(0, x); log(e^u + e^v) = logaddexp(u, v)
    return (np.logaddexp(0.0, u) + np.logaddexp(0.0, v)
            - t * np.logaddexp(0.0, u + v)
            - (1.0 - t) * np.logaddexp(u, v))


def needle_bce_backward(logit_a, logit_b, target):
    """d(loss)/d(logit) pair for each needle.

    Evaluated on the raw (unclamped) logits:

        d/du = S(u) - t * S(u + v) - (1 - t) * S(u - v)

    and symmetrically for v, with S the sigmoid.  At u = v = 0 both
    components are exactly 0 for either target.
    """
    u = np.asarray(logit_a, dtype=np.float64)
    v = np.asarray(logit_b, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    su = expit(u + v)
    da = expit(u) - t * su - (1.0 - t) * expit(u - v)
    db = expit(v) - t * su - (1.0 - t) * expit(v - u)
    return da, db


@dataclass(frozen=True)
class LossBreakdown:
    """Mean loss per needle set; l_total = l_opp + l_same as computed."""

    l_opp: float
    l_same: float

    @property
    def l_total(self) -> float:
        return self.l_opp + self.l_same

    def finite(self) -> bool:
        return bool(np.isfinite(self.l_opp) and np.isfinite(self.l_same))


def reconstruction_loss(opp_logit_a, opp_logit_b,
                        same_logit_a, same_logit_b,
                        clamp: float = CLAMP) -> LossBreakdown:
    """Mean crossing-needle loss (target 0) plus mean same-side loss
    (target 1).  Either set being empty is an error.
    """
    opp_logit_a = np.asarray(opp_logit_a, dtype=np.float64)
    same_logit_a = np.asarray(same_logit_a, dtype=np.float64)
    if opp_logit_a.size == 0 or same_logit_a.size == 0:
        raise ValueError("both needle sets must be nonempty")
    l_opp = float(np.mean(needle_bce_forward(opp_logit_a, opp_logit_b,
                                             0.0, clamp)))
    l_same = float(np.mean(needle_bce_forward(same_logit_a, same_logit_b,
                                              1.0, clamp)))
    return LossBreakdown(l_opp=l_opp, l_same=l_same)


def reconstruction_loss_grad(opp_logit_a, opp_logit_b,
                             same_logit_a, same_logit_b):
    """Gradients of reconstruction_loss w.r.t. every logit.

    Returns (d_opp_a, d_opp_b, d_same_a, d_same_b); each needle's pair
    gradient is scaled by 1/|set| to match the mean aggregation.
    """
    n_opp = np.asarray(opp_logit_a).size
    n_same = np.asarray(same_logit_a).size
    if n_opp == 0 or n_same == 0:
        raise ValueError("both needle sets must be nonempty")
    da_o, db_o = needle_bce_backward(opp_logit_a, opp_logit_b, 0.0)
    da_s, db_s = needle_bce_backward(same_logit_a, same_logit_b, 1.0)
    return (da_o / n_opp, db_o / n_opp, da_s / n_same, db_s / n_same)

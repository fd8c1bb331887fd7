"""Walk through the needle loss at interesting logit pairs.

The loss scores a needle by the probability that two independent
occupancy coin-flips at its endpoints agree or disagree.  The closed
form used in training is algebraically identical to that composite
probability but evaluates stably for any logit; this script prints both
routes side by side, then the gradient structure that makes the neutral
field a saddle you can actually leave.

Run:  python3 demos/02_loss_anatomy.py
"""

import numpy as np
from scipy.special import expit

from needlefield.loss import (composite_bernoulli, needle_bce_backward,
                              needle_bce_forward)


def naive(u, v, t):
    p_agree = composite_bernoulli(expit(u), expit(v))
    return -t * np.log(p_agree) - (1.0 - t) * np.log(1.0 - p_agree)


def main():
    print("closed form vs direct probability composition")
    print("   u      v  target   closed    naive     |diff|")
    cases = [(0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (3.0, -3.0, 0.0),
             (3.0, 3.0, 0.0), (-4.0, -4.5, 1.0), (8.0, -8.0, 1.0)]
    for u, v, t in cases:
        a = float(needle_bce_forward(u, v, t))
        b = float(naive(u, v, t))
        print(f"{u:5.1f} {v:6.1f} {t:7.0f}  {a:8.4f} {b:8.4f}  {abs(a - b):.1e}")

    print()
    print("the neutral field (logit 0 everywhere) scores ln 2 on every")
    print("needle and its gradient there is exactly zero:")
    du, dv = needle_bce_backward(0.0, 0.0, 0.0)
    print(f"  loss {float(needle_bce_forward(0.0, 0.0, 0.0)):.6f}"
          f"  (ln 2 = {np.log(2):.6f}),  gradient ({float(du)}, {float(dv)})")
    print("so an exactly-zero output layer never trains; the fitter starts")
    print("from a small random output layer with a faint negative bias")
    print("instead, which the same-side needles then amplify coherently.")

    print()
    print("crossing needle (target 0): gradient pushes the endpoint")
    print("logits apart; same-side needle (target 1) pulls them together:")
    for t, name in ((0.0, "crossing "), (1.0, "same-side")):
        du, dv = needle_bce_backward(0.5, 0.4, t)
        print(f"  {name} at (0.5, 0.4): d/du {float(du):+.4f}, "
              f"d/dv {float(dv):+.4f}")

    print()
    print("saturation: beyond the clamp the loss plateaus, so a single")
    print("confident-but-wrong needle cannot blow up an update:")
    for u in (2.0, 6.0, 10.0, 20.0):
        val = float(needle_bce_forward(u, u, 0.0))
        print(f"  wrong crossing needle at ({u:5.1f}, {u:5.1f}): "
              f"loss {val:8.4f}")


if __name__ == "__main__":
    main()

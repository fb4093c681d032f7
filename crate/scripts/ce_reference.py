"""Reference softmax cross-entropy values at 60 significant digits.

Prints Rust array entries `(logits, targets, value)` for the frozen table in
crates/core/tests/loss_oracle.rs.
"""
import random

import mpmath

mpmath.mp.dps = 60


def ce(logits, targets):
    zs = [mpmath.mpf(z) for z in logits]
    m = max(zs)
    lse = m + mpmath.log(mpmath.fsum(mpmath.exp(z - m) for z in zs))
    return mpmath.fsum(-mpmath.mpf(t) * (z - lse) for z, t in zip(zs, targets) if t)


def main():
    rng = random.Random(20240611)
    cases = []
    for i in range(24):
        c = rng.choice([2, 3, 10])
        spread = [1.0, 10.0, 30.0][i % 3]
        logits = [rng.uniform(-spread, spread) for _ in range(c)]
        targets = [0.0] * c
        if i % 4 == 3:
            w = [rng.random() for _ in range(c)]
            s = sum(w)
            targets = [x / s for x in w]
        else:
            targets[rng.randrange(c)] = 1.0
        cases.append((logits, targets))
    cases.append(([30.0, -30.0], [0.0, 1.0]))
    cases.append(([30.0, -30.0], [1.0, 0.0]))
    cases.append(([-30.0] * 10, [1.0] + [0.0] * 9))
    for logits, targets in cases:
        v = ce(logits, targets)
        fmt = lambda xs: ", ".join(repr(float(x)) for x in xs)
        print(f"    (&[{fmt(logits)}], &[{fmt(targets)}], {mpmath.nstr(v, 25)}),")


if __name__ == "__main__":
    main()

"""Rest-point spectra, degree and gap checks for a May-Leonard system."""
import argparse

import numpy as np

from csim.certify import may_leonard_degree, may_leonard_gap_checks
from csim.spectrum import exponents_at_rest_point, find_rest_points
from csim.sysmodel import MayLeonardSystem, check_hypothesis_A


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=1.4)
    ap.add_argument("--beta", type=float, default=0.9)
    args = ap.parse_args()
    s = MayLeonardSystem(args.alpha, args.beta)
    print(f"alpha={s.alpha} beta={s.beta}; hypothesis (A) margin {check_hypothesis_A(s).min_margin:+.4f}")
    for p in find_rest_points(s):
        rep = exponents_at_rest_point(s, p)
        ext = {i: round(v, 6) for i, v in rep.external.items()}
        print(f"  rest point {np.round(p.location, 6).tolist()}: internal {np.round(rep.internal, 6).tolist()} external {ext}")
    l = may_leonard_degree(s.alpha)
    print(f"degree l = {l}")
    if l is not None:
        for label, g in may_leonard_gap_checks(s.alpha, s.beta, l):
            print(f"  gap check (k={l - 1}) at {label}: margin {g.margin:+.6f} {'holds' if g.holds else 'fails'}")


if __name__ == "__main__":
    main()

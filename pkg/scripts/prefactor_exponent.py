"""Can the fitted prefactor exponent tell an interior minimum from a boundary one?

Patch-side indicator with constant data on the unit disk (interior minimum,
exponent 3) and on a disk segment whose closest point is on the cut
(boundary minimum, exponent 7/2).  On this side the 1/tau of the
transformed data cancels against d_nu v ~ tau v, so gamma should approach
the integral exponent itself.
"""

import math

import numpy as np

from quenchloc.forward import BoundaryData, boundary_profiles
from quenchloc.geometry import DetectorBall, disk_segment, flat_disk, set_distance
from quenchloc.indicator import indicator_curve
from quenchloc.inversion import extract_distance


def main():
    ball = DetectorBall((0.0, 0.0, 3.0), 1.0)
    print(f"{'patch':>10} {'expected':>9} {'window':>12} {'d_hat':>8} {'d':>8} {'gamma':>7}")
    for name, patch, delta in (("disk", flat_disk(), 3.0), ("segment", disk_segment(1.0, 0.5), 3.5)):
        d, _ = set_distance(patch, ball)
        sbd = boundary_profiles(BoundaryData(patch, 1.0, -1.0, 1.0), (48, 48), dt=0.01, T0=2 * d + 1)
        for lo, hi in ((20, 40), (40, 80), (80, 160)):
            taus = np.linspace(lo / d, hi / d, 9)
            fit = extract_distance(indicator_curve(sbd, taus, ball))
            print(f"{name:>10} {delta:9.1f} {f'[{lo}, {hi}]/d':>12} {fit.d:8.4f} {d:8.4f} {fit.gamma:7.2f}")


if __name__ == "__main__":
    main()

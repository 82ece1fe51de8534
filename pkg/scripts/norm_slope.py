"""Local log-log slope of ||v||_{L^2(R^3)} against tau for the unit ball.

The slope tends to -2 (v is about tau^{-2} inside the ball); -3/2 is an
upper bound and is only approached near tau of a few units.
"""

import numpy as np

from quenchloc.geometry import DetectorBall
from quenchloc.potentials import v_l2_norm


def main():
    ball = DetectorBall((0.0, 0.0, 0.0), 1.0)
    print(f"{'tau window':>16} {'slope':>8}")
    for lo, hi in ((0.5, 2), (2, 5), (5, 10), (10, 20), (20, 80), (80, 320), (320, 1280)):
        taus = np.geomspace(lo, hi, 5)
        norms = [v_l2_norm(ball, t) for t in taus]
        slope = np.polyfit(np.log(taus), np.log(norms), 1)[0]
        print(f"{f'[{lo}, {hi}]':>16} {slope:8.4f}")


if __name__ == "__main__":
    main()

"""How often does a Gaussian frequency give a one-to-one sine feature on [0, 1]?

Monte-Carlo estimates next to the closed-form bound, for a few scales.
The bound only holds once sigma is large enough (about 0.4 and up); below
that a narrow Gaussian puts most frequencies in the injective range.
"""

import math

from featpinn import kernel as kn

n = 200_000
print(f"{'sigma':>6} {'estimate':>9} {'bound':>7} {'3 SE':>7}  within")
for sigma in (0.1, 0.25, 0.5, 1.0, 2.0, 5.0):
    p, bound = kn.surjectivity_estimate(sigma, n, seed=1)
    se3 = 3 * math.sqrt(p * (1 - p) / n)
    print(f"{sigma:6.2f} {p:9.4f} {bound:7.4f} {se3:7.4f}  {p <= bound + se3}")

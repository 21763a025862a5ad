"""Train a small diffusion PINN with and without an RBF feature layer.

A reduced budget so it runs in under a minute on one core; the acceptance
suite runs the full desk-scale version.
"""

from featpinn.train import TrainConfig, train

common = dict(problem="diffusion", hidden=(32, 32), n_r=400, n_ic=100, n_bc=100,
              adam_steps=1500, lbfgs_steps=100, seed=0)

for label, fm in [("identity", {"family": "identity"}),
                  ("random fourier", {"family": "random_fourier", "m": 32, "sigma": 1.0}),
                  ("rbf gaussian", {"family": "rbf_int", "m": 64, "sigma": 0.2})]:
    rep = train(TrainConfig(feature_map=fm, **common))
    print(f"{label:15s} L2RE {rep.l2re:.2e}  loss {rep.final_losses['loss_total']:.2e}  "
          f"{rep.wall_s:.0f} s")

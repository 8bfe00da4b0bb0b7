# %% [markdown]
# # Gradient flows of KL and chi-square
#
# The Fokker-Planck equation is the KL gradient flow; its decay rate is
# governed by the spectral gap of the weighted Laplacian. The chi-square
# flow is a porous-medium equation, and a particle system whose diffusion
# is modulated by the evolving relative density follows it.

# %%
import numpy as np

from bayesflows import catalog
from bayesflows.flows import decay_curve
from bayesflows.functionals import BayesModel
from bayesflows.grid import Grid, GridDensity
from bayesflows.spectral import assemble_weighted_laplacian, spectral_gap

# %% [markdown]
# KL decay towards a standard Gaussian from a shifted start.

# %%
model = BayesModel(catalog.ou(1.0))
g = Grid.with_spacing(-8, 8, 0.01)
init = GridDensity.from_function(g, lambda x: np.exp(-(x[:, 0] - 2) ** 2))
curve = decay_curve(model, init, "kl_fp", "KL", t_end=2.0, record_every=0.05, window=(0.5, 2.0))
print("fitted KL rate:", round(curve.fitted_rate, 4))

# %% [markdown]
# The L2 distance to equilibrium decays at the spectral gap, here for a
# double-well target where convexity fails but a Poincare inequality holds.

# %%
dw = BayesModel(catalog.double_well())
gd = Grid.with_spacing(-4, 4, 0.02)
lam2 = spectral_gap(assemble_weighted_laplacian(dw, gd)).lambda2
start = GridDensity.from_function(gd, lambda x: np.exp(-(x[:, 0] - 0.8) ** 2 / 0.5))
l2 = decay_curve(dw, start, "kl_fp", "L2", t_end=8.0, record_every=0.1, dt=0.002, window=(3.0, 8.0))
print(f"spectral gap {lam2:.4f}   fitted L2 rate {-l2.fitted_rate:.4f}")

# %% [markdown]
# The chi-square process is easiest to run through the experiment runner;
# the report compares the final particle histogram with the PDE density.
# Run `bayesflows run configs/chi2_process.ini` (about ten seconds) and read
# `l1_hist_vs_pde` in its report.json.

"""
Checking the hand-written backward passes
=========================================

Every layer's analytic gradient is compared with central differences.
Then an autoencoder compresses rank-2 data living in 8 dimensions.
"""

import numpy as np

from socforecast import train_autoencoder
from socforecast.gradcheck import run_suite

for name, err in run_suite(seed=0).items():
    print("%-14s %.2e" % (name, err))

# Eight observed features driven by two hidden factors.
rng = np.random.default_rng(0)
X = rng.normal(size=(8, 2)) @ rng.normal(size=(2, 2000))
X = (X - X.min(axis=1, keepdims=True)) / np.ptp(X, axis=1, keepdims=True)

params, history = train_autoencoder(X, latent=2, epochs=200, seed=0)
variance = X.var(axis=1).sum()
print("reconstruction loss: %.4f after 1 epoch, %.4f after 200" % (history[0], history[-1]))
print("as a share of input variance: %.1f%%" % (100 * history[-1] / variance))

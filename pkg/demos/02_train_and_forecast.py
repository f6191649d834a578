"""
Train the autoencoder + BiLSTM and forecast SoC
===============================================

A reduced-size model (32 units per direction, 8 epochs) so it finishes in
about a minute. The acceptance suite
trains the full-size model on 20,000 steps.
"""

import math

import numpy as np

from socforecast import TrainConfig, coulomb_soc, fit, forecast_autoregressive, generate_synthetic, BatterySpec
from socforecast.coulomb import modes_from_pairs
from socforecast.pipeline import raw_window, throughput_deltas

series = generate_synthetic(BatterySpec(), "mixed", 20000, 10.0, seed=7, initial_soc=80.0)

# Smaller than the defaults: 32 units per direction and a few epochs.
config = TrainConfig(kind="ae_bilstm", hidden=32, epochs=8, ae_epochs=20, seed=0)
model, log, data = fit(series, config)

print("autoencoder loss: %.4f -> %.4f" % (log.ae_loss[0], log.ae_loss[-1]))
print("validation loss by epoch:", ["%.4f" % v for v in log.val_loss])
for name, value in log.val_metrics.items():
    print("  %-20s %.4f" % (name, value))

# Roll forward 100 steps from a validation-split window. Each predicted pair
# becomes the next input step.
origin = math.floor(0.8 * len(series)) + model.window_len + 1000
seed = raw_window(series, model.feature_names, origin, model.window_len)
predicted = forecast_autoregressive(model, seed, horizon=100)
actual = throughput_deltas(series)[origin - 1 : origin - 1 + 100]

# Both sequences become SoC traces from the same starting point.
soc0 = float(series.soc[origin - 1])
pred_trace = coulomb_soc(soc0, predicted, model.capacity_ah, modes_from_pairs(predicted, model.dt))
true_trace = coulomb_soc(soc0, actual, model.capacity_ah, series.mode[origin : origin + 100])
print("start SoC %.1f%%" % soc0)
print("after 100 steps: forecast %d%%, actual %d%%" % (pred_trace.derived_soc[-1], true_trace.derived_soc[-1]))
print("mean |SoC error| over the horizon: %.2f pp" % np.abs(pred_trace.raw_soc - true_trace.raw_soc).mean())

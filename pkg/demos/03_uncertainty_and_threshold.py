"""Teach a trained network to predict its own error, then act on the prediction.

The backbone is trained first and then frozen.  A small branch reads the
40-unit hidden layer and regresses the recovery error the backbone makes on
each training image.  On held-out scenes we check how well predicted and
true errors agree and what a 2.5 degree acceptance threshold buys.

    python3 demos/03_uncertainty_and_threshold.py [epochs]
"""
import sys

import numpy as np

from cwcc import CwccConfig, CwccModel, SynthConfig, TrainConfig, synthesize, train
from cwcc.dataset import stack
from cwcc.metrics import pearson, recovery_error, summarize
from cwcc.uncertainty import (UncertaintyBranch, build_error_dataset, predict_with_uncertainty,
                              threshold_filter, train_branch)

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
scenes = synthesize(SynthConfig(size=64, reflectance_bias=(1.2, 1.0, 0.8), seed=7), 250)
x_train, y_train = stack(scenes[:200])
x_test, y_test = stack(scenes[200:])

model, _ = train(CwccModel(CwccConfig(input_size=64), seed=0), (x_train, y_train), None,
                 TrainConfig(epochs=epochs), seed=0)

dataset = build_error_dataset(model, x_train, y_train)
print(f"training-set errors: {summarize(dataset.errors).format()}")
branch, losses = train_branch(UncertaintyBranch(seed=0), dataset, backbone=model)
print(f"branch MSE: first epoch {losses[0]:.4f}, last epoch {losses[-1]:.4f}")

# one forward pass yields both the illuminant and the predicted error
model.calls.clear()
estimates, predicted = predict_with_uncertainty(model, branch, x_test)
print(f"evaluations for {len(x_test)} test images: {dict(model.calls)}")

true = recovery_error(y_test, estimates)
print(f"held-out Pearson correlation: {pearson(predicted, true):.4f}")

pairs = np.c_[predicted, true]
print(f"unfiltered worst-25% mean: {summarize(true).worst25_mean:.4f}")
for tau in (1.0, 1.5, 2.0, 2.5, 3.0, 4.0):
    print("  " + threshold_filter(pairs, tau).describe())

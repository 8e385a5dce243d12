"""Train the weight-shared network and its per-channel ablation side by side.

Both models see the same red-leaning scenes, the same initial seed and the
same schedule.  The shared model applies one feature extractor to the r, g
and b planes; the ablation gives each plane its own extractor and so carries
three times the convolutional parameters.

The default schedule mirrors the test benchmark (30 epochs on 200 images of
64x64 pixels) and takes roughly ten minutes per model on one CPU core.  Pass
a smaller epoch count for a quick look:

    python3 demos/02_train_shared_vs_per_channel.py 5
"""
import sys
import time

import numpy as np

from cwcc import CwccConfig, CwccModel, SynthConfig, TrainConfig, count_parameters, synthesize, train
from cwcc.baselines import grey_world
from cwcc.dataset import stack
from cwcc.metrics import recovery_error, summarize
from cwcc.model import evaluate

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
scenes = synthesize(SynthConfig(size=64, reflectance_bias=(1.2, 1.0, 0.8), seed=7), 250)
x_train, y_train = stack(scenes[:200])
x_test, y_test = stack(scenes[200:])

gw = np.array([recovery_error(g, grey_world(im)) for im, g in zip(x_test, y_test)])
print(f"grey_world on the held-out scenes: {summarize(gw).format()}")

for variant in ("shared", "per_channel"):
    model = CwccModel(CwccConfig(input_size=64, variant=variant), seed=0)
    print(f"\n{variant}: {count_parameters(model)} parameters")
    t0 = time.perf_counter()
    model, history = train(model, (x_train, y_train), None,
                           TrainConfig(epochs=epochs, batch_size=16, lr=1e-3), seed=0,
                           progress=lambda h: print(f"  epoch {h.epoch:2d}  train {h.train_err_deg:.4f}"))
    errors = evaluate(model, x_test, y_test)
    print(f"  held-out after {time.perf_counter() - t0:.0f} s: {summarize(errors).format()}")

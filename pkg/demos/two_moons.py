"""
Two moons under rotation
========================

"""

import numpy as np

from adaembed import RunConfig, train
from adaembed.data import make_two_moons_shift

source, target_train, target_test = make_two_moons_shift(300, rotation_degrees=30, seed=0)
print(source.inputs[:3], source.labels[:3])

moons = RunConfig(dataset="moons", n_classes=2, input_dim=2, rotation_degrees=30)
for method in ("supervised", "adaembed"):
    accs = [train(moons.replace(method=method, seed=s)).final_accuracy for s in range(3)]
    print(method, np.round(accs, 3), "mean %.3f" % np.mean(accs))

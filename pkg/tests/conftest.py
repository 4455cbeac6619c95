"""Shared fixtures: a small trained model so attack/SoI behavior is realistic."""

import numpy as np
import pytest

from soidetect import nn, soi, data


@pytest.fixture(scope="session")
def tiny_splits():
    return data.make_synthetic(seed=41, n_train=240, n_test=120, n_classes=4,
                               shape=(1, 12, 12))


@pytest.fixture(scope="session")
def tiny_model(tiny_splits):
    layers = [nn.Conv2d(4, 3, stride=1, pad=1), nn.Relu(), nn.Flatten(),
              nn.Dense(4)]
    model = nn.build_model(layers, (1, 12, 12), seed=7)
    cfg = soi.TrainConfig(epochs=4, lr=2e-3, batch_size=32, seed=7)
    return soi.train_crossentropy(model, tiny_splits.train_x,
                                  tiny_splits.train_y, cfg)

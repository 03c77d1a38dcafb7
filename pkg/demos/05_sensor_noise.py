"""
Sensor noise
============

The monochrome sensor sums the colour channels for free. Noise is Gaussian
with a standard deviation proportional to the signal, drawn from a
counter-based generator so each element is reproducible from the seed.
"""
import numpy as np

from metaconv.sensor import NoiseModel, capture, sample_noise

planes = np.stack([np.full((200, 500), v) for v in (1.0, 2.0, 3.0)])
img = capture(planes, NoiseModel(mean=0.0, proportionality=0.05, seed=0))
print("signal 6.0: mean", img.values.mean().round(4), "std", img.values.std().round(4), "(expect 0.3)")

for level in (0.5, 1.0, 2.0, 4.0):
    z = sample_noise((10 ** 5,), np.full(10 ** 5, level), NoiseModel(0.0, 0.05, seed=1))
    print(f"signal {level}: sigma {z.std():.4f}  sigma/signal {z.std() / level:.4f}")

print("zero signal stays exactly zero:",
      not capture(np.zeros((3, 8, 8)), NoiseModel(0.0, 0.05, seed=2)).values.any())

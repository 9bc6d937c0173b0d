"""Derived AOM quantities and the transit-time response of the default TeO2-like cell."""
import math

import numpy as np

from modlin.plant import AcoustoOpticMaterial, AomGeometry, AomParams, AomPlant, aom_geometry_report
from modlin.plant.aom import half_intensity_frequency, step_rise_time, transit_kernel

fs = 400e6
p = AomParams(AcoustoOpticMaterial(2.26, 0.34, 5990.0, 4200.0), AomGeometry(3.5e-3, 1e-3, 100e-6),
              1064e-9, 200e6, 1.0, math.inf)
r = aom_geometry_report(p)
print(f"tau_a = {r.tau_a * 1e9:.2f} ns, a = {r.a_ratio:.3f}, f3dB = {r.f3db_hz / 1e6:.1f} MHz, carrier ok {r.f0_ok}")

k = transit_kernel(p.tau_a, fs)
print(f"kernel: {k.size} taps, rise {step_rise_time(np.cumsum(k), fs) / p.tau_a:.3f} tau_a, "
      f"half amplitude at {half_intensity_frequency(k, fs) * p.tau_a:.3f} / tau_a")

v = np.r_[np.zeros(16), np.full(64, p.drive_for_eta((math.pi / 2) ** 2))]
y = AomPlant(p, 1e-3, fs).process(v).samples
print("full-scale step, diffracted power [mW]:", np.round(y[14:40] * 1e3, 3))

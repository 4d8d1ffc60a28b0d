"""
Building regressors
===================

Splines for loan age and CLTV, the spread at origination, macro
transforms, and the FICO by balance interaction.
"""
import numpy as np

from hazard_scorecard import (FeatureSpec, GeneratorSpec, MacroTransformSpec, build_design,
                              interaction_from_bad_rates, macro_transform, pspline, sato, simulate,
                              validate_and_label)
from hazard_scorecard.months import parse_month
from hazard_scorecard.panel import original_panel

# Hinge terms: (x - knot) above the knot, zero below.
print("pspline(loan_age, 8):", pspline(np.array([2, 8, 14]), 8))
print("sato(4.5%, market 3.9%):", sato(4.5, 3.9))

# The interaction rescales FICO within each balance band so that the
# bad-rate slope across FICO groups is the same in every band.
rates = np.array([
    [0.00305, 0.00166, 0.00117, 0.00084, 0.00045],
    [0.00296, 0.00171, 0.00113, 0.00078, 0.00049],
    [0.00316, 0.00172, 0.00127, 0.00079, 0.00048],
    [0.00320, 0.00190, 0.00137, 0.00083, 0.00043],
])
inter = interaction_from_bad_rates(rates, (160000, 238000, 350000))
print("band slopes:", np.round(inter.slopes, 7), "average:", round(inter.average_slope, 7))
print("band multipliers:", np.round(inter.band_multipliers, 6))

# Macro transforms are looked up at the calendar month of each row.
port = simulate(GeneratorSpec(n_loans=500, seed=1))
spec = FeatureSpec()
m = parse_month("2021-06")
for t in spec.macro_transforms + (MacroTransformSpec("UNRATENSA", "yoy_diff"),):
    print(f"{t.name} at 2021-06: {macro_transform(port.macros[t.series], t, m):.4f}")

# A design matrix over the original (unexploded) panel.
hs = validate_and_label(port.loans, port.performance).histories
d = build_design(original_panel(hs), {ln.loan_id: ln for ln in port.loans}, port.macros, spec)
print(f"{len(d)} rows x {len(d.names)} regressors")
print("columns:", ", ".join(d.names))

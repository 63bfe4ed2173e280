# %% [markdown]
# # A residual generator you can check by hand
#
# The smallest interesting model has one unknown signal `x`, two measured
# channels and one fault:
#
#     H(p) = [p + 1; 1],   L(p) = [0; -1],   F = [1; 0].
#
# A first-order numerator `N(p)` with `N(p) H(p) = 0` must be proportional to
# `[-1, p + 1]`, and then `N(p) F = -1`, so the fault reaches the residual.

# %%
import numpy as np

from scenario_fdi import NonlinearDaeModel, PolyMatrix
from scenario_fdi.dae import detectability_check, stack_system
from scenario_fdi.synthesis import feasible_filter, max_sensitivity_filter, robust_filter_qp

H = PolyMatrix(np.array([[[1.0], [1.0]], [[1.0], [0.0]]]))
L = PolyMatrix(np.array([[[0.0], [-1.0]]]))
F = PolyMatrix(np.array([[[1.0], [0.0]]]))
model = NonlinearDaeModel(H, L, F)
print(detectability_check(model.H, model.F).summary())

# %% [markdown]
# The stacked coefficient row is `Nbar = [N_0, N_1]`; the expected direction is
# `[-1, 1, 0, 1]`.

# %%
a = [1.0, 1.0]                      # denominator p + 1
filt = feasible_filter(model, 1, a)
st = stack_system(model.H, model.F, 1)
print("Nbar          ", filt.Nbar)
print("Nbar @ Hbar   ", filt.Nbar @ st.Hbar)
print("Nbar @ Fbar   ", filt.Nbar @ st.Fbar)

# %% [markdown]
# Maximizing the fault sensitivity under `||Nbar||_inf <= 1` and minimizing a
# quadratic signature cost give the same direction here, because the null space
# is one dimensional.

# %%
best = max_sensitivity_filter(model, 1, a)
robust = robust_filter_qp(model, 1, a, np.eye(4))
for name, res in (("sensitivity", best), ("robust QP", robust)):
    print(f"{name:12s} Nbar={np.round(res.filter.Nbar, 6)} gamma*={res.gamma_star:.4g}")

from __future__ import annotations

import numpy as np
import pytest

from panelbreaks.inference.critical import simulate_critical_values
from panelbreaks.panel import PanelDataset


def random_panel(rng: np.random.Generator, n: int, t: int, p_x: int = 0, p_w: int = 1,
                 n_factors: int = 1, noise: float = 1.0, breaks=(), shift: float = 0.0
                 ) -> PanelDataset:
    """Small factor panel with i.i.d. loadings; ``shift`` is added to delta after each break."""
    f = rng.standard_normal((t, n_factors))
    x = np.einsum("tm,nmp->ntp", f, rng.standard_normal((n, n_factors, p_x))) \
        + rng.standard_normal((n, t, p_x))
    w = np.einsum("tm,nmp->ntp", f, rng.standard_normal((n, n_factors, p_w))) \
        + rng.standard_normal((n, t, p_w))
    level = np.ones(t)
    for b in breaks:
        level[b:] += shift
    gam = rng.standard_normal((n, n_factors))
    y = (w.sum(axis=2) * level) + gam @ f.T + noise * rng.standard_normal((n, t))
    if p_x:
        y = y + x.sum(axis=2)
    return PanelDataset(y, x, w, np.zeros((t, 0)))


@pytest.fixture(scope="session")
def small_cv():
    """Low-precision table for tests that only need a consistent critical value."""
    tab = simulate_critical_values("WDmax", 3, 2, 0.15, grid=400, reps=4000, seed=7)
    tab = tab.merge(simulate_critical_values("seqF", 3, 2, 0.15, grid=400, reps=4000, seed=7))
    tab = tab.merge(simulate_critical_values("WDmax", 3, 1, 0.15, grid=400, reps=4000, seed=7))
    return tab.merge(simulate_critical_values("seqF", 3, 1, 0.15, grid=400, reps=4000, seed=7))

"""Shared test oracles: finite differences and small reference passes."""

import numpy as np

from voxloop.autodiff import Tensor, backward


def finite_difference_check(build_loss, params: dict[str, Tensor],
                            step: float = 1e-5, rtol: float = 1e-4,
                            max_entries: int = 40,
                            seed: int = 0) -> float:
    """Compare analytic gradients with central differences.

    ``build_loss`` must rebuild the forward pass from the current
    parameter values. Checks up to ``max_entries`` randomly chosen
    coordinates per parameter and returns the worst relative error seen.
    """
    loss = build_loss()
    backward(loss)
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for name, p in params.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        count = min(max_entries, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for c in coords:
            original = flat[c]
            flat[c] = original + step
            up = float(build_loss().data)
            flat[c] = original - step
            down = float(build_loss().data)
            flat[c] = original
            numeric = (up - down) / (2 * step)
            analytic = grads[name].reshape(-1)[c]
            scale = max(abs(numeric), abs(analytic), 1.0)
            worst = max(worst, abs(numeric - analytic) / scale)
    assert worst < rtol, f"gradient mismatch {worst:.3e} >= {rtol:.0e}"
    return worst


def rotation_angle_degrees(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Relative rotation angle via the chordal distance.

    Equals arccos((trace(Ra^T Rb) - 1) / 2) exactly, but stays accurate
    for tiny angles where the arccos form saturates in float64.
    """
    diff = r_a - r_b
    chord = np.linalg.norm(diff) / (2.0 * np.sqrt(2.0))
    return float(np.degrees(2.0 * np.arcsin(np.clip(chord, 0.0, 1.0))))

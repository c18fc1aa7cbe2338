"""Visual and textual treatment functions.

Every function is pure: the input is never mutated and all randomness comes
from a generator built from the explicit ``seed`` argument.
"""
from __future__ import annotations

import numpy as np

DEFAULT_BLUR_KERNEL = 5
DEFAULT_SALT_PEPPER_DENSITY = 0.1


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3 or frame.shape[1] < 1 or frame.shape[2] < 1:
        raise ValueError(f"frame must have shape (3, H, W), got {frame.shape}")
    return frame


def salt_pepper(frame: np.ndarray, density: float, seed: int) -> np.ndarray:
    """Corrupt pixel locations with salt (1) or pepper (0) noise.

    Each (row, col) location is hit independently with probability
    ``density``; a hit location is set to the same extreme value in all three
    channels.
    """
    frame = _check_frame(frame)
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    _, h, w = frame.shape
    hit = rng.random((h, w)) < density
    salt = rng.random((h, w)) < 0.5
    out = frame.copy()
    out[:, hit] = salt[hit].astype(frame.dtype)
    return out


def blur(frame: np.ndarray, kernel_size: int = DEFAULT_BLUR_KERNEL) -> np.ndarray:
    """Per-channel box-mean filter with edge-replicated borders."""
    frame = _check_frame(frame)
    if int(kernel_size) != kernel_size or kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be an odd integer >= 1, got {kernel_size}")
    if kernel_size == 1:
        return frame.copy()
    r = kernel_size // 2
    padded = np.pad(frame.astype(np.float64), ((0, 0), (r, r), (r, r)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel_size, kernel_size), axis=(1, 2))
    out = windows.mean(axis=(-2, -1))
    return np.clip(out, 0.0, 1.0).astype(frame.dtype)


def drop_words(tokens: list[str], k: int, seed: int) -> list[str]:
    """Remove exactly ``k`` tokens at uniformly random positions.

    Survivors keep their relative order.
    """
    tokens = list(tokens)
    if k < 0 or k > len(tokens):
        raise ValueError(f"cannot drop {k} words from a {len(tokens)}-word query")
    rng = np.random.default_rng(seed)
    dropped = set(rng.choice(len(tokens), size=k, replace=False).tolist())
    return [tok for i, tok in enumerate(tokens) if i not in dropped]

"""Named parameter store."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor


class ParamError(ValueError):
    pass


class Params:
    """Ordered mapping of names to trainable tensors."""

    def __init__(self, seed: int = 0):
        self._t: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)

    def add(self, name: str, shape: tuple, fan_in: int | None = None, zero: bool = False,
            gain: float = 1.0) -> Tensor:
        """Normal init with variance ``gain / fan_in``; ``gain=2`` suits a following ReLU."""
        if name in self._t:
            raise ParamError(f"duplicate parameter {name}")
        if zero:
            data = np.zeros(shape)
        else:
            fan = fan_in if fan_in is not None else shape[-2]
            data = self._rng.normal(0.0, np.sqrt(gain / max(fan, 1)), size=shape)
        t = Tensor(data, requires_grad=True, name=name)
        self._t[name] = t
        return t

    def linear(self, name: str, n_in: int, n_out: int, gain: float = 1.0) -> None:
        self.add(f"{name}.W", (n_in, n_out), gain=gain)
        self.add(f"{name}.b", (n_out,), zero=True)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._t[name]
        except KeyError:
            raise ParamError(f"missing parameter {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __len__(self) -> int:
        return len(self._t)

    def names(self) -> list[str]:
        return list(self._t)

    def tensors(self) -> list[Tensor]:
        return list(self._t.values())

    def count(self) -> int:
        return int(sum(t.size for t in self._t.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._t.items()}

    def load_arrays(self, arrays: dict) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        missing = set(self._t) - set(arrays)
        if missing:
            raise ParamError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, t in self._t.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                raise ParamError(f"shape mismatch for {k}: {a.shape} vs {t.shape}")
            if not np.isfinite(a).all():
                raise ParamError(f"non-finite values in {k}")
            t.data[...] = a

"""Named parameter sets with a frozen / trainable partition.

A ParamSet maps dotted names to tensors.  Frozen entries are constants
(requires_grad False) and can never be replaced; trainable entries are leaves
the optimizers update functionally via ``replace``.  Iteration order is
insertion order, which is deterministic because construction is.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import ContractError, ShapeError, Tensor


class ParamSet:
    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray, frozen: bool = False) -> None:
        if name in self._entries:
            raise ContractError(f"duplicate parameter {name!r}")
        arr = np.asarray(value)
        self._entries[name] = Tensor(arr, requires_grad=not frozen)
        if frozen:
            self._frozen.add(name)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable_names(self) -> list[str]:
        return [n for n in self._entries if n not in self._frozen]

    def frozen_names(self) -> list[str]:
        return [n for n in self._entries if n in self._frozen]

    def trainable_tensors(self) -> list[Tensor]:
        return [self._entries[n] for n in self.trainable_names()]

    def replace(self, name: str, value) -> None:
        """Swap a trainable tensor for a new leaf of the same shape and dtype."""
        if name not in self._entries:
            raise ContractError(f"unknown parameter {name!r}")
        if name in self._frozen:
            raise ContractError(f"parameter {name!r} is frozen")
        old = self._entries[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        if arr.shape != old.shape:
            raise ShapeError(
                f"replace {name!r}: shape {arr.shape} != {old.shape}"
            )
        self._entries[name] = Tensor(arr.astype(old.data.dtype, copy=False),
                                     requires_grad=True)

    def copy(self) -> "ParamSet":
        """Fresh leaves for trainable entries; frozen tensors are shared."""
        out = ParamSet()
        for name, t in self._entries.items():
            if name in self._frozen:
                out._entries[name] = t
                out._frozen.add(name)
            else:
                out._entries[name] = Tensor(t.data.copy(), requires_grad=True)
        return out

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet()
        for name, t in self._entries.items():
            out.add(name, t.data.astype(dtype), frozen=name in self._frozen)
        return out

    def byte_hash(self, names: list[str] | None = None) -> str:
        """sha256 over (name, shape, dtype, raw bytes) in sorted name order."""
        h = hashlib.sha256()
        for name in sorted(names if names is not None else self._entries):
            t = self._entries[name]
            h.update(name.encode())
            h.update(str(t.shape).encode())
            h.update(str(t.data.dtype).encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def n_scalars(self, trainable_only: bool = False) -> int:
        names = self.trainable_names() if trainable_only else self.names()
        return sum(self._entries[n].data.size for n in names)


def partition_params(params: ParamSet) -> tuple[list[str], list[str]]:
    """(frozen names, trainable names); the union is every entry exactly once."""
    return params.frozen_names(), params.trainable_names()

"""Parameters, module registry and the seeded generator used for initialization."""
from __future__ import annotations

from typing import Any, Iterator, Mapping

import numpy as np

from framework.errors import CheckpointError, ConfigError
from framework.tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A learned tensor; its hierarchical ``name`` is assigned by the owning module tree."""

    def __init__(self, data: Any, name: str = "", trainable: bool = True, dtype: Any = None):
        super().__init__(data, requires_grad=trainable, dtype=get_default_dtype() if dtype is None else dtype)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"


class RngState:
    """Named deterministic generator: same seed and same draw sequence give identical values."""

    def __init__(self, seed: int, algorithm: str = "PCG64"):
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
        try:
            bit_generator = getattr(np.random, algorithm)(seed)
        except AttributeError:
            raise ConfigError(f"unknown generator algorithm {algorithm!r}") from None
        self.seed = seed
        self.algorithm = algorithm
        self.generator = np.random.Generator(bit_generator)

    def state(self) -> dict[str, Any]:
        return self.generator.bit_generator.state

    def restore(self, state: Mapping[str, Any]) -> None:
        self.generator.bit_generator.state = dict(state)

    def uniform(self, low: float, high: float, shape: tuple[int, ...]) -> np.ndarray:
        return self.generator.uniform(low, high, size=shape)

    def normal(self, scale: float, shape: tuple[int, ...]) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=shape)


class Module:
    """Tree of parameters.  Children are found through attributes, lists and dicts."""

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            yield from _walk(f"{prefix}{attr}", value)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def registry(self) -> dict[str, Parameter]:
        """Name every parameter and return them keyed by name; names must be unique."""
        found: dict[str, Parameter] = {}
        seen: set[int] = set()
        for name, param in self.named_parameters():
            if id(param) in seen:
                raise ConfigError(f"parameter {name!r} is registered under more than one name")
            seen.add(id(param))
            param.name = name
            found[name] = param
        return found

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: param.data for name, param in self.registry().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.registry()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        mismatched = [
            f"{name}: checkpoint {tuple(state[name].shape)} vs network {params[name].shape}"
            for name in sorted(set(params) & set(state))
            if tuple(state[name].shape) != params[name].shape
        ]
        if missing or unexpected or mismatched:
            lines = ["checkpoint is incompatible with the configured network"]
            lines += [f"  missing: {name}" for name in missing]
            lines += [f"  unexpected: {name}" for name in unexpected]
            lines += [f"  shape: {line}" for line in mismatched]
            raise CheckpointError("\n".join(lines))
        for name, param in params.items():
            param.data = np.array(state[name], dtype=param.dtype)


def _walk(name: str, value: Any) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for index, item in enumerate(value):
            yield from _walk(f"{name}.{index}", item)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(f"{name}.{key}", item)

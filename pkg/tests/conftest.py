import dataclasses
import sys

import numpy as np
import pytest

from avparse.autodiff import Tensor
from avparse.model import named_parameters


def param_arrays(params, prefix: str = "") -> dict[str, np.ndarray]:
    """float64 copies of every parameter, keyed so they can be passed as kwargs."""
    return {prefix + name.replace(".", "__"): t.data.astype(np.float64) for name, t in named_parameters(params)}


def _copy_tree(obj):
    if isinstance(obj, list):
        return [_copy_tree(x) for x in obj]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.replace(obj, **{f.name: _copy_tree(getattr(obj, f.name))
                                           for f in dataclasses.fields(obj) if f.init})
    return obj


def bind(params, tensors: dict[str, Tensor], prefix: str = ""):
    """Structural copy of ``params`` with parameters swapped for the given Tensors."""
    out = _copy_tree(params)
    for key, t in tensors.items():
        if not key.startswith(prefix):
            continue
        *path, last = key[len(prefix):].split("__")
        obj = out
        for part in path:
            obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
        setattr(obj, last, t)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)

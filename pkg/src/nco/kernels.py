"""Backend selection for the oracle kernels.

The compiled extension is used when it imports; otherwise, or when
``NCO_PURE_PYTHON`` is set to a non-empty value other than ``0``, the numpy
twin is used. Both expose the same functions with identical results.
"""
import importlib
import os

_FORCE_PY = os.environ.get("NCO_PURE_PYTHON", "") not in ("", "0")


def load(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "cython":
        return importlib.import_module("nco._ckernels")
    if name == "python":
        return importlib.import_module("nco._pykernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        load("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if _FORCE_PY:
    impl = load("python")
else:
    try:
        impl = load("cython")
    except ImportError:
        impl = load("python")

BACKEND = impl.BACKEND
exhaustive = impl.exhaustive
subset_dp = impl.subset_dp
one_tree = impl.one_tree
hk_ascent = impl.hk_ascent
two_opt = impl.two_opt
nearest_neighbor = impl.nearest_neighbor

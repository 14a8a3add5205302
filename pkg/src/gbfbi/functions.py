"""Built-in scalar fields on M with their known wave front sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FunctionSpecError(ValueError):
    pass


@dataclass(frozen=True)
class TestFunction:
    """Evaluable field plus singular-support metadata.

    ``lines`` are (point, unit normal) pairs of jump lines and ``points`` are
    isolated singular points; quadrature splits its panels there.
    """
    __test__ = False           # keep pytest from collecting this class

    kind: str
    params: dict
    wf: str                    # "empty", "conormal-line" or "point-cone"
    lines: tuple = ()
    points: tuple = ()
    _fn: object = field(repr=False, default=None, compare=False)

    def __call__(self, x):
        return self._fn(np.asarray(x, float))

    def in_wf(self, z, xi, tol: float = 1e-9) -> bool:
        """Membership of (z, xi) in the recorded wave front set."""
        z = np.asarray(z, float)
        u = np.asarray(xi, float) / np.linalg.norm(xi)
        for p, n in self.lines:
            if abs(np.dot(z - p, n)) < tol and abs(abs(np.dot(u, n)) - 1.0) < tol:
                return True
        return any(np.linalg.norm(z - p) < tol for p in self.points)


def make_test_function(spec: dict) -> TestFunction:
    kind = spec.get("kind")
    if kind == "gaussian":
        c = np.asarray(spec.get("center", [0.0, 0.0]), float)
        s2 = float(spec.get("sigma", 0.5)) ** 2
        fn = lambda x: np.exp(-np.sum((x - c) ** 2, axis=-1) / s2)
        return TestFunction(kind, dict(spec), "empty", _fn=fn)
    if kind == "half-plane-jump":
        p = np.asarray(spec.get("point", [0.0, 0.0]), float)
        n = np.asarray(spec.get("normal", [1.0, 0.0]), float)
        n = n / np.linalg.norm(n)
        fn = lambda x: (np.tensordot(x - p, n, axes=([-1], [0])) > 0).astype(float)
        return TestFunction(kind, dict(spec), "conormal-line", lines=((p, n),), _fn=fn)
    if kind == "cone":
        c = np.asarray(spec.get("center", [0.0, 0.0]), float)
        a = float(spec.get("alpha", 1.0))
        fn = lambda x: np.linalg.norm(x - c, axis=-1) ** a
        return TestFunction(kind, dict(spec), "point-cone", points=(c,), _fn=fn)
    if kind == "zero":
        return TestFunction(kind, dict(spec), "empty", _fn=lambda x: np.zeros(np.shape(x)[:-1]))
    raise FunctionSpecError(f"unknown function kind {kind!r}")

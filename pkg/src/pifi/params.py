"""Parameter stores, deterministic initialization, and freeze manifests.

A ParamStore is an ordered name -> Tensor map: the unit of counting,
freezing, saving, and layer extraction. Initialization draws one
counter-based PRNG stream per (seed, tensor name), so the result does not
depend on creation order and any single tensor can be regenerated alone.
"""

from __future__ import annotations

import fnmatch
import hashlib
import warnings

import numpy as np

from .autograd import Tensor

INIT_STD = 0.02
INIT_CLIP_SIGMAS = 2.0


class ParamStore:
    def __init__(self, tensors=None):
        self._t: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name) -> Tensor:
        return self._t[name]

    def __setitem__(self, name, tensor: Tensor):
        self._t[name] = tensor

    def __contains__(self, name):
        return name in self._t

    def __len__(self):
        return len(self._t)

    def __iter__(self):
        return iter(self._t)

    def names(self):
        return list(self._t)

    def items(self):
        return self._t.items()

    def tensors(self):
        return self._t.values()

    def n_params(self) -> int:
        return sum(t.data.size for t in self._t.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._t.items()}

    def byte_digest(self) -> str:
        """Order-stable content hash over all buffers (freezing checks)."""
        h = hashlib.sha256()
        for name in sorted(self._t):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._t[name].data).tobytes())
        return h.hexdigest()

    def set_requires_grad(self, flag: bool):
        for t in self._t.values():
            t.requires_grad = flag
            if not flag:
                t.grad = None

    def __repr__(self):
        return f"ParamStore({len(self._t)} tensors, {self.n_params()} params)"


def _name_stream(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def trunc_normal(shape, rng, std=INIT_STD, clip=INIT_CLIP_SIGMAS):
    """Normal(0, std) with redraws outside +/- clip*std."""
    out = rng.normal(0.0, std, size=int(np.prod(shape))).astype(np.float32)
    bound = clip * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum())).astype(np.float32)
        bad = np.abs(out) > bound
    return out.reshape(shape)


def init_params(shapes: dict[str, tuple], seed: int, std=INIT_STD) -> ParamStore:
    """Build a store from a name -> shape map.

    Names ending in ``.bias`` start at zero, names ending in ``.gain`` at
    one, everything else at truncated normal(0, std) clipped at 2 std.
    """
    store = ParamStore()
    for name, shape in shapes.items():
        shape = tuple(shape)
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".gain"):
            data = np.ones(shape, dtype=np.float32)
        else:
            data = trunc_normal(shape, _name_stream(seed, name), std=std)
        store[name] = Tensor(data, requires_grad=True)
    return store


class FreezeManifest:
    """Ordered (glob, trainable) rules; the last matching rule wins."""

    def __init__(self, rules=None):
        self.rules: list[tuple[str, bool]] = list(rules or [])

    def add(self, glob: str, trainable: bool):
        self.rules.append((glob, trainable))
        return self

    def decide(self, name: str, default=True) -> bool:
        flag = default
        for glob, trainable in self.rules:
            if fnmatch.fnmatchcase(name, glob):
                flag = trainable
        return flag


def apply_freeze(params: dict[str, Tensor], manifest: FreezeManifest) -> dict[str, int]:
    """Set requires_grad per manifest; returns {'trainable': n, 'frozen': n}.

    A rule matching nothing is reported with a warning, not an error.
    """
    for glob, _ in manifest.rules:
        if not any(fnmatch.fnmatchcase(name, glob) for name in params):
            warnings.warn(f"freeze rule {glob!r} matched no parameters")
    counts = {"trainable": 0, "frozen": 0}
    for name, t in params.items():
        trainable = manifest.decide(name)
        t.requires_grad = trainable
        if not trainable:
            t.grad = None
        counts["trainable" if trainable else "frozen"] += t.data.size
    return counts

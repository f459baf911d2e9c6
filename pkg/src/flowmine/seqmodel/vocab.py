from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAD = 0


@dataclass(frozen=True)
class Vocab:
    """Catalog ids mapped to token indices 1..n; PAD is 0 and MASK is n + 1."""

    ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(sorted(int(i) for i in self.ids))
        if len(set(ids)) != len(ids):
            raise ValueError("vocabulary ids must be unique")
        if ids and ids[0] <= 0:
            raise ValueError("message ids must be positive")
        object.__setattr__(self, "ids", ids)
        lookup = np.zeros(max(ids, default=0) + 1, dtype=np.int64)
        for tok, i in enumerate(ids, start=1):
            lookup[i] = tok
        object.__setattr__(self, "_lookup", lookup)
        # bijection check
        assert all(self.id_of(self.token_of(i)) == i for i in ids)

    @classmethod
    def from_catalog(cls, catalog) -> "Vocab":
        return cls(tuple(catalog.ids))

    def __len__(self):
        return len(self.ids) + 2

    @property
    def mask(self) -> int:
        return len(self.ids) + 1

    def token_of(self, msg_id: int) -> int:
        if msg_id <= 0 or msg_id >= self._lookup.shape[0] or self._lookup[msg_id] == 0:
            raise KeyError(msg_id)
        return int(self._lookup[msg_id])

    def id_of(self, token: int) -> int:
        if not 1 <= token <= len(self.ids):
            raise KeyError(token)
        return self.ids[token - 1]

    def encode(self, events) -> np.ndarray:
        arr = np.asarray(events, dtype=np.int64)
        if arr.size and (arr.min() <= 0 or arr.max() >= self._lookup.shape[0]):
            raise KeyError("id outside vocabulary")
        toks = self._lookup[arr]
        if toks.size and toks.min() == 0:
            raise KeyError("id outside vocabulary")
        return toks

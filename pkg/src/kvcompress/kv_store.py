"""
Paged key/value storage for one attention group.

Keys and values are kept in insertion order together with the absolute
position of each token. Estimation summaries (elementwise key max/min per
page) are maintained over the *active* token sequence:

* plain mode: eviction physically deletes tokens, so active == stored;
* retain-all mode: every token stays in memory and the active set is a
  filtered view; summaries are rebuilt over that view so estimation traffic
  is the same as in plain mode.

Summaries are laid out dim-major, shape ``(head_dim, num_pages)``, so picking
``k1`` head dimensions reads ``k1`` contiguous rows.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidIndex, InvalidShape
from .numerics import running_minmax_update

__all__ = ["GroupLayout", "KvStore"]


@dataclass(frozen=True)
class GroupLayout:
    """Attention-group geometry. ``heads_per_group == 1`` is plain MHA."""

    num_groups: int
    heads_per_group: int
    head_dim: int

    def __post_init__(self):
        for name in ("num_groups", "heads_per_group", "head_dim"):
            if int(getattr(self, name)) < 1:
                raise InvalidShape(f"{name} must be >= 1")


class KvStore:
    def __init__(self, head_dim, page_len=1, dtype=np.float32, retain_all=False, capacity=64):
        if head_dim < 1:
            raise InvalidShape("head_dim must be >= 1")
        if page_len < 1:
            raise InvalidShape("page_len must be >= 1")
        self.head_dim = int(head_dim)
        self.page_len = int(page_len)
        self.dtype = np.dtype(dtype)
        self.retain_all = bool(retain_all)
        cap = max(int(capacity), 1)
        self._keys = np.empty((cap, self.head_dim), dtype=self.dtype)
        self._values = np.empty((cap, self.head_dim), dtype=self.dtype)
        self._positions = np.empty(cap, dtype=np.int64)
        self._active = np.empty(cap, dtype=np.int64)
        self._kmax = np.empty((self.head_dim, cap), dtype=self.dtype)
        self._kmin = np.empty((self.head_dim, cap), dtype=self.dtype)
        self._n = 0
        self._n_active = 0
        self._next_position = 0

    @classmethod
    def from_arrays(cls, keys, values, page_len=1, retain_all=False, positions=None):
        keys = np.asarray(keys)
        store = cls(keys.shape[1], page_len, dtype=keys.dtype, retain_all=retain_all,
                    capacity=keys.shape[0])
        store.extend(keys, values, positions)
        return store

    # -- sizes and views ---------------------------------------------------

    @property
    def stored_tokens(self):
        return self._n

    @property
    def active_count(self):
        return self._n_active

    @property
    def num_pages(self):
        return -(-self._n_active // self.page_len)

    @property
    def keys(self):
        return self._keys[: self._n]

    @property
    def values(self):
        return self._values[: self._n]

    @property
    def positions(self):
        """Absolute token position of every stored token."""
        return self._positions[: self._n]

    @property
    def active(self):
        """Stored-token indices visible to estimation and fetch, ascending."""
        return self._active[: self._n_active]

    @property
    def k_max(self):
        """Page maxima as ``(num_pages, head_dim)`` (a transposed view)."""
        return self._kmax[:, : self.num_pages].T

    @property
    def k_min(self):
        return self._kmin[:, : self.num_pages].T

    @property
    def summary_max(self):
        """Dim-major page maxima, ``(head_dim, num_pages)``."""
        return self._kmax[:, : self.num_pages]

    @property
    def summary_min(self):
        return self._kmin[:, : self.num_pages]

    def page_members(self, page):
        """Stored-token indices covered by ``page`` of the active sequence."""
        lo = page * self.page_len
        return self.active[lo: lo + self.page_len]

    def __len__(self):
        return self._n

    def __repr__(self):
        return (f"KvStore(d={self.head_dim}, L={self.page_len}, stored={self._n}, "
                f"active={self._n_active}, pages={self.num_pages}, retain_all={self.retain_all})")

    # -- mutation ----------------------------------------------------------

    def _reserve(self, n_tokens):
        cap = self._keys.shape[0]
        if n_tokens <= cap:
            return
        new_cap = max(n_tokens, 2 * cap)
        d = self.head_dim
        for name in ("_keys", "_values"):
            old = getattr(self, name)
            arr = np.empty((new_cap, d), dtype=self.dtype)
            arr[: self._n] = old[: self._n]
            setattr(self, name, arr)
        for name in ("_positions", "_active"):
            old = getattr(self, name)
            arr = np.empty(new_cap, dtype=np.int64)
            arr[: old.shape[0]] = old
            setattr(self, name, arr)
        for name in ("_kmax", "_kmin"):
            old = getattr(self, name)
            arr = np.empty((d, new_cap), dtype=self.dtype)
            arr[:, : old.shape[1]] = old
            setattr(self, name, arr)

    def _check_vec(self, x, what):
        x = np.asarray(x)
        if x.shape != (self.head_dim,):
            raise InvalidShape(f"{what} must have shape ({self.head_dim},), got {x.shape}")
        return x

    def append(self, k, v, position=None):
        """Store one token and fold its key into the last page summary."""
        k = self._check_vec(k, "key")
        v = self._check_vec(v, "value")
        self._reserve(self._n + 1)
        i = self._n
        self._keys[i] = k
        self._values[i] = v
        pos = self._next_position if position is None else int(position)
        self._positions[i] = pos
        self._next_position = max(self._next_position, pos + 1)
        self._n += 1

        a = self._n_active
        self._active[a] = i
        self._n_active += 1
        page, offset = divmod(a, self.page_len)
        key = self._keys[i]
        if offset == 0:
            self._kmin[:, page] = key
            self._kmax[:, page] = key
        else:
            self._kmin[:, page], self._kmax[:, page] = running_minmax_update(
                self._kmin[:, page], self._kmax[:, page], key)

    def extend(self, keys, values, positions=None):
        """Bulk append; summaries end up identical to repeated :meth:`append`."""
        keys = np.asarray(keys)
        values = np.asarray(values)
        if keys.ndim != 2 or keys.shape[1] != self.head_dim or values.shape != keys.shape:
            raise InvalidShape(
                f"keys/values must both be (n, {self.head_dim}), got {keys.shape} and {values.shape}")
        m = keys.shape[0]
        if m == 0:
            return
        if positions is None:
            positions = np.arange(self._next_position, self._next_position + m, dtype=np.int64)
        else:
            positions = np.asarray(positions, dtype=np.int64)
            if positions.shape != (m,):
                raise InvalidShape("positions must have one entry per token")
        self._reserve(self._n + m)
        lo = self._n
        self._keys[lo: lo + m] = keys
        self._values[lo: lo + m] = values
        self._positions[lo: lo + m] = positions
        self._next_position = max(self._next_position, int(positions.max()) + 1)
        self._n += m
        first_page = self._n_active // self.page_len
        self._active[self._n_active: self._n_active + m] = np.arange(lo, lo + m)
        self._n_active += m
        self._rebuild_summaries(first_page)

    def _rebuild_summaries(self, first_page=0):
        """Recompute page summaries from ``first_page`` to the end."""
        L = self.page_len
        start = first_page * L
        act = self.active[start:]
        if act.size == 0:
            return
        ks = self._keys[act]
        n_full = act.size // L
        p = first_page
        if n_full:
            blocks = ks[: n_full * L].reshape(n_full, L, self.head_dim)
            self._kmax[:, p: p + n_full] = blocks.max(axis=1).T
            self._kmin[:, p: p + n_full] = blocks.min(axis=1).T
        rest = ks[n_full * L:]
        if rest.shape[0]:
            self._kmax[:, p + n_full] = rest.max(axis=0)
            self._kmin[:, p + n_full] = rest.min(axis=0)

    def apply_retention(self, keep, mt_mode=None):
        """Restrict the cache to the stored-token indices in ``keep``.

        With ``mt_mode`` false the other tokens are deleted and the survivors
        are compacted in their original order. With ``mt_mode`` true nothing
        is deleted; ``keep`` becomes the active set. Either way the page
        summaries are rebuilt over the new active sequence.
        """
        if mt_mode is None:
            mt_mode = self.retain_all
        keep = np.asarray(keep, dtype=np.int64).reshape(-1)
        if keep.size:
            if keep[0] < 0 or keep[-1] >= self._n:
                raise InvalidIndex(f"retention index out of range [0, {self._n})")
            if np.any(np.diff(keep) <= 0):
                raise InvalidIndex("retention indices must be strictly increasing")
        if mt_mode:
            self._active[: keep.size] = keep
            self._n_active = keep.size
        else:
            m = keep.size
            self._keys[:m] = self._keys[keep]
            self._values[:m] = self._values[keep]
            self._positions[:m] = self._positions[keep]
            self._n = m
            self._active[:m] = np.arange(m)
            self._n_active = m
        self._rebuild_summaries(0)

    def set_page_len(self, page_len):
        """Re-page the active sequence with a new page length."""
        if page_len < 1:
            raise InvalidShape("page_len must be >= 1")
        if page_len != self.page_len:
            self.page_len = int(page_len)
            self._rebuild_summaries(0)

    def reset_active(self):
        """Make every stored token active again (retain-all turn boundary)."""
        self._active[: self._n] = np.arange(self._n)
        self._n_active = self._n
        self._rebuild_summaries(0)

    # -- reads -------------------------------------------------------------

    def gather(self, idx):
        """Copy key/value rows for stored-token indices ``idx`` (must be active)."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            empty = np.empty((0, self.head_dim), dtype=self.dtype)
            return empty, empty.copy()
        if idx.min() < 0 or idx.max() >= self._n:
            raise InvalidIndex(f"gather index out of range [0, {self._n})")
        if self._n_active != self._n and not np.isin(idx, self.active).all():
            raise InvalidIndex("gather touches an inactive token")
        return self._keys[idx], self._values[idx]

    def summary_traffic_elements(self, k1):
        """Summary elements read by one estimation pass over the active pages."""
        return self.num_pages * int(k1)

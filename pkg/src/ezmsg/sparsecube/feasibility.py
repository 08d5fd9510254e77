import math
import typing

from dataclasses import dataclass

import ezmsg.core as ez
import numpy as np
import numpy.typing as npt

# Packed partial sum of a set of columns
PartialSum = typing.Tuple[int, ...]


@dataclass(frozen = True, eq = False)
class FeasibilityQuery:
    """ Is there y in {0..upper}^k with A_reduced y = target and ||y||_0 <= budget?
    Without `upper` every column is 0/1.
    """
    A_reduced: npt.NDArray
    target: typing.Tuple[int, ...]
    budget: int
    upper: typing.Optional[typing.Tuple[int, ...]] = None


class DPState(typing.NamedTuple):
    column: int  # first column of the suffix this state summarizes
    count: int  # fewest nonzeros reaching `partial` from the suffix
    partial: PartialSum


class SuffixTable:
    """ Layered dynamic program over the columns of A_reduced.

    layers[j] maps each reachable sum of columns j..k-1 to the fewest
    nonzeros that produce it.  Sums that cannot be completed into [lo, hi]
    by any choice on columns 0..j-1 are dropped while building, as are
    states above the budget.  Every integral target in the box that admits
    a witness then shows up in layers[0].
    """

    def __init__(
        self,
        A_reduced: npt.ArrayLike,
        budget: int,
        lo: typing.Sequence[int],
        hi: typing.Sequence[int],
        upper: typing.Optional[typing.Sequence[int]] = None
    ) -> None:
        A = np.asarray(A_reduced, dtype = np.int64)
        if A.ndim != 2:
            raise ValueError(f'A_reduced must be 2-D, got {A.ndim} dimensions')
        self.m, self.k = A.shape
        self.budget = int(budget)
        self.lo = tuple(int(v) for v in lo)
        self.hi = tuple(int(v) for v in hi)
        self.upper = (1,) * self.k if upper is None else tuple(int(v) for v in upper)
        self.columns = [tuple(int(v) for v in A[:, j]) for j in range(self.k)]

        # reachable range of the prefix 0..j-1, per coordinate
        contrib = A * np.asarray(self.upper, dtype = np.int64)[None, :]
        prefix_neg = np.concatenate([np.zeros((self.m, 1), dtype = np.int64), np.cumsum(np.minimum(contrib, 0), axis = 1)], axis = 1)
        prefix_pos = np.concatenate([np.zeros((self.m, 1), dtype = np.int64), np.cumsum(np.maximum(contrib, 0), axis = 1)], axis = 1)
        self._window = [
            (
                tuple(int(v) for v in np.asarray(self.lo) - prefix_pos[:, j]),
                tuple(int(v) for v in np.asarray(self.hi) - prefix_neg[:, j]),
            ) for j in range(self.k + 1)
        ]

        self.layers: typing.List[typing.Dict[PartialSum, int]] = [dict() for _ in range(self.k + 1)]
        if self.budget >= 0:
            self._build()

    def _inside(self, s: PartialSum, column: int) -> bool:
        low, high = self._window[column]
        return all(a <= v <= b for a, v, b in zip(low, s, high))

    def _build(self) -> None:
        self.layers[self.k] = {(0,) * self.m: 0}
        for j in reversed(range(self.k)):
            col = self.columns[j]
            nxt = self.layers[j + 1]
            layer: typing.Dict[PartialSum, int] = {}
            for s, count in nxt.items():
                for v in range(self.upper[j] + 1):
                    c = count + (1 if v > 0 else 0)
                    if c > self.budget:
                        break
                    t = s if v == 0 else tuple(a + v * x for a, x in zip(s, col))
                    if not self._inside(t, j):
                        continue
                    if c < layer.get(t, c + 1):
                        layer[t] = c
            self.layers[j] = layer
        ez.logger.debug(f'suffix table: {self.k} columns, {self.n_states} states')

    @property
    def n_states(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def states(self) -> typing.Iterator[DPState]:
        for j, layer in enumerate(self.layers):
            for s, count in layer.items():
                yield DPState(j, count, s)

    def in_box(self, target: typing.Sequence[int]) -> bool:
        return all(a <= int(v) <= b for a, v, b in zip(self.lo, target, self.hi))

    def targets(self) -> typing.List[PartialSum]:
        """ Every target in [lo, hi] with a witness, in lexicographic order """
        return sorted(s for s in self.layers[0] if self.in_box(s))

    def witness(self, target: typing.Sequence[int]) -> typing.Optional[npt.NDArray]:
        """ Lexicographically smallest y reaching target within the budget, or None """
        target = tuple(int(v) for v in target)
        if len(target) != self.m:
            raise ValueError(f'target must have length m={self.m}, got {len(target)}')
        if not self.in_box(target) or target not in self.layers[0]:
            return None

        y = np.zeros(self.k, dtype = np.int64)
        remaining = target
        used = 0
        for j in range(self.k):
            col = self.columns[j]
            nxt = self.layers[j + 1]
            for v in range(self.upper[j] + 1):
                rest = tuple(r - v * x for r, x in zip(remaining, col))
                c = used + (1 if v > 0 else 0)
                if rest in nxt and c + nxt[rest] <= self.budget:
                    y[j] = v
                    remaining = rest
                    used = c
                    break
            else:
                raise AssertionError('suffix table lost a reachable state')
        return y


def feasible_targets(
    A_reduced: npt.ArrayLike,
    budget: int,
    lo: typing.Sequence[int],
    hi: typing.Sequence[int],
    upper: typing.Optional[typing.Sequence[int]] = None
) -> SuffixTable:
    return SuffixTable(A_reduced, budget, lo, hi, upper)


def _table(query: FeasibilityQuery) -> SuffixTable:
    return SuffixTable(query.A_reduced, query.budget, query.target, query.target, query.upper)


def solve_feasibility(query: FeasibilityQuery) -> typing.Optional[npt.NDArray]:
    if query.budget < 0:
        return None
    y = _table(query).witness(query.target)
    if y is not None:
        A = np.asarray(query.A_reduced, dtype = np.int64)
        assert tuple(int(v) for v in A @ y) == tuple(int(v) for v in query.target), 'witness does not verify'
    return y


def count_states(query: FeasibilityQuery) -> int:
    """ Size of the memoized state space for the query (0 for a negative budget) """
    if query.budget < 0:
        return 0
    return _table(query).n_states


class SupportGuess(typing.NamedTuple):
    F: typing.Tuple[int, ...]
    targets: npt.NDArray  # N x m, lexicographically sorted
    counts: npt.NDArray  # fewest nonzeros outside F reaching each target


class SupportWalk:
    """ Feasible targets for every fractional support guess F at once.

    Guesses are visited depth first in lexicographic order of F.  The
    columns in front of the last index of F are summarized by a prefix
    table carried down the walk (one DP step per skipped-over column); the
    columns behind it come straight from a single SuffixTable over all of
    A.  Both tables are pruned against windows computed over every column,
    which stay valid once F is removed.  Joining the two gives, for each F,
    the targets in [lo, hi] reachable with at most sigma - |F| nonzeros
    outside F.
    """

    def __init__(
        self,
        A: npt.ArrayLike,
        sigma: int,
        lo: typing.Sequence[int],
        hi: typing.Sequence[int],
        upper: typing.Optional[typing.Sequence[int]] = None,
        max_size: typing.Optional[int] = None
    ) -> None:
        self.suffix = SuffixTable(A, sigma, lo, hi, upper)
        self.m, self.n = self.suffix.m, self.suffix.k
        self.sigma = int(sigma)
        self.max_size = min(self.sigma, self.n) if max_size is None else int(max_size)
        self._lo = np.asarray(self.suffix.lo, dtype = np.int64)
        self._hi = np.asarray(self.suffix.hi, dtype = np.int64)

        A = np.asarray(A, dtype = np.int64)
        contrib = A * np.asarray(self.suffix.upper, dtype = np.int64)[None, :]
        tail_neg = np.cumsum(np.minimum(contrib, 0)[:, ::-1], axis = 1)[:, ::-1]
        tail_pos = np.cumsum(np.maximum(contrib, 0)[:, ::-1], axis = 1)[:, ::-1]
        zero = np.zeros((self.m, 1), dtype = np.int64)
        tail_neg = np.concatenate([tail_neg, zero], axis = 1)
        tail_pos = np.concatenate([tail_pos, zero], axis = 1)
        # a prefix sum over columns < j must still reach [lo, hi] using columns >= j
        self._window = [
            (
                tuple(int(v) for v in self._lo - tail_pos[:, j]),
                tuple(int(v) for v in self._hi - tail_neg[:, j]),
            ) for j in range(self.n + 1)
        ]
        self._suffix_arrays: typing.Dict[int, typing.Tuple[npt.NDArray, npt.NDArray]] = {}
        self.prefix_states = 0

    @property
    def n_states(self) -> int:
        return self.suffix.n_states + self.prefix_states

    def _step(self, table: typing.Dict[PartialSum, int], j: int, budget: int) -> typing.Dict[PartialSum, int]:
        """ Add column j to a prefix table """
        col = self.suffix.columns[j]
        low, high = self._window[j + 1]
        out: typing.Dict[PartialSum, int] = {}
        for s, count in table.items():
            for v in range(self.suffix.upper[j] + 1):
                c = count + (1 if v > 0 else 0)
                if c > budget:
                    break
                t = s if v == 0 else tuple(a + v * x for a, x in zip(s, col))
                if not all(a <= w <= b for a, w, b in zip(low, t, high)):
                    continue
                if c < out.get(t, c + 1):
                    out[t] = c
        self.prefix_states += len(out)
        return out

    def _suffix_at(self, j: int) -> typing.Tuple[npt.NDArray, npt.NDArray]:
        if j not in self._suffix_arrays:
            layer = self.suffix.layers[j]
            S = np.array(list(layer.keys()), dtype = np.int64).reshape(-1, self.m)
            cS = np.array(list(layer.values()), dtype = np.int64)
            self._suffix_arrays[j] = (S, cS)
        return self._suffix_arrays[j]

    def _join(self, table: typing.Dict[PartialSum, int], j: int, budget: int) -> typing.Tuple[npt.NDArray, npt.NDArray]:
        """ Targets in the box from a prefix (columns < j minus F) plus a suffix (columns > j-1) """
        S, cS = self._suffix_at(j)
        empty = (np.zeros((0, self.m), dtype = np.int64), np.zeros(0, dtype = np.int64))
        if not table or S.shape[0] == 0 or budget < 0:
            return empty

        P = np.array(list(table.keys()), dtype = np.int64).reshape(-1, self.m)
        cP = np.array(list(table.values()), dtype = np.int64)

        sums, counts = [], []
        block = max(1, (1 << 20) // max(1, S.shape[0] * self.m))
        for start in range(0, P.shape[0], block):
            T = P[start:start + block, None, :] + S[None, :, :]
            C = cP[start:start + block, None] + cS[None, :]
            mask = (C <= budget) & np.all((T >= self._lo) & (T <= self._hi), axis = -1)
            sums.append(T[mask])
            counts.append(C[mask])
        T = np.concatenate(sums)
        C = np.concatenate(counts)
        if T.shape[0] == 0:
            return empty

        # lexicographic by target, fewest nonzeros first within a target
        order = np.lexsort((C,) + tuple(T[:, i] for i in reversed(range(self.m))))
        T, C = T[order], C[order]
        first = np.ones(T.shape[0], dtype = bool)
        first[1:] = np.any(T[1:] != T[:-1], axis = 1)
        return T[first], C[first]

    def guesses(
        self,
        start: int = 0,
        stop: typing.Optional[int] = None,
        sizes: typing.Optional[typing.Collection[int]] = None,
        limit: typing.Optional[int] = None
    ) -> typing.Iterator[SupportGuess]:
        """ Walk the guesses whose smallest index lies in [start, stop);
        the empty guess belongs to the walk that starts at 0.
        `limit` stops after that many yielded guesses.
        """
        stop = self.n if stop is None else min(stop, self.n)
        sizes = set(range(self.max_size + 1)) if sizes is None else set(sizes)
        depth_max = max(sizes, default = -1)
        remaining = math.inf if limit is None else int(limit)

        def walk(F: typing.Tuple[int, ...], table: typing.Dict[PartialSum, int], j: int, last: int) -> typing.Iterator[SupportGuess]:
            nonlocal remaining
            if len(F) in sizes and (F or start == 0) and remaining > 0:
                remaining -= 1
                yield SupportGuess(F, *self._join(table, j, self.sigma - len(F)))
            if len(F) >= depth_max:
                return
            # children hold at least one more fractional index
            budget = self.sigma - len(F) - 1
            running = table
            for f in range(j, last):
                if remaining <= 0:
                    return
                yield from walk(F + (f,), running, f + 1, self.n)
                if f + 1 < last:
                    running = self._step(running, f, budget)

        prefix: typing.Dict[PartialSum, int] = {(0,) * self.m: 0}
        for j in range(start):
            prefix = self._step(prefix, j, self.sigma - 1)
        yield from walk((), prefix, start, stop)

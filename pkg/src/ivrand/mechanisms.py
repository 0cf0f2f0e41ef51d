"""Assignment mechanisms: complete, block, and Bernoulli randomization.

All samplers are stateless functions of (spec, stream, draw index).  The
batch entry point ``draw_batch`` is the canonical definition of draw m;
the single-draw functions are thin wrappers over it, so a draw obtained
one at a time is identical to the same index inside a batch.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import AssignmentVector
from .errors import CapExceededError, MechanismError, RedrawLimitError
from .rng import DrawStream, bernoulli_thresholds

DEFAULT_ENUMERATION_CAP = 1_000_000
DEFAULT_MAX_REDRAWS = 1_000


@dataclass(frozen=True)
class MechanismSpec:
    """Specification of an assignment distribution over binary N-vectors."""

    kind: str
    n_treated: int | None = None
    block_labels: tuple | None = None
    per_block_treated: dict | None = None
    propensities: np.ndarray | None = None
    max_redraws: int = DEFAULT_MAX_REDRAWS

    @staticmethod
    def complete(n_treated: int) -> "MechanismSpec":
        return MechanismSpec(kind="complete", n_treated=int(n_treated))

    @staticmethod
    def block(block_labels, per_block_treated: dict | None = None) -> "MechanismSpec":
        return MechanismSpec(
            kind="block",
            block_labels=tuple(block_labels),
            per_block_treated=dict(per_block_treated) if per_block_treated else None,
        )

    @staticmethod
    def bernoulli(propensities, max_redraws: int = DEFAULT_MAX_REDRAWS) -> "MechanismSpec":
        p = np.asarray(propensities, dtype=np.float64)
        return MechanismSpec(kind="bernoulli", propensities=p, max_redraws=max_redraws)

    def resolved(self, target_vector: np.ndarray) -> "MechanismSpec":
        """Fill unspecified counts from the observed target vector.

        Complete randomization conditions on the observed number
        treated; block randomization conditions on the observed
        per-block treated counts.
        """
        z = np.asarray(target_vector)
        if self.kind == "complete" and self.n_treated is None:
            return MechanismSpec(kind="complete", n_treated=int(z.sum()))
        if self.kind == "block" and self.per_block_treated is None:
            if self.block_labels is None or len(self.block_labels) != len(z):
                raise MechanismError("block mechanism needs one label per unit")
            counts: dict = {}
            for label, zi in zip(self.block_labels, z):
                counts[label] = counts.get(label, 0) + int(zi)
            return MechanismSpec(
                kind="block",
                block_labels=self.block_labels,
                per_block_treated=counts,
            )
        return self

    def validate(self, n: int) -> None:
        if self.kind == "complete":
            if self.n_treated is None or not 0 < self.n_treated < n:
                raise MechanismError(
                    f"complete randomization needs 0 < n_treated < {n}, "
                    f"got {self.n_treated}"
                )
        elif self.kind == "block":
            if self.block_labels is None or len(self.block_labels) != n:
                raise MechanismError("block mechanism needs one label per unit")
            if self.per_block_treated is None:
                raise MechanismError("block mechanism has unresolved treated counts")
            sizes: dict = {}
            for label in self.block_labels:
                sizes[label] = sizes.get(label, 0) + 1
            if set(self.per_block_treated) != set(sizes):
                raise MechanismError("per-block treated counts do not match block labels")
            for label, size in sizes.items():
                k = self.per_block_treated[label]
                if not 0 < k < size:
                    raise MechanismError(
                        f"block {label!r}: treated count {k} must be strictly "
                        f"inside (0, {size})"
                    )
        elif self.kind == "bernoulli":
            p = self.propensities
            if p is None or len(p) != n:
                raise MechanismError("bernoulli mechanism needs one propensity per unit")
            if not np.all((p > 0.0) & (p < 1.0)):
                raise MechanismError("propensities must lie strictly inside (0, 1)")
        else:
            raise MechanismError(f"unknown mechanism kind {self.kind!r}")

    def words_per_draw(self, n: int) -> int:
        if self.kind == "bernoulli":
            return n * (self.max_redraws + 1)
        return n

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "complete":
            out["n_treated"] = self.n_treated
        elif self.kind == "block":
            if self.per_block_treated is None:
                out["per_block_treated"] = "observed per-block counts"
            else:
                out["per_block_treated"] = {str(k): v for k, v in sorted(
                    self.per_block_treated.items(), key=lambda kv: str(kv[0])
                )}
        elif self.kind == "bernoulli":
            p = self.propensities
            out["propensity_range"] = [float(p.min()), float(p.max())]
        return out


@dataclass
class DrawTally:
    """Bookkeeping for rejected degenerate Bernoulli draws."""

    redraws: int = 0


def draw_batch(
    spec: MechanismSpec,
    n: int,
    stream: DrawStream,
    indices: np.ndarray,
    tally: DrawTally | None = None,
) -> np.ndarray:
    """Generate the assignments for the given draw indices.

    Returns a (len(indices), n) 0/1 int8 matrix.  Row contents depend
    only on (stream, index), so any chunking or ordering of indices
    yields the same draws.
    """
    spec.validate(n)
    indices = np.asarray(indices, dtype=np.uint64)
    if spec.kind == "complete":
        words = stream.word_block(indices, n)
        picked = np.argpartition(words, spec.n_treated - 1, axis=1)[:, : spec.n_treated]
        out = np.zeros((len(indices), n), dtype=np.int8)
        np.put_along_axis(out, picked, np.int8(1), axis=1)
        return out
    if spec.kind == "block":
        words = stream.word_block(indices, n)
        out = np.zeros((len(indices), n), dtype=np.int8)
        labels = np.asarray(spec.block_labels, dtype=object)
        for label in sorted(set(spec.block_labels), key=str):
            cols = np.flatnonzero(labels == label)
            k = spec.per_block_treated[label]
            picked = np.argpartition(words[:, cols], k - 1, axis=1)[:, :k]
            block_out = np.zeros((len(indices), len(cols)), dtype=np.int8)
            np.put_along_axis(block_out, picked, np.int8(1), axis=1)
            out[:, cols] = block_out
        return out
    # bernoulli with rejection of degenerate (all-0 / all-1) draws
    thresholds = bernoulli_thresholds(spec.propensities)[None, :]
    out = np.zeros((len(indices), n), dtype=np.int8)
    pending = np.arange(len(indices))
    for attempt in range(spec.max_redraws + 1):
        sub = indices[pending]
        base = sub * np.uint64(spec.words_per_draw(n)) + np.uint64(attempt * n)
        counters = base[:, None] + np.arange(n, dtype=np.uint64)[None, :]
        words = stream.word_block_raw(counters, reuse=True)
        draws = (words < thresholds).astype(np.int8)
        sums = draws.sum(axis=1)
        good = (sums > 0) & (sums < n)
        out[pending[good]] = draws[good]
        if tally is not None:
            tally.redraws += int((~good).sum())
        pending = pending[~good]
        if len(pending) == 0:
            return out
    raise RedrawLimitError(
        f"exceeded max_redraws={spec.max_redraws} rejecting degenerate "
        "Bernoulli draws; propensities are too extreme"
    )


def draw_complete(n: int, n_treated: int, stream: DrawStream, index: int = 0) -> AssignmentVector:
    """One uniform draw over all assignments with exactly n_treated ones."""
    row = draw_batch(MechanismSpec.complete(n_treated), n, stream, np.array([index]))
    return AssignmentVector(values=row[0])


def draw_block(
    block_labels,
    per_block_treated: dict,
    stream: DrawStream,
    index: int = 0,
) -> AssignmentVector:
    """Independent complete randomization within each block."""
    spec = MechanismSpec.block(block_labels, per_block_treated)
    row = draw_batch(spec, len(spec.block_labels), stream, np.array([index]))
    return AssignmentVector(values=row[0])


def draw_bernoulli(
    propensities,
    stream: DrawStream,
    index: int = 0,
    max_redraws: int = DEFAULT_MAX_REDRAWS,
    tally: DrawTally | None = None,
) -> AssignmentVector:
    """Independent biased coin flips, redrawn while degenerate.

    Accepted draws always contain at least one unit in each group; the
    number of rejected attempts is added to ``tally``.
    """
    spec = MechanismSpec.bernoulli(propensities, max_redraws=max_redraws)
    row = draw_batch(spec, len(spec.propensities), stream, np.array([index]), tally=tally)
    return AssignmentVector(values=row[0])


def n_assignments(n: int, n_treated: int) -> int:
    return math.comb(n, n_treated)


def enumerate_complete(n: int, n_treated: int, cap: int = DEFAULT_ENUMERATION_CAP):
    """All assignments with exactly n_treated ones, in combination order."""
    total = n_assignments(n, n_treated)
    if total > cap:
        raise CapExceededError(
            f"C({n}, {n_treated}) = {total} exceeds the enumeration cap {cap}"
        )
    for combo in itertools.combinations(range(n), n_treated):
        values = np.zeros(n, dtype=np.int8)
        values[list(combo)] = 1
        yield AssignmentVector(values=values, n_treated=n_treated)


def enumerate_matrix(n: int, n_treated: int, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Dense 0/1 matrix of the full enumeration (rows in combination order)."""
    total = n_assignments(n, n_treated)
    if total > cap:
        raise CapExceededError(
            f"C({n}, {n_treated}) = {total} exceeds the enumeration cap {cap}"
        )
    out = np.zeros((total, n), dtype=np.int8)
    for i, combo in enumerate(itertools.combinations(range(n), n_treated)):
        out[i, list(combo)] = 1
    return out

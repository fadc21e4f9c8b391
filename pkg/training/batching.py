"""
Balanced batch composition.

Stage 1 batches hold batch_size target-type normals; stage 2 batches hold
batch_size/2 normals and batch_size/2 pseudo-anomalies (normals of the other
machine types, drawn with replacement). Normals are split evenly over the
machine IDs. When the split leaves a remainder, the extra samples go
round-robin to IDs starting at a rotating offset so that counts even out over
an epoch.

Within an ID, normals are dealt from a shuffled pass over its pool: no normal
repeats before every other normal of that ID has been drawn, and a fresh
permutation is dealt once the pass runs out.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from signal_frontend.audio import MachineCondition
from signal_frontend.manifest import DatasetManifest, ManifestEntry, Split
from utils.errors import BatchCompositionError

logger = logging.getLogger(__name__)

# per-ID positions into the pool still to be dealt in the current pass
PendingDraws = Dict[int, List[int]]


@dataclass(frozen=True)
class TrainingPools:
    """Index pools a batch is drawn from.

    normals_by_id maps each target machine ID to indices into the target
    normal list; pseudo indices run over [0, num_pseudo).
    """

    normals_by_id: Dict[int, Tuple[int, ...]]
    num_pseudo: int = 0

    @property
    def machine_ids(self) -> List[int]:
        return sorted(self.normals_by_id)

    @property
    def num_normals(self) -> int:
        return sum(len(v) for v in self.normals_by_id.values())

    @classmethod
    def from_ids(cls, normal_ids: Sequence[int], num_pseudo: int = 0) -> "TrainingPools":
        """Pools for a normal list whose i-th element has machine ID normal_ids[i]."""
        grouped: Dict[int, List[int]] = {}
        for index, machine_id in enumerate(normal_ids):
            grouped.setdefault(int(machine_id), []).append(index)
        return cls({k: tuple(v) for k, v in grouped.items()}, num_pseudo)


@dataclass(frozen=True)
class BatchPlan:
    normal_indices: Tuple[int, ...]
    normal_ids: Tuple[int, ...]
    pseudo_indices: Tuple[int, ...] = ()
    per_id_counts: Dict[int, int] = field(default_factory=dict)
    next_offset: int = 0

    def __len__(self) -> int:
        return len(self.normal_indices) + len(self.pseudo_indices)


def training_entries(
    manifest: DatasetManifest, target_type: str
) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """Target-type training normals and the pseudo-anomaly pool (other types' training normals)."""
    normals = manifest.select(machine_type=target_type, split=Split.TRAIN, condition=MachineCondition.NORMAL)
    pseudo = manifest.select(exclude_type=target_type, split=Split.TRAIN, condition=MachineCondition.NORMAL)
    return normals, pseudo


def steps_per_epoch(pools: TrainingPools, stage: int, batch_size: int) -> int:
    """Stage 1 covers the normal pool once; stage 2 covers it with half-size normal shares."""
    per_batch = batch_size if stage == 1 else batch_size // 2
    return max(math.ceil(pools.num_normals / per_batch), 1)


def _deal(pending: List[int], pool_size: int, count: int, rng: np.random.Generator) -> List[int]:
    picks: List[int] = []
    while len(picks) < count:
        if not pending:
            pending.extend(int(p) for p in rng.permutation(pool_size))
        take = min(count - len(picks), len(pending))
        picks.extend(pending[:take])
        del pending[:take]
    return picks


def compose_batch(
    pools: TrainingPools,
    stage: int,
    rng: np.random.Generator,
    batch_size: int = 28,
    offset: int = 0,
    pending: Optional[PendingDraws] = None,
) -> BatchPlan:
    """
    Draw one balanced batch.

    pending carries each ID's unfinished shuffled pass between calls and is
    updated in place; without it every call starts fresh passes.

    Raises:
        BatchCompositionError: unknown stage, odd stage-2 batch size, too
                               small a batch for the IDs, empty ID or pseudo pool
    """
    if stage not in (1, 2):
        raise BatchCompositionError(f"Stage must be 1 or 2, got {stage}")
    ids = pools.machine_ids
    if not ids:
        raise BatchCompositionError("No target-type normals to build a batch from")
    empty = [i for i in ids if not pools.normals_by_id[i]]
    if empty:
        raise BatchCompositionError(f"Machine IDs without training normals: {empty}")

    if stage == 2:
        if batch_size % 2:
            raise BatchCompositionError(f"Stage-2 batch size must be even, got {batch_size}")
        if batch_size < 2 * len(ids):
            raise BatchCompositionError(
                f"Stage-2 batch size {batch_size} is below twice the number of IDs ({len(ids)})"
            )
        if pools.num_pseudo == 0:
            raise BatchCompositionError("Pseudo-anomaly pool is empty; stage 2 needs other machine types")
        n_normal = batch_size // 2
    else:
        if batch_size < 1:
            raise BatchCompositionError(f"Batch size must be positive, got {batch_size}")
        n_normal = batch_size

    if pending is None:
        pending = {}
    k = len(ids)
    base, remainder = divmod(n_normal, k)
    offset %= k
    extra = {ids[(offset + j) % k] for j in range(remainder)}

    normal_indices: List[int] = []
    normal_ids: List[int] = []
    counts: Dict[int, int] = {}
    for machine_id in ids:
        count = base + (1 if machine_id in extra else 0)
        counts[machine_id] = count
        if count == 0:
            continue
        pool = pools.normals_by_id[machine_id]
        picks = _deal(pending.setdefault(machine_id, []), len(pool), count, rng)
        normal_indices.extend(pool[p] for p in picks)
        normal_ids.extend([machine_id] * count)

    pseudo_indices: Tuple[int, ...] = ()
    if stage == 2:
        pseudo_indices = tuple(int(p) for p in rng.integers(0, pools.num_pseudo, size=batch_size - n_normal))

    return BatchPlan(
        normal_indices=tuple(normal_indices),
        normal_ids=tuple(normal_ids),
        pseudo_indices=pseudo_indices,
        per_id_counts=counts,
        next_offset=(offset + remainder) % k,
    )


class BatchComposer:
    """
    Stateful wrapper carrying the rotating remainder offset and the per-ID
    shuffled passes between batches.
    """

    def __init__(self, pools: TrainingPools, batch_size: int = 28, offset: int = 0):
        self.pools = pools
        self.batch_size = batch_size
        self.offset = offset
        self.pending: PendingDraws = {}

    def start_epoch(self) -> None:
        """Drop unfinished passes so the epoch deals fresh permutations."""
        self.pending = {}

    def next(self, stage: int, rng: np.random.Generator) -> BatchPlan:
        plan = compose_batch(self.pools, stage, rng, self.batch_size, self.offset, self.pending)
        self.offset = plan.next_offset
        return plan

    def state(self) -> Dict[str, object]:
        return {"offset": self.offset, "pending": {k: list(v) for k, v in self.pending.items()}}

    def load_state(self, state: Optional[Dict[str, object]]) -> None:
        state = state or {}
        self.offset = int(state.get("offset", 0))
        self.pending = {int(k): [int(i) for i in v] for k, v in dict(state.get("pending", {})).items()}

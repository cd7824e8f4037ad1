"""Counter-keyed random streams.

Every random draw in the package is addressed by a :class:`SeedKey`. The key
is hashed through :class:`numpy.random.SeedSequence` into a Philox key, so a
stream depends only on its address and never on the order in which other
streams were consumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1

# draw-site tags
OP_CORRUPT = 1
OP_PLAN = 2
OP_SHUFFLE = 3
OP_SYNTH = 4
OP_LABELED = 5
OP_DATASET = 6
OP_TRAIN = 7


@dataclass(frozen=True)
class SeedKey:
    experiment_seed: int
    epoch: int = 0
    sample_id: int = 0
    op_tag: int = 0

    def __post_init__(self):
        for name in ("epoch", "sample_id", "op_tag"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def words(self) -> list[int]:
        return [self.experiment_seed & _U64, self.epoch, self.sample_id, self.op_tag]

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.words())
        key = ss.generate_state(2, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def replace(self, **changes) -> "SeedKey":
        fields = dict(
            experiment_seed=self.experiment_seed,
            epoch=self.epoch,
            sample_id=self.sample_id,
            op_tag=self.op_tag,
        )
        fields.update(changes)
        return SeedKey(**fields)


def derive_seed(*words: int) -> int:
    """Collapse a tuple of integers into one 63-bit seed."""
    ss = np.random.SeedSequence([w & _U64 for w in words])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

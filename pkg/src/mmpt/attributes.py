"""Per-edge periodic attribute labels: 27-way direction, unit-cell membership, distance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mmpt.crystal import Crystal
from mmpt.graph import MultiGraph

NUM_DIRECTIONS = 27
CENTER_CLASS = 13
INTERNAL, EXTERNAL = 0, 1


def direction_class(offset) -> int:
    s = np.sign(np.asarray(offset, dtype=np.int64)) + 1
    return int(s[0] * 9 + s[1] * 3 + s[2])


def direction_signs(cls: int) -> tuple[int, int, int]:
    """Inverse of :func:`direction_class` on sign triples."""
    if not 0 <= cls < NUM_DIRECTIONS:
        raise ValueError(f"direction class {cls} out of range")
    return cls // 9 - 1, (cls // 3) % 3 - 1, cls % 3 - 1


def unit_cell_label(offset) -> int:
    return INTERNAL if not np.any(np.asarray(offset)) else EXTERNAL


@dataclass(frozen=True, eq=False)
class AttributeLabels:
    direction: np.ndarray  # (E,) int in [0, 26]
    unit_cell: np.ndarray  # (E,) int, 0 internal / 1 external
    distance: np.ndarray   # (E,) float

    def __len__(self) -> int:
        return len(self.direction)

    def to_csv(self, graph: MultiGraph) -> str:
        lines = ["src,dst,k1,k2,k3,direction_class,unit_cell,distance"]
        for e in range(graph.num_edges):
            k = graph.offsets[e]
            lines.append(
                f"{graph.src[e]},{graph.dst[e]},{k[0]},{k[1]},{k[2]},"
                f"{self.direction[e]},{self.unit_cell[e]},{self.distance[e]:.9f}"
            )
        return "\n".join(lines) + "\n"


def label_edges(crystal: Crystal, graph: MultiGraph) -> AttributeLabels:
    signs = np.sign(graph.offsets) + 1
    direction = (signs[:, 0] * 9 + signs[:, 1] * 3 + signs[:, 2]).astype(np.int64)
    unit_cell = np.any(graph.offsets != 0, axis=1).astype(np.int64)
    return AttributeLabels(direction, unit_cell, graph.distance.copy())

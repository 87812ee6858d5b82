"""Run results and their CSV serialization.

One wide CSV table holds three record types: per-(seed, node) rows with
download outcomes, per-seed world totals (transmissions by category,
collisions, forwarding results), and one aggregate row carrying the
90th percentile across seeds. The column set is versioned; tests pin
the header.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

SCHEMA_VERSION = 1

TX_CATEGORIES = [
    "discovery_interest", "discovery_data",
    "bitmap_interest", "bitmap_data",
    "metadata_interest", "metadata_data",
    "data_interest", "data_data",
]

CSV_COLUMNS = (
    ["record", "seed", "node", "role", "completed", "download_time"]
    + TX_CATEGORIES
    + ["total_tx", "collisions", "losses", "forwards",
       "forward_successes", "forward_failures", "forward_success_ratio"]
)


@dataclass
class NodeResult:
    node: int
    role: str
    completed: bool
    download_time: float  # capped at max_sim_time when incomplete


@dataclass
class SeedResult:
    seed: int
    nodes: List[NodeResult]
    tx_counts: Dict[str, int]
    collisions: int
    losses: int
    forwards: int
    forward_successes: int
    forward_failures: int

    @property
    def total_tx(self) -> int:
        return sum(self.tx_counts.values())

    @property
    def forward_success_ratio(self) -> Optional[float]:
        done = self.forward_successes + self.forward_failures
        return self.forward_successes / done if done else None

    @property
    def mean_download_time(self) -> float:
        times = [n.download_time for n in self.nodes]
        return sum(times) / len(times) if times else 0.0

    @property
    def median_download_time(self) -> float:
        times = sorted(n.download_time for n in self.nodes)
        if not times:
            return 0.0
        mid = len(times) // 2
        if len(times) % 2:
            return times[mid]
        return 0.5 * (times[mid - 1] + times[mid])

    @property
    def all_completed(self) -> bool:
        return all(n.completed for n in self.nodes)


def percentile_90(values: List[float]) -> float:
    """Order-statistic percentile: the ceil(0.9 n)-th smallest value."""
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = max(0, math.ceil(0.9 * len(ordered)) - 1)
    return ordered[idx]


@dataclass
class MetricsReport:
    seeds: List[SeedResult] = field(default_factory=list)

    def seed_result(self, seed: int) -> SeedResult:
        for s in self.seeds:
            if s.seed == seed:
                return s
        raise KeyError(seed)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("# schema_version=%d\n" % SCHEMA_VERSION)
        out.write(",".join(CSV_COLUMNS) + "\n")

        def emit(values: Dict[str, object]) -> None:
            row = []
            for col in CSV_COLUMNS:
                v = values.get(col, "")
                if isinstance(v, float):
                    v = "%.6f" % v
                row.append(str(v))
            out.write(",".join(row) + "\n")

        for s in sorted(self.seeds, key=lambda s: s.seed):
            for n in s.nodes:
                emit({"record": "node", "seed": s.seed, "node": n.node, "role": n.role,
                      "completed": int(n.completed), "download_time": n.download_time})
            seed_row = {"record": "seed", "seed": s.seed,
                        "total_tx": s.total_tx, "collisions": s.collisions,
                        "losses": s.losses, "forwards": s.forwards,
                        "forward_successes": s.forward_successes,
                        "forward_failures": s.forward_failures}
            for cat in TX_CATEGORIES:
                seed_row[cat] = s.tx_counts.get(cat, 0)
            ratio = s.forward_success_ratio
            if ratio is not None:
                seed_row["forward_success_ratio"] = ratio
            emit(seed_row)

        agg = {"record": "aggregate",
               "download_time": percentile_90([s.mean_download_time for s in self.seeds]),
               "total_tx": percentile_90([float(s.total_tx) for s in self.seeds]),
               "collisions": percentile_90([float(s.collisions) for s in self.seeds])}
        emit(agg)
        return out.getvalue()


def seed_result_from_world(world, max_sim_time: float) -> SeedResult:
    nodes = []
    for nid in world.downloader_ids:
        t = world.metrics.download_times.get(nid)
        nodes.append(NodeResult(
            node=nid, role=world.nodes[nid].role,
            completed=t is not None,
            download_time=t if t is not None else max_sim_time,
        ))
    m = world.metrics
    return SeedResult(
        seed=world.seed, nodes=nodes, tx_counts=dict(sorted(m.tx_counts.items())),
        collisions=m.collisions, losses=m.losses, forwards=m.forwards,
        forward_successes=m.forward_successes, forward_failures=m.forward_failures,
    )

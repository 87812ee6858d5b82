"""Scenario configuration: dataclasses, INI parsing, defaults.

Every key has a default; unknown sections or keys are rejected with the
offending name (and the line number when it can be found in the file).
The same structures drive both the CLI and programmatic scenario
construction in tests.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional

from .collection import MetadataFormat
from .crypto import DigestAlgo
from .scheduling import ExchangeMode


class ConfigError(ValueError):
    def __init__(self, message: str, key: str = "", line: Optional[int] = None):
        loc = ""
        if key:
            loc = " (key %r%s)" % (key, ", line %d" % line if line else "")
        super().__init__(message + loc)
        self.key = key
        self.line = line


@dataclass
class NodeCounts:
    downloaders: int = 10
    repos: int = 2
    pure_forwarders: int = 5
    intermediates: int = 5


@dataclass
class CollectionSpec:
    name: str = "scenario-1533783192"   # single component; includes a unix timestamp
    files: int = 10
    file_size: int = 102400
    packet_size: int = 1024
    metadata_format: MetadataFormat = MetadataFormat.DIGEST_LIST
    digest_algo: DigestAlgo = DigestAlgo.SHA256


@dataclass
class MediumSpec:
    range: float = 75.0
    loss_rate: float = 0.10
    data_rate: float = 11e6


@dataclass
class PeerSpec:
    exchange_mode: ExchangeMode = ExchangeMode.INTERLEAVED
    bitmaps: Optional[int] = 3          # b; None means "all within range"
    strategy: str = "local"             # local | encounter
    random_start: bool = True
    forward_prob: float = 0.20
    window: float = 0.020
    peba: bool = True
    peba_groups: int = 2
    tau: Optional[float] = None         # default: max packet airtime
    pipeline_depth: int = 4
    discovery_period_min: float = 1.0
    discovery_period_max: float = 32.0
    knowledge_ttl: float = 10.0
    history_capacity: int = 20
    retransmit_max: int = 5
    pit_lifetime: float = 2.0
    suppress_duration: float = 5.0
    fwd_jitter_max: float = 0.020
    cs_capacity: int = 10000


@dataclass
class MobilitySpec:
    speed_min: float = 2.0
    speed_max: float = 10.0
    redraw_period: float = 10.0
    arena_width: float = 300.0
    arena_height: float = 300.0
    tick: float = 0.1


@dataclass
class RunSpec:
    seeds: List[int] = field(default_factory=lambda: [1])
    max_sim_time: float = 1200.0
    trace: bool = False


@dataclass
class ScenarioConfig:
    nodes: NodeCounts = field(default_factory=NodeCounts)
    collection: CollectionSpec = field(default_factory=CollectionSpec)
    medium: MediumSpec = field(default_factory=MediumSpec)
    peer: PeerSpec = field(default_factory=PeerSpec)
    mobility: MobilitySpec = field(default_factory=MobilitySpec)
    run: RunSpec = field(default_factory=RunSpec)

    def validate(self) -> None:
        n, m, p = self.nodes, self.medium, self.peer
        if min(n.downloaders, n.repos, n.pure_forwarders, n.intermediates) < 0:
            raise ConfigError("node counts must be nonnegative")
        if n.repos < 1:
            raise ConfigError("need at least one repo (the producer)")
        if m.range <= 0:
            raise ConfigError("range must be positive", "range")
        if not (0.0 <= m.loss_rate <= 1.0):
            raise ConfigError("loss_rate must be within [0,1]", "loss_rate")
        if not (0.0 <= p.forward_prob <= 1.0):
            raise ConfigError("forward_prob must be within [0,1]", "forward_prob")
        if p.discovery_period_min > p.discovery_period_max:
            raise ConfigError("discovery_period_min above max", "discovery_period_min")
        if p.strategy not in ("local", "encounter"):
            raise ConfigError("strategy must be local or encounter", "strategy")
        if self.collection.packet_size < 1 or self.collection.file_size < 1:
            raise ConfigError("collection sizes must be positive")
        if self.mobility.tick <= 0:
            raise ConfigError("mobility tick must be positive", "tick")


def parse_seeds(text: str) -> List[int]:
    """Accepts '1..10', '1,2,5', or a single integer."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


_ENUMS = {
    "metadata_format": {"digest-list": MetadataFormat.DIGEST_LIST,
                        "merkle-roots": MetadataFormat.MERKLE_ROOTS},
    "digest_algo": {"sha1": DigestAlgo.SHA1, "sha256": DigestAlgo.SHA256,
                    "trunc24": DigestAlgo.TRUNC24},
    "exchange_mode": {"bitmaps-first": ExchangeMode.BITMAPS_FIRST,
                      "interleaved": ExchangeMode.INTERLEAVED},
}


def _find_line(text: str, key: str) -> Optional[int]:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and (stripped[len(key):].lstrip()[:1] in ("=", ":")):
            return i
    return None


def _coerce(section_obj, key: str, raw: str, text: str):
    if key == "seeds":
        return parse_seeds(raw)
    if key == "bitmaps":
        return None if raw.strip().lower() == "all" else int(raw)
    if key == "tau":
        return None if raw.strip().lower() == "auto" else float(raw)
    if key in _ENUMS:
        table = _ENUMS[key]
        if raw.strip() not in table:
            raise ConfigError("bad value %r; expected one of %s" % (raw, sorted(table)),
                              key, _find_line(text, key))
        return table[raw.strip()]
    current = getattr(section_obj, key)
    try:
        if isinstance(current, bool):
            return _parse_bool(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(str(e), key, _find_line(text, key))


def load_config(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError("config syntax error: %s" % e)
    sections = {"nodes": cfg.nodes, "collection": cfg.collection, "medium": cfg.medium,
                "peer": cfg.peer, "mobility": cfg.mobility, "run": cfg.run}
    for section in parser.sections():
        if section not in sections:
            raise ConfigError("unknown section [%s]" % section, section,
                              _find_line(text, "[%s]" % section))
        target = sections[section]
        known = {f.name for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError("unknown key %r in [%s]" % (key, section), key,
                                  _find_line(text, key))
            setattr(target, key, _coerce(target, key, raw, text))
    cfg.validate()
    return cfg


def load_config_file(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_config(fh.read())

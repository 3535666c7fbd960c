"""Toy mass-balance simulator of a branched tidal river.

Each water-level station ``i`` evolves hourly as::

    h_i(t+1) = h_i(t) + a_i * rain_i(t+1)
             + sum_j k_ij * (h_j(t) - h_i(t))
             - b_i * drain_i(t+1)
             + g_i * (tide(t+1) - h_i(t))
             + noise

where ``j`` runs over hydraulically adjacent stations (stations joined
directly or through a gate/pump), ``k_ij`` is the mean of the two stations'
exchange rates, ``drain_i`` is the summed setting of structures for which
``i`` is the upstream side, and ``g_i`` is non-zero only beside the tidal
boundary.  Rain is a seeded regional event process, the tide a sinusoid, and
structures follow a seeded hysteresis controller on their upstream level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .data import ChannelSpec, TimeSeriesFrame, parse_timestamp
from .graph import StationGraph, default_topology, load_topology

BUNDLED_SCENARIOS = ("default", "tide-dominated", "storm")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class NodeCoefficients:
    storage_gain: float = 0.0      # ft per inch of rain
    exchange_rate: float = 0.0     # 1/h
    gate_drawdown: float = 0.0     # ft/h at full opening
    tide_coupling: float = 0.0     # dimensionless


@dataclass(frozen=True)
class Storm:
    start: int
    duration: int
    rain_intensity: float = 1.0    # in/hr added at every gauge
    surge: float = 1.0             # ft added to the tide at the storm peak


@dataclass(frozen=True)
class Forcing:
    rain_event_rate: float = 0.02          # events per hour
    rain_mean_intensity: float = 0.3       # in/hr
    rain_duration: tuple[int, int] = (3, 12)
    tidal_period: float = 12.42            # h
    tide_amplitude: float = 1.0            # ft
    tide_mean: float = 0.0                 # ft
    storm: Storm | None = None


@dataclass(frozen=True)
class Controller:
    open_level: float = 0.8         # ft, upstream level that opens a structure
    close_band: float = 0.4         # ft below open_level at which it closes again
    threshold_jitter: float = 0.1   # ft, seeded per structure
    min_opening: float = 0.4
    pump_capacity: float = 400.0    # cfs


@dataclass(frozen=True)
class ScenarioConfig:
    graph: StationGraph
    duration: int
    seed: int
    coefficients: dict[str, NodeCoefficients] = field(default_factory=dict)
    forcing: Forcing = Forcing()
    controller: Controller = Controller()
    noise_sigma: float = 0.01
    initial_levels: dict[str, float] = field(default_factory=dict)
    start_time: datetime = datetime(2020, 1, 1, tzinfo=timezone.utc)

    def coeff(self, node_id: str) -> NodeCoefficients:
        return self.coefficients.get(node_id, NodeCoefficients())

    def validate(self) -> None:
        if self.duration < 1:
            raise ScenarioError(f"duration must be positive, got {self.duration}")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")
        if self.noise_sigma < 0:
            raise ScenarioError("noise_sigma must be >= 0")
        tide_nodes = set(self.graph.nodes_of_kind("tide-boundary"))
        for node_id, c in self.coefficients.items():
            if node_id not in self.graph:
                raise ScenarioError(f"coefficients given for unknown node {node_id!r}")
            for name, value in vars(c).items():
                if value < 0:
                    raise ScenarioError(f"{node_id}.{name} must be >= 0, got {value}")
            if c.tide_coupling and not tide_nodes & set(self.graph.neighbors(node_id)):
                raise ScenarioError(f"{node_id}: tide_coupling is only allowed next to a tide-boundary node")
        hydro = _station_links(self.graph)
        for s in self.graph.nodes_of_kind("water-level-station"):
            c = self.coeff(s)
            outflow = sum(0.5 * (c.exchange_rate + self.coeff(j).exchange_rate) for j in hydro[s]) + c.tide_coupling
            if outflow > 1.0:
                raise ScenarioError(f"{s}: exchange plus tide coupling {outflow:.3f} exceeds 1 (explicit update unstable)")
        f = self.forcing
        if f.tidal_period <= 0 or f.rain_event_rate < 0 or f.rain_mean_intensity < 0:
            raise ScenarioError("forcing rates and tidal period must be non-negative (period > 0)")
        lo, hi = f.rain_duration
        if not 1 <= lo <= hi:
            raise ScenarioError(f"rain_duration must satisfy 1 <= min <= max, got {f.rain_duration}")


def channel_layout(graph: StationGraph) -> tuple[ChannelSpec, ...]:
    """Channels the simulator emits: one per node, named after its node."""
    suffix = {
        "water-level-station": ("level", "water-level"),
        "rain-gauge": ("rain", "rainfall"),
        "tide-boundary": ("tide", "tide"),
        "gate": ("gate", "gate-opening"),
        "pump": ("flow", "pump-flow"),
    }
    return tuple(ChannelSpec(f"{n.id}_{suffix[n.kind][0]}", n.id, suffix[n.kind][1]) for n in graph.nodes)


def _station_links(graph: StationGraph) -> dict[str, list[str]]:
    """Stations adjacent directly or through a chain of gates/pumps."""
    stations = graph.nodes_of_kind("water-level-station")
    passable = {n.id for n in graph.nodes if n.kind in ("gate", "pump")}
    links = {}
    for s in stations:
        found, seen, frontier = [], {s}, [s]
        while frontier:
            nxt = []
            for node in frontier:
                for nb in graph.neighbors(node):
                    if nb in seen:
                        continue
                    seen.add(nb)
                    if graph.node(nb).kind == "water-level-station":
                        found.append(nb)
                    elif nb in passable:
                        nxt.append(nb)
            frontier = nxt
        links[s] = sorted(found, key=graph.index)
    return links


def _upstream_station(graph: StationGraph, structure: str) -> str | None:
    stations = [n for n in graph.neighbors(structure) if graph.node(n).kind == "water-level-station"]
    if not stations:
        return None
    tides = graph.nodes_of_kind("tide-boundary")
    if not tides:
        return stations[0]
    hops = graph.hops_from(tides[0])
    return max(stations, key=lambda s: (hops.get(s, -1), -graph.index(s)))


def _rain_series(cfg: ScenarioConfig, gauges: list[str], rng: np.random.Generator) -> np.ndarray:
    f = cfg.forcing
    rain = np.zeros((cfg.duration, len(gauges)))
    if not gauges:
        return rain
    starts = rng.random(cfg.duration) < f.rain_event_rate
    lo, hi = f.rain_duration
    for t0 in np.flatnonzero(starts):
        length = int(rng.integers(lo, hi + 1))
        intensity = rng.exponential(f.rain_mean_intensity)
        spread = rng.uniform(0.5, 1.5, size=len(gauges))
        rain[t0 : t0 + length] += intensity * spread
    if f.storm is not None:
        s = f.storm
        rain[s.start : s.start + s.duration] += s.rain_intensity
    return rain


def _tide_series(cfg: ScenarioConfig) -> np.ndarray:
    f = cfg.forcing
    t = np.arange(cfg.duration)
    tide = f.tide_mean + f.tide_amplitude * np.sin(2.0 * np.pi * t / f.tidal_period)
    if f.storm is not None and f.storm.surge:
        s = f.storm
        inside = (t >= s.start) & (t < s.start + s.duration)
        phase = (t[inside] - s.start + 0.5) / s.duration
        tide[inside] += s.surge * np.sin(np.pi * phase)
    return tide


def generate(cfg: ScenarioConfig) -> TimeSeriesFrame:
    """Simulate ``cfg.duration`` hours; identical configs give bit-identical frames."""
    cfg.validate()
    g = cfg.graph
    stations = g.nodes_of_kind("water-level-station")
    gauges = g.nodes_of_kind("rain-gauge")
    structures = [n.id for n in g.nodes if n.kind in ("gate", "pump")]
    links = _station_links(g)
    s_idx = {s: i for i, s in enumerate(stations)}

    rain_rng, control_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    rain = _rain_series(cfg, gauges, rain_rng)
    tide = _tide_series(cfg)

    # per-station rain: adjacent gauges, else the regional mean
    rain_map = np.zeros((len(gauges), len(stations)))
    for s in stations:
        near = [gauges.index(n) for n in g.neighbors(s) if n in gauges]
        use = near or list(range(len(gauges)))
        for j in use:
            rain_map[j, s_idx[s]] = 1.0 / len(use)
    station_rain = rain @ rain_map if gauges else np.zeros((cfg.duration, len(stations)))

    alpha = np.array([cfg.coeff(s).storage_gain for s in stations])
    beta = np.array([cfg.coeff(s).gate_drawdown for s in stations])
    gamma = np.array([cfg.coeff(s).tide_coupling for s in stations])
    exchange = np.zeros((len(stations), len(stations)))
    for s in stations:
        for nb in links[s]:
            exchange[s_idx[s], s_idx[nb]] = 0.5 * (cfg.coeff(s).exchange_rate + cfg.coeff(nb).exchange_rate)
    exchange_out = exchange.sum(axis=1)

    ctl = cfg.controller
    upstream = [_upstream_station(g, st) for st in structures]
    open_at = ctl.open_level + control_rng.uniform(-ctl.threshold_jitter, ctl.threshold_jitter, size=len(structures))
    close_at = open_at - ctl.close_band
    drain_map = np.zeros((len(structures), len(stations)))
    for j, up in enumerate(upstream):
        if up is not None:
            drain_map[j, s_idx[up]] = 1.0
    setting = np.zeros((cfg.duration, len(structures)))

    h = np.zeros((cfg.duration, len(stations)))
    h[0] = [cfg.initial_levels.get(s, 0.0) for s in stations]
    for t in range(cfg.duration - 1):
        cur = h[t]
        nxt_setting = setting[t].copy()
        for j, up in enumerate(upstream):
            if up is None:
                continue
            level = cur[s_idx[up]]
            if nxt_setting[j] == 0.0 and level > open_at[j]:
                nxt_setting[j] = control_rng.uniform(ctl.min_opening, 1.0)
            elif nxt_setting[j] > 0.0 and level < close_at[j]:
                nxt_setting[j] = 0.0
        setting[t + 1] = nxt_setting
        noise = noise_rng.normal(0.0, cfg.noise_sigma, size=len(stations)) if cfg.noise_sigma > 0 else 0.0
        h[t + 1] = (
            cur
            + alpha * station_rain[t + 1]
            + exchange @ cur - exchange_out * cur
            - beta * (nxt_setting @ drain_map)
            + gamma * (tide[t + 1] - cur)
            + noise
        )

    columns = []
    for n in g.nodes:
        if n.kind == "water-level-station":
            columns.append(h[:, s_idx[n.id]])
        elif n.kind == "rain-gauge":
            columns.append(rain[:, gauges.index(n.id)])
        elif n.kind == "tide-boundary":
            columns.append(tide)
        elif n.kind == "gate":
            columns.append(setting[:, structures.index(n.id)])
        else:
            columns.append(setting[:, structures.index(n.id)] * ctl.pump_capacity)
    values = np.column_stack(columns)
    return TimeSeriesFrame(cfg.start_time, channel_layout(g), values, np.zeros(values.shape, dtype=bool))


# -- configuration files -------------------------------------------------------

def scenario_from_dict(d: dict, base_dir: Path | None = None, **overrides) -> ScenarioConfig:
    d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
    topo = d.get("topology", "default")
    if topo == "default":
        graph = default_topology()
    else:
        p = Path(topo)
        graph = load_topology(p if p.is_absolute() or base_dir is None else base_dir / p)
    defaults = d.get("defaults", {}) or {}
    per_node = d.get("nodes", {}) or {}
    coefficients = {}
    for n in graph.nodes_of_kind("water-level-station"):
        coefficients[n] = NodeCoefficients(**{**defaults, **(per_node.get(n) or {})})
    for n, c in per_node.items():
        if n not in coefficients:
            coefficients[n] = NodeCoefficients(**c)
    fd = dict(d.get("forcing", {}) or {})
    if fd.get("storm"):
        fd["storm"] = Storm(**fd["storm"])
    if "rain_duration" in fd:
        fd["rain_duration"] = tuple(fd["rain_duration"])
    kwargs = {}
    if "start_time" in d:
        kwargs["start_time"] = parse_timestamp(str(d["start_time"]))
    try:
        cfg = ScenarioConfig(
            graph=graph,
            duration=int(d["duration"]),
            seed=int(d.get("seed", 0)),
            coefficients=coefficients,
            forcing=Forcing(**fd),
            controller=Controller(**(d.get("controller", {}) or {})),
            noise_sigma=float(d.get("noise_sigma", 0.01)),
            initial_levels={str(k): float(v) for k, v in (d.get("initial_levels", {}) or {}).items()},
            **kwargs,
        )
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"invalid scenario description: {exc}") from None
    cfg.validate()
    return cfg


def load_scenario(name_or_path: str, duration: int | None = None, seed: int | None = None) -> ScenarioConfig:
    """Load a bundled scenario by name or a YAML scenario file by path."""
    if name_or_path in BUNDLED_SCENARIOS:
        text = resources.files("floodgtn.resources").joinpath(f"scenario_{name_or_path}.yaml").read_text()
        base = None
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ScenarioError(f"scenario {name_or_path!r} is neither bundled nor an existing file")
        text, base = path.read_text(), path.parent
    return scenario_from_dict(yaml.safe_load(text), base, duration=duration, seed=seed)

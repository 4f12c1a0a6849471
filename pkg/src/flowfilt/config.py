"""Flat key = value run configuration with dotted section prefixes.

The format is line oriented: blank lines and lines starting with '#' are
ignored, everything else is `section.key = value`. Scalars are plain
numbers, tuples are comma separated. Filters are indexed sections:

    filter.1.name = naedh-ccr
    filter.1.n_substeps = 10
    filter.1.n_particles = 500

parse_config and format_config round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .benchmark import FilterSpec, ScenarioConfig

__all__ = ["RunConfig", "parse_config", "format_config", "default_run_config"]


@dataclass(frozen=True)
class RunConfig:
    """Scenario, filter list, trial count, sweep levels, output directory, seed."""

    scenario: ScenarioConfig
    filters: tuple
    n_trials: int
    out_dir: str
    seed: int
    sweep_sigma_theta_deg: tuple = (0.001, 0.05, 1.0)

    def __post_init__(self):
        if not self.filters:
            raise ValueError("config needs at least one filter")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")


def default_run_config() -> RunConfig:
    """Built-in benchmark configuration mirroring the reference comparison."""
    return RunConfig(
        scenario=ScenarioConfig(),
        filters=(
            FilterSpec("naedh-ccr", n_substeps=10, n_particles=500),
            FilterSpec("naedh-lin", n_substeps=10, n_particles=500),
            FilterSpec("edh-adaptive", n_particles=500, delta_l_target=10),
            FilterSpec("bootstrap-pf", n_particles=10_000),
            FilterSpec("ekf"),
        ),
        n_trials=100,
        out_dir="results",
        seed=1,
    )


_SCENARIO_FLOATS = {
    "sigma_theta_deg", "dt", "sine_amplitude", "sine_period",
    "process_noise_intensity",
}
_SCENARIO_TUPLES = {"prior_bias", "p0_diag", "initial_state"}
_SCENARIO_INTS = {"n_steps", "seed"}
_FILTER_INTS = {"n_substeps", "n_particles", "delta_l_target"}


def _parse_floats(value: str) -> tuple:
    return tuple(float(p) for p in value.split(","))


def parse_config(text: str) -> RunConfig:
    """Parse configuration text; unknown keys are rejected by name."""
    scenario_kw: dict = {}
    run_kw: dict = {}
    filter_kw: dict[int, dict] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        parts = key.split(".")
        if parts[0] == "scenario" and len(parts) == 2:
            name = parts[1]
            if name in ("sensor1", "sensor2"):
                scenario_kw[name] = _parse_floats(value)
            elif name in _SCENARIO_TUPLES:
                scenario_kw[name] = _parse_floats(value)
            elif name in _SCENARIO_FLOATS:
                scenario_kw[name] = float(value)
            elif name in _SCENARIO_INTS:
                scenario_kw[name] = int(value)
            else:
                raise ValueError(f"line {lineno}: unknown scenario key {name!r}")
        elif parts[0] == "run" and len(parts) == 2:
            name = parts[1]
            if name == "trials":
                run_kw["n_trials"] = int(value)
            elif name == "seed":
                run_kw["seed"] = int(value)
            elif name == "out":
                run_kw["out_dir"] = value
            elif name == "sigma_theta_deg":
                run_kw["sweep_sigma_theta_deg"] = _parse_floats(value)
            else:
                raise ValueError(f"line {lineno}: unknown run key {name!r}")
        elif parts[0] == "filter" and len(parts) == 3:
            idx = int(parts[1])
            name = parts[2]
            slot = filter_kw.setdefault(idx, {})
            if name == "name":
                slot["name"] = value
            elif name in _FILTER_INTS:
                slot[name] = int(value)
            elif name == "delta_l":
                slot["delta_l"] = float(value)
            else:
                raise ValueError(f"line {lineno}: unknown filter key {name!r}")
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")

    sensor1 = scenario_kw.pop("sensor1", (0.0, 0.0))
    sensor2 = scenario_kw.pop("sensor2", (50.0, 0.0))
    scenario = ScenarioConfig(sensor_positions=(sensor1, sensor2), **scenario_kw)
    filters = tuple(
        FilterSpec(**filter_kw[idx]) for idx in sorted(filter_kw)
    )
    if not filters:
        filters = default_run_config().filters
    return RunConfig(
        scenario=scenario,
        filters=filters,
        n_trials=run_kw.get("n_trials", 100),
        out_dir=run_kw.get("out_dir", "results"),
        seed=run_kw.get("seed", 1),
        sweep_sigma_theta_deg=run_kw.get("sweep_sigma_theta_deg", (0.001, 0.05, 1.0)),
    )


def format_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to the flat text format (full round trip)."""
    s = cfg.scenario
    lines = [
        "# flowfilt run configuration",
        f"scenario.sensor1 = {s.sensor_positions[0][0]!r}, {s.sensor_positions[0][1]!r}",
        f"scenario.sensor2 = {s.sensor_positions[1][0]!r}, {s.sensor_positions[1][1]!r}",
        f"scenario.sigma_theta_deg = {s.sigma_theta_deg!r}",
        f"scenario.dt = {s.dt!r}",
        f"scenario.n_steps = {s.n_steps}",
        f"scenario.sine_amplitude = {s.sine_amplitude!r}",
        f"scenario.sine_period = {s.sine_period!r}",
        "scenario.prior_bias = " + ", ".join(repr(v) for v in s.prior_bias),
        "scenario.p0_diag = " + ", ".join(repr(v) for v in s.p0_diag),
        f"scenario.process_noise_intensity = {s.process_noise_intensity!r}",
        "scenario.initial_state = " + ", ".join(repr(v) for v in s.initial_state),
        f"scenario.seed = {s.seed}",
        f"run.trials = {cfg.n_trials}",
        f"run.seed = {cfg.seed}",
        f"run.out = {cfg.out_dir}",
        "run.sigma_theta_deg = " + ", ".join(repr(v) for v in cfg.sweep_sigma_theta_deg),
    ]
    for i, f in enumerate(cfg.filters, start=1):
        lines.append(f"filter.{i}.name = {f.name}")
        if f.n_substeps is not None:
            lines.append(f"filter.{i}.n_substeps = {f.n_substeps}")
        if f.n_particles is not None:
            lines.append(f"filter.{i}.n_particles = {f.n_particles}")
        if f.delta_l_target is not None:
            lines.append(f"filter.{i}.delta_l_target = {f.delta_l_target}")
        if f.delta_l is not None:
            lines.append(f"filter.{i}.delta_l = {f.delta_l!r}")
    return "\n".join(lines) + "\n"


def override(cfg: RunConfig, seed=None, trials=None, out=None) -> RunConfig:
    """Apply command-line overrides onto a parsed config."""
    kw = {}
    if seed is not None:
        kw["seed"] = seed
    if trials is not None:
        kw["n_trials"] = trials
    if out is not None:
        kw["out_dir"] = out
    return replace(cfg, **kw) if kw else cfg

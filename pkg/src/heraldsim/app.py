import asyncio
import logging
from pathlib import Path

import yaml
from pydantic import ValidationError

from .config import PRESETS, OutputConfig, RunConfig, RunnerConfig, dump_run_config, load_run_config
from .errors import ConfigurationError, FitError, HeraldSimError, UsageError
from .experiment_runner import (
    CONFIG_NAME,
    ExperimentRunner,
    analyze_directory,
    bundle_report,
    characterize_file,
    write_characterization_outputs,
    write_metrics_outputs,
    write_table,
)


logger = logging.getLogger(__name__)


runner: ExperimentRunner = ExperimentRunner()


def set_runner_config(config: RunnerConfig):
    global runner
    runner = ExperimentRunner(config)


def _failed(command: str, e: HeraldSimError) -> int:
    logger.error(f"{command} failed: {e}")
    if isinstance(e, FitError) and e.diagnostics:
        logger.debug(f"Fit diagnostics: {e.diagnostics}")
    return e.exit_code


def _updated(run: RunConfig, **updates) -> RunConfig:
    """Applies overrides with full validation."""
    updates = {k: v for k, v in updates.items() if v is not None}
    if not updates:
        return run
    try:
        return RunConfig.model_validate(run.model_dump() | updates)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid override {updates}:\n{e}") from e


async def resolve_run_config(config_path: Path | None, preset: str | None, fallback: Path | None = None) -> RunConfig:
    if config_path is not None and preset is not None:
        raise UsageError("--config and --preset are mutually exclusive")
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"Unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[preset]()
    if config_path is not None:
        return await load_run_config(config_path)
    if fallback is not None and fallback.is_file():
        logger.info(f"Using the run configuration {fallback}")
        return await load_run_config(fallback)
    raise ConfigurationError("No run configuration: pass --config or --preset")


async def simulate(
    config_path: Path | None = None,
    preset: str | None = None,
    output: Path | None = None,
    duration_s: float | None = None,
    seed: int | None = None,
    dump_config: bool = False,
) -> int:
    """Simulates a run and writes one tag file per channel plus a manifest."""

    try:
        run = _updated(await resolve_run_config(config_path, preset), duration_s=duration_s, seed=seed)
        if dump_config:
            print(dump_run_config(run), end="")
            return 0

        manifest = await runner.simulate(run, output)
        print(yaml.dump(
            {"files": [f.model_dump(exclude_none=True) for f in manifest.files], "config_hash": manifest.config_hash},
            sort_keys=False,
        ), end="")
        return 0
    except HeraldSimError as e:
        return _failed("simulate", e)


async def characterize(
    tags_path: Path | None,
    config_path: Path | None = None,
    preset: str | None = None,
    output: Path | None = None,
    laser_off: bool = False,
    holdoffs_ps: list[int] | None = None,
    far_window: tuple[int, int] | None = None,
    mu: float | None = None,
    operating_points: bool = False,
) -> int:
    """Dark count, detection efficiency and afterpulsing of a gated SPAD from
    one laser-synchronized tag file, or a sweep over operating points."""

    try:
        fallback = tags_path.parent / CONFIG_NAME if tags_path is not None else None
        run = await resolve_run_config(config_path, preset, fallback)

        if mu is not None:
            if run.pulsed_laser is None:
                raise ConfigurationError("--mu needs a `pulsed_laser` section naming the laser rate and pulse bin")
            run = _updated(run, pulsed_laser=run.pulsed_laser.model_dump() | {"mu": mu})

        if operating_points:
            rows = await runner.operating_point_sweep(run)
            target = output or OutputConfig().resolve_directory() / "operating_points"
            target.mkdir(parents=True, exist_ok=True)
            path = write_table(target / "operating_points.csv", rows)
            print(yaml.dump({"operating_points": str(path), "rows": len(rows)}, sort_keys=False), end="")
            return 0

        if tags_path is None:
            raise UsageError("characterize needs a tag file unless --operating-points is given")

        result, hist = await asyncio.to_thread(
            characterize_file, tags_path, run, laser_off, holdoffs_ps, far_window, runner.config,
        )
        written = write_characterization_outputs(output or tags_path.parent / "characterization", result, hist)
        print(yaml.dump({
            "dcr_per_gate": result.dcr_per_gate.model_dump(),
            "dcr_hz": result.dcr_hz,
            "pde_direct": result.pde_direct.model_dump() if result.pde_direct else None,
            "pde_poissonian": result.pde_poissonian.model_dump() if result.pde_poissonian else None,
            "files": [str(p) for p in written],
        }, sort_keys=False), end="")
        return 0
    except HeraldSimError as e:
        return _failed("characterize", e)


async def analyze(
    directory: Path | None,
    config_path: Path | None = None,
    preset: str | None = None,
    output: Path | None = None,
    heralded_window_ps: int | None = None,
    heralded_half_window_ps: int | None = None,
    software_deadtime_ps: dict[int, int] | None = None,
    sweep: bool = False,
) -> int:
    """Heralding efficiency, heralded rate and g² figures of a simulated (or
    imported) run; `sweep` instead simulates and tabulates the power ladder."""

    try:
        if heralded_window_ps is not None and heralded_half_window_ps is not None:
            raise UsageError("--heralded-window-ps and --heralded-half-window-ps set the same window; pass one")
        if heralded_half_window_ps is not None:
            heralded_window_ps = 2 * heralded_half_window_ps

        fallback = directory / CONFIG_NAME if directory is not None else None
        run = await resolve_run_config(config_path, preset, fallback)

        settings = run.analysis.model_dump()
        if heralded_window_ps is not None:
            settings["heralded_window_ps"] = heralded_window_ps
        if software_deadtime_ps:
            settings["software_deadtime_ps"] = settings["software_deadtime_ps"] | software_deadtime_ps
        run = _updated(run, analysis=settings)

        if sweep:
            rows = await runner.power_sweep(run)
            target = output or OutputConfig().resolve_directory() / "power_sweep"
            target.mkdir(parents=True, exist_ok=True)
            path = write_table(target / "power_sweep.csv", rows)
            print(yaml.dump({"power_sweep": str(path), "rows": len(rows)}, sort_keys=False), end="")
            return 0

        if directory is None:
            raise UsageError("analyze needs a run directory unless --sweep is given")

        metrics, histograms = await analyze_directory(run, directory, runner.config)
        written = write_metrics_outputs(output or directory / "analysis", metrics, histograms)
        summary = {
            "eta_h_s": metrics.eta_h_s.model_dump(),
            "r_h_s_hz": metrics.r_h_s.model_dump(),
        }
        if metrics.g2_auto_0 is not None:
            summary["g2_auto_0"] = metrics.g2_auto_0.model_dump()
        if metrics.g2_h_0 is not None:
            summary["g2_h_0"] = metrics.g2_h_0.model_dump()
        summary["files"] = [str(p) for p in written]
        print(yaml.dump(summary, sort_keys=False), end="")
        return 0
    except HeraldSimError as e:
        return _failed("analyze", e)


async def report(sources: list[Path], output: Path | None = None) -> int:
    """Bundles the CSV and JSON outputs of earlier stages into one folder."""

    try:
        index = await bundle_report(sources, output or OutputConfig().resolve_directory() / "report")
        print(yaml.dump({"index": str(index)}, sort_keys=False), end="")
        return 0
    except HeraldSimError as e:
        return _failed("report", e)

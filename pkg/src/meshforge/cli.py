"""Command-line driver.

Exit codes: 0 success, 1 verification failure, 2 configuration/usage error,
3 scorer endpoint unreachable, 4 I/O or file-format error. Progress output is
line-oriented and machine-parsable (step=... total=... reg=...).
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, parse_config_file
from .mmx import ModelFormatError
from .optim import CheckpointError, run_optimization
from .scorers import ScorerError, ScorerUnreachableError

EXIT_CONFIG = 2
EXIT_SCORER = 3
EXIT_IO = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Text-guided differentiable mesh optimization engine."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run config YAML.")
@click.option("--resume", "resume_path", type=click.Path(), default=None,
              help="Checkpoint to resume from.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Override the output directory.")
def optimize(config_path, resume_path, seed, out_dir):
    """Run the optimization loop defined by a config file."""
    if not Path(config_path).exists():
        _fail(EXIT_CONFIG, f"config file not found: {config_path}")
    try:
        cfg = parse_config_file(config_path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, f"invalid config {config_path}: {exc}")
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read config {config_path}: {exc}")
    try:
        result = run_optimization(
            cfg, resume=resume_path, out_dir=out_dir, seed=seed, progress=click.echo
        )
    except ScorerUnreachableError as exc:
        _fail(EXIT_SCORER, str(exc))
    except ScorerError as exc:
        _fail(EXIT_SCORER, str(exc))
    except (CheckpointError, ModelFormatError) as exc:
        _fail(EXIT_IO, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"done steps={result.steps_run} checkpoint={result.final_checkpoint}")


def _parse_resolution(res: str) -> tuple[int, int]:
    try:
        h, w = res.lower().split("x")
        out = (int(h), int(w))
    except ValueError:
        raise ConfigError(f"resolution must look like 768x768, got {res!r}")
    if out[0] < 8 or out[1] < 8:
        raise ConfigError(f"resolution must be at least 8x8, got {res!r}")
    return out


@main.command()
@click.option("--checkpoint", "ckpt", required=True, type=click.Path())
@click.option("--frames", type=int, default=60, show_default=True)
@click.option("--res", "resolution", default=None, help="HxW, e.g. 768x768.")
@click.option("--poses", "poses_path", type=click.Path(), default=None,
              help="YAML file with a list of (J, 3) pose keyframes.")
@click.option("--out", "out_dir", type=click.Path(), default=None)
def render(ckpt, frames, resolution, poses_path, out_dir):
    """Render a turntable PNG sequence from a checkpoint."""
    from .export import render_turntable

    try:
        res = _parse_resolution(resolution) if resolution else None
        if frames < 1:
            raise ConfigError("--frames must be >= 1")
        keyframes = None
        if poses_path is not None:
            import yaml

            raw = yaml.safe_load(Path(poses_path).read_text())
            keyframes = tuple(np.asarray(k, dtype=float) for k in raw)
            if len(keyframes) < 2:
                raise ConfigError("pose keyframe file needs at least 2 keyframes")
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    try:
        paths = render_turntable(ckpt, frames=frames, resolution=res,
                                 pose_keyframes=keyframes, out_dir=out_dir)
    except (CheckpointError, ModelFormatError) as exc:
        _fail(EXIT_IO, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"wrote {len(paths)} frames to {paths[0].parent}")


@main.command()
@click.option("--checkpoint", "ckpt", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def export(ckpt, out_dir):
    """Export mesh.obj, mesh.mtl, and texture.png from a checkpoint."""
    from .export import export_checkpoint

    try:
        files = export_checkpoint(ckpt, out_dir)
    except (CheckpointError, ModelFormatError) as exc:
        _fail(EXIT_IO, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"wrote {files['obj']} {files['mtl']} {files['texture']}")


@main.command()
@click.option("--scene", type=click.Choice(["tiny", "humanoid"]), default="tiny",
              show_default=True)
@click.option("--tolerance", type=float, default=1e-3, show_default=True)
@click.option("--cases", type=int, default=100, show_default=True,
              help="Randomized cases per stage.")
def gradcheck(scene, tolerance, cases):
    """Finite-difference verification of every differentiable stage."""
    from .checks import run_gradient_checks

    results = run_gradient_checks(scene, cases=cases)
    failed = False
    for name, err in results:
        status = "ok" if err <= tolerance else "FAIL"
        if err > tolerance:
            failed = True
        click.echo(f"{status:4s} {name:<28s} worst_rel_err={err:.3e}")
    if failed:
        click.echo(f"gradcheck failed at tolerance {tolerance}", err=True)
        sys.exit(1)
    click.echo(f"all stages within tolerance {tolerance}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
def serve(host, port):
    """Launch the HTTP job service wrapping the engine."""
    try:
        import uvicorn
    except ImportError:
        _fail(EXIT_CONFIG, "uvicorn is not installed; pip install 'meshforge[serve]'")
    from .service import app

    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()

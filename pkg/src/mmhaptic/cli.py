"""Command-line interface.

Every command reads the global ``--config`` file (defaults embedded, see
``--print-config``). Failures print ``error[<category>]: <message>`` and
exit with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import RunConfig
from .errors import InputError, MMHapticError
from .evaluation import evaluate, export_heatmap, format_report, write_keyvalue
from .field import assemble_laplace, build_grid, laplace_field
from .geometry import to_cylindrical
from .impedance import fit_field
from .io import (FieldArchive, file_sha256, read_archive, read_manifest, read_point_cloud, read_surface,
                 write_archive, write_surface)
from .phantom import make_phantom, make_trajectory, simulate_measurements
from .render import batch_from_records, build_probe_pointshell, render_step
from .scanlog import ScanRecord, format_row, read_scan_log, write_scan_log
from .surface import ExtractionConfig, axis_from_probe_pose, extract_surface, merge_scans

log = logging.getLogger("mmhaptic")


def _config(ctx) -> RunConfig:
    return ctx.obj["config"]


def _require_surface(archive: FieldArchive, path) -> None:
    if archive.surface is None:
        raise InputError(f"{path} carries no surface; rebuild it with build-field")


@click.group(invoke_without_command=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML run configuration.")
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("-v", "--verbose", count=True, help="Repeat for more detail.")
@click.option("--print-config", is_flag=True, help="Print the effective configuration and exit.")
@click.version_option(__version__)
@click.pass_context
def main(ctx, config_path, seed, verbose, print_config):
    """Model-mediated haptic rendering of a patient torso from scans."""
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": seed} if seed is not None else None
    ctx.obj = {"config": RunConfig.load(config_path, overrides)}
    if print_config:
        click.echo(_config(ctx).dump(), nl=False)
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@main.command("extract-surface")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def extract_surface_cmd(ctx, manifest, output):
    """Merge the scans in MANIFEST and extract the cylindrical surface."""
    cfg = _config(ctx)
    m = read_manifest(manifest)
    cloud = merge_scans([read_point_cloud(p) for p in m.clouds], m.poses)
    axis = m.axis if m.axis is not None else axis_from_probe_pose(m.probe_pose, m.depth_offset)
    z = to_cylindrical(cloud, axis)[:, 2]
    opts = cfg.extraction_kwargs()
    extra = dict(m.extraction)
    z_min = float(extra.pop("z_min", z.min()))
    z_max = float(extra.pop("z_max", z.max()))
    opts.update(extra)
    if "num_slices" not in opts:
        pitch = float(cfg.data["extraction"]["slice_pitch"])
        opts["num_slices"] = max(1, int(round((z_max - z_min) / pitch)))
    surface = extract_surface(cloud, axis, ExtractionConfig(z_min, z_max, **opts))
    write_surface(output, surface)
    log.info("%d points -> %d slices x %d angles", len(cloud), *surface.radii.shape)


@main.command("build-field")
@click.argument("surface_path", metavar="SURFACE", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def build_field_cmd(ctx, surface_path, output):
    """Solve the plain Laplace field around SURFACE and archive it."""
    cfg = _config(ctx)
    surface = read_surface(surface_path)
    grid = build_grid(surface, cfg.resolution())
    boundary = cfg.boundary()
    _, field_ = laplace_field(surface, grid, boundary)
    write_archive(output, FieldArchive(field_, boundary, surface, {"kind": "laplace"}))
    log.info("grid %s, %d voxels", grid.shape, grid.size)


@main.command("fit")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("scan_log", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--lambda", "lam", type=float, default=None, help="Regularisation weight (config default).")
@click.pass_context
def fit_cmd(ctx, model, scan_log, output, lam):
    """Augment MODEL with the wrenches measured in SCAN_LOG."""
    cfg = _config(ctx)
    lam = cfg.lam if lam is None else lam
    arch = read_archive(model)
    _require_surface(arch, model)
    records = read_scan_log(scan_log)
    shell = build_probe_pointshell(cfg.probe())
    system = assemble_laplace(arch.grid, arch.surface, arch.boundary)
    batch = batch_from_records(records, shell, arch.grid, arch.surface)
    fitted = fit_field(system, batch, lam, use_torque=cfg.use_torque)
    meta = {"kind": "augmented", "lambda": lam, "T": batch.T, "use_torque": cfg.use_torque,
            "training_log_sha256": file_sha256(scan_log)}
    write_archive(output, FieldArchive(fitted, arch.boundary, arch.surface, meta))
    log.info("fitted on %d samples (%d in contact)", batch.T, batch.contact_count())


@main.command("render")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("poses", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None, help="Default: stdout.")
@click.pass_context
def render_cmd(ctx, model, poses, output):
    """Render the wrench at every pose in POSES (one output line per pose)."""
    cfg = _config(ctx)
    arch = read_archive(model)
    _require_surface(arch, model)
    shell = build_probe_pointshell(cfg.probe())
    lines = []
    for i, rec in enumerate(read_scan_log(poses, require_wrench=False)):
        try:
            res = render_step(shell, rec.pose, arch.grid, arch.field, arch.surface)
        except MMHapticError as exc:
            exc.args = (f"sample {i}: {exc}",)
            raise
        lines.append(format_row(ScanRecord(rec.t, rec.pose, res.force, res.torque).to_row()))
    text = "\n".join(lines) + "\n"
    if output is None:
        click.echo(text, nl=False)
    else:
        Path(output).write_text(text)


@main.command("evaluate")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("scan_log", type=click.Path(exists=True, dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="Key-value report file.")
@click.pass_context
def evaluate_cmd(ctx, model, scan_log, report):
    """Compare MODEL's rendered forces with the forces measured in SCAN_LOG."""
    cfg = _config(ctx)
    arch = read_archive(model)
    _require_surface(arch, model)
    shell = build_probe_pointshell(cfg.probe())
    rep = evaluate(arch.field, read_scan_log(scan_log), shell, arch.grid, arch.surface)
    click.echo(format_report(rep, f"{Path(model).name} on {Path(scan_log).name}"))
    if report:
        write_keyvalue(report, rep.to_keyvalue(), f"model {model}\nscan {scan_log}")


@main.command("simulate")
@click.option("-o", "--output-dir", required=True, type=click.Path(file_okay=False))
@click.option("--kind", type=click.Choice(["press", "sweep"]), default=None, help="Override the trajectory kind.")
@click.pass_context
def simulate_cmd(ctx, output_dir, kind):
    """Write a synthetic phantom scan: surface.json, truth.mmh and scan.log."""
    cfg = _config(ctx)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.phantom()
    ph = make_phantom(spec, cfg.resolution())
    cfg_kind, params = cfg.trajectory()
    kind = kind or cfg_kind
    traj = make_trajectory(kind, params, ph.surface, ph.grid, seed=cfg.seed)
    shell = build_probe_pointshell(cfg.probe())
    sf, st = cfg.noise()
    scan = simulate_measurements(shell, traj, ph.surface, ph.grid, ph.truth, sf, st, seed=cfg.seed + 1,
                                 provenance={"phantom": spec.to_dict()})
    write_surface(out / "surface.json", ph.surface)
    write_archive(out / "truth.mmh", FieldArchive(ph.truth, ph.system.boundary, ph.surface,
                                                   {"kind": "truth", "phantom": spec.to_dict()}))
    header = "\n".join(f"{k}: {v}" for k, v in scan.provenance.items())
    write_scan_log(out / "scan.log", scan.records, header)
    click.echo(f"wrote {len(scan.records)} samples to {out / 'scan.log'}")


@main.command("heatmap")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--slice", "iz", type=int, required=True, help="Axial slice index.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--reference", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Write |MODEL - REFERENCE| instead of |MODEL|.")
def heatmap_cmd(model, iz, output, reference):
    """Export a transverse slice of |p| as a PGM image (lighter = larger)."""
    arch = read_archive(model)
    ref = read_archive(reference).field if reference else None
    m = export_heatmap(output, arch.field, iz, ref)
    log.info("slice %d: %dx%d, max %.4g", iz, m.shape[0], m.shape[1], float(np.max(m)))


def run(argv=None) -> int:
    """Entry point returning the exit status instead of raising."""
    try:
        rv = main.main(args=argv, prog_name="mmhaptic", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except MMHapticError as exc:
        click.echo(f"error[{exc.category}]: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"error[io]: {exc}", err=True)
        return 1
    return rv if isinstance(rv, int) else 0


def entry() -> None:
    sys.exit(run())

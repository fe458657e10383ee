"""Command line front end.

`run` executes one oracle session from a config file, `grid` sweeps
scorer x protocol x seed, `report` turns a directory of runs into the
three CSV tables, `serve` starts the HTTP annotation service.
"""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

import click

from .dataset import generate_synthetic, load_embeddings, load_manifest
from .errors import PrepalError
from .evaluation import (
    curve,
    curves_csv,
    load_grid,
    summary,
    summary_csv,
    timing_csv,
    timing_table,
)
from .protocol import PROTOCOLS, SessionConfig, run_session
from .service import DATA_ROOT_ENV, create_app

_SYNTH_KEYS = {
    "n": int,
    "d": int,
    "classes": int,
    "separation": float,
    "seed": int,
    "holdout": float,
    "secondary": float,
    "name": str,
}


def _parse_synthetic(spec: str) -> dict:
    """Parse "n=2000,d=32,classes=4,separation=2.0" style dataset specs."""
    out = {}
    for part in spec.split(","):
        if "=" not in part:
            raise click.BadParameter(f"expected key=value, got {part!r}")
        key, _, value = part.partition("=")
        key = key.strip()
        if key not in _SYNTH_KEYS:
            raise click.BadParameter(
                f"unknown synthetic key {key!r}; valid: {sorted(_SYNTH_KEYS)}"
            )
        try:
            out[key] = _SYNTH_KEYS[key](value.strip())
        except ValueError:
            raise click.BadParameter(
                f"{key}: cannot read {value.strip()!r} as {_SYNTH_KEYS[key].__name__}"
            )
    for required in ("n", "d", "classes"):
        if required not in out:
            raise click.BadParameter(f"synthetic spec needs {required}")
    return out


def _load_dataset(embeddings_path, manifest_path, synthetic):
    if synthetic is not None:
        if embeddings_path or manifest_path:
            raise click.BadParameter(
                "--synthetic replaces --embeddings/--manifest"
            )
        params = _parse_synthetic(synthetic)
        start = time.perf_counter()
        emb, manifest = generate_synthetic(
            seed=params.get("seed", 0),
            n=params["n"],
            d=params["d"],
            num_classes=params["classes"],
            separation=params.get("separation", 2.0),
            secondary_fraction=params.get("secondary", 0.0),
            holdout_fraction=params.get("holdout", 0.2),
            name=params.get("name", "synthetic"),
        )
        return emb, manifest, time.perf_counter() - start
    if not embeddings_path or not manifest_path:
        raise click.BadParameter(
            "give --embeddings and --manifest, or --synthetic"
        )
    start = time.perf_counter()
    emb = load_embeddings(embeddings_path)
    manifest = load_manifest(manifest_path)
    return emb, manifest, time.perf_counter() - start


def _read_config(path: str) -> SessionConfig:
    with open(path, encoding="utf-8") as handle:
        return SessionConfig.from_dict(json.load(handle))


def _write_run(out_dir: Path, record) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "record.json").write_text(record.to_json() + "\n", encoding="utf-8")
    (out_dir / "indices.csv").write_text(record.index_csv(), encoding="utf-8")
    (out_dir / "timing.csv").write_text(
        timing_csv(timing_table(record)), encoding="utf-8"
    )


@click.group()
def main():
    """Pool-based active learning with cheap-probe acquisition."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True))
@click.option("--synthetic", help="inline dataset, e.g. n=2000,d=32,classes=4")
@click.option("--out", "out_dir", required=True, type=click.Path())
def run(config_path, embeddings_path, manifest_path, synthetic, out_dir):
    """Run one oracle-labeled session and write its record."""
    config = _read_config(config_path)
    emb, manifest, ingest = _load_dataset(embeddings_path, manifest_path, synthetic)
    try:
        record = run_session(emb, manifest, config, ingest_seconds=ingest)
    except PrepalError as exc:
        raise click.ClickException(str(exc))
    _write_run(Path(out_dir), record)
    acc = "n/a" if record.final_accuracy is None else f"{record.final_accuracy:.4f}"
    click.echo(
        f"{config.scorer}/{config.protocol} seed={config.seed}: "
        f"final accuracy {acc}, {len(record.labeled_final)} labels, "
        f"record in {out_dir}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True))
@click.option("--synthetic", help="inline dataset, e.g. n=2000,d=32,classes=4")
@click.option("--scorers", required=True, help="comma-separated scorer names")
@click.option("--protocols", "protocol_list", default="PRepAL",
              help=f"comma-separated subset of {PROTOCOLS}")
@click.option("--seeds", default="0", help="comma-separated integer seeds")
@click.option("--out", "out_dir", required=True, type=click.Path())
def grid(config_path, embeddings_path, manifest_path, synthetic, scorers,
         protocol_list, seeds, out_dir):
    """Sweep scorer x protocol x seed over one dataset."""
    base = _read_config(config_path)
    emb, manifest, ingest = _load_dataset(embeddings_path, manifest_path, synthetic)
    scorer_names = [s.strip() for s in scorers.split(",") if s.strip()]
    protocol_names = [p.strip() for p in protocol_list.split(",") if p.strip()]
    seed_values = [int(s) for s in seeds.split(",")]
    root = Path(out_dir)
    done = skipped = 0
    for scorer in scorer_names:
        for protocol in protocol_names:
            if scorer == "egl" and protocol == "AL_FT":
                click.echo("skip egl/AL_FT: gradient scores need the linear probe")
                skipped += 1
                continue
            for seed in seed_values:
                config = dataclasses.replace(
                    base, scorer=scorer, protocol=protocol, seed=seed
                )
                try:
                    record = run_session(emb, manifest, config,
                                         ingest_seconds=ingest)
                except PrepalError as exc:
                    raise click.ClickException(
                        f"{scorer}/{protocol}/seed{seed}: {exc}"
                    )
                cell = root / f"{scorer}__{protocol}__seed{seed}"
                _write_run(cell, record)
                acc = ("n/a" if record.final_accuracy is None
                       else f"{record.final_accuracy:.4f}")
                click.echo(f"{cell.name}: final accuracy {acc}")
                done += 1
    click.echo(f"{done} runs written under {out_dir} ({skipped} skipped)")


@main.command()
@click.option("--runs", "runs_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--reference", default=None,
              help="also write index-overlap curves against this protocol")
def report(runs_dir, out_dir, reference):
    """Aggregate a directory of runs into curves, summary, and timing CSVs."""
    try:
        grid_data = load_grid(runs_dir)
        rows = curve(grid_data, "accuracy")
        if reference is not None:
            rows += curve(grid_data, "jaccard_vs_reference", reference=reference)
        summary_rows = summary(grid_data)
    except PrepalError as exc:
        raise click.ClickException(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves.csv").write_text(curves_csv(rows), encoding="utf-8")
    (out / "summary.csv").write_text(summary_csv(summary_rows), encoding="utf-8")
    tables = [timing_table(rec) for rec in grid_data.records]
    mean_table = {
        phase: sum(t[phase] for t in tables) / len(tables)
        for phase in tables[0]
    }
    (out / "timing.csv").write_text(timing_csv(mean_table), encoding="utf-8")
    click.echo(
        f"wrote curves.csv ({len(rows)} rows), summary.csv "
        f"({len(summary_rows)} rows), timing.csv (mean of "
        f"{len(tables)} runs) to {out_dir}"
    )


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-root", default=None,
              help=f"state directory (default: ${DATA_ROOT_ENV} or .prepal-data)")
def serve(port, host, data_root):
    """Start the HTTP annotation service."""
    import uvicorn

    app = create_app(data_root)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()

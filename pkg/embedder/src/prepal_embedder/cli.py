"""Command line wrapper: CSV or JSONL in, embedding file + manifest out."""

import csv
import json
import os

import click

from prepal.errors import PrepalError

from .extract import extract


def read_rows(path, text_column, label_column):
    """(text, label-or-None) pairs from a .csv or .jsonl file."""
    ext = os.path.splitext(path)[1].lower()
    rows = []
    if ext == ".csv":
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames is None or text_column not in reader.fieldnames:
                raise click.BadParameter(
                    f"{path}: no {text_column!r} column in the CSV header"
                )
            has_label = label_column in (reader.fieldnames or [])
            for record in reader:
                label = record.get(label_column) if has_label else None
                rows.append((record[text_column], label or None))
    elif ext == ".jsonl":
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise click.BadParameter(
                        f"{path}:{lineno}: not valid JSON ({exc})"
                    )
                if text_column not in record:
                    raise click.BadParameter(
                        f"{path}:{lineno}: no {text_column!r} field"
                    )
                rows.append((record[text_column], record.get(label_column)))
    else:
        raise click.BadParameter(f"{path}: expected a .csv or .jsonl file")
    return rows


@click.command()
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV (with header) or JSONL of documents")
@click.option("--model", "model_dir", required=True,
              help="pretrained encoder: local directory or hub name")
@click.option("--embeddings-out", required=True, type=click.Path())
@click.option("--manifest-out", required=True, type=click.Path())
@click.option("--name", default=None,
              help="dataset name (default: input file stem)")
@click.option("--text-column", default="text", show_default=True)
@click.option("--label-column", default="label", show_default=True)
@click.option("--classes", "num_classes", type=int, default=None,
              help="class count when labels are absent or incomplete")
@click.option("--batch-size", default=32, show_default=True)
@click.option("--max-length", default=256, show_default=True)
@click.option("--include-special-tokens", is_flag=True,
              help="pool over special tokens too (excluded by default)")
def main(input_path, model_dir, embeddings_out, manifest_out, name,
         text_column, label_column, num_classes, batch_size, max_length,
         include_special_tokens):
    """Embed a text dataset for the active-learning engine.

    Each document becomes one row of the model's final hidden state,
    average pooled over its real tokens. Outputs load directly through
    the engine's dataset module.
    """
    rows = read_rows(input_path, text_column, label_column)
    if name is None:
        name = os.path.splitext(os.path.basename(input_path))[0]
    try:
        report = extract(
            rows, model_dir, embeddings_out, manifest_out,
            name=name, num_classes=num_classes,
            max_length=max_length, batch_size=batch_size,
            include_special_tokens=include_special_tokens,
        )
    except PrepalError as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"{report.n} documents x {report.d} dims -> {embeddings_out}"
    )
    if report.class_names:
        click.echo(f"classes: {', '.join(report.class_names)}")
    for row, reason in report.excluded:
        click.echo(f"excluded input row {row}: {reason}")


if __name__ == "__main__":
    main()

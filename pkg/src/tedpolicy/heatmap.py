"""Attention matrices as tab-separated text and SVG heatmaps.

The text files are the ground truth; the images are a convenience and need no
plotting library.
"""
from __future__ import annotations

from html import escape
from pathlib import Path

import numpy as np

CELL = 22
MASK_FILL = "#d9d9d9"


def turn_labels(dialogue):
    return [f"{t}:{turn.user_intent}" for t, turn in enumerate(dialogue.turns)]


def matrix_tsv(matrix, labels):
    """Rows are prediction turns, columns history turns."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (len(labels), len(labels)):
        raise ValueError(f"matrix {matrix.shape} does not match {len(labels)} labels")
    lines = ["turn\t" + "\t".join(labels)]
    for label, row in zip(labels, matrix):
        lines.append(label + "\t" + "\t".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_matrix_tsv(text):
    lines = text.strip("\n").split("\n")
    labels = lines[0].split("\t")[1:]
    rows = [[float(v) for v in line.split("\t")[1:]] for line in lines[1:]]
    return np.array(rows), labels


def _color(v):
    # white -> dark blue
    v = float(np.clip(v, 0.0, 1.0))
    r = round(255 * (1 - v) + 8 * v)
    g = round(255 * (1 - v) + 48 * v)
    b = round(255 * (1 - v) + 107 * v)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(matrix, labels, title=""):
    """Heatmap with the masked upper triangle greyed out."""
    matrix = np.asarray(matrix, dtype=np.float64)
    n = len(labels)
    margin = 8 + 7 * max((len(s) for s in labels), default=0)
    top = margin + (20 if title else 0)
    width = margin + n * CELL + 10
    height = top + n * CELL + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="monospace" font-size="11">']
    if title:
        out.append(f'<text x="4" y="14">{escape(title)}</text>')
    for i in range(n):
        y = top + i * CELL
        out.append(f'<text x="{margin - 4}" y="{y + CELL - 7}" text-anchor="end">{escape(labels[i])}</text>')
        x = margin + i * CELL + CELL - 7
        out.append(f'<text x="{x}" y="{top - 4}" transform="rotate(-90 {x} {top - 4})">'
                   f'{escape(labels[i])}</text>')
        for j in range(n):
            fill = MASK_FILL if j > i else _color(matrix[i, j])
            out.append(f'<rect x="{margin + j * CELL}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="{fill}" stroke="#ffffff"><title>{i},{j}: {matrix[i, j]:.4f}</title></rect>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_attention(prefix, maps, labels):
    """Write one TSV per layer/head plus their mean, and an SVG for the mean.

    Returns the written paths.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    maps = np.asarray(maps)
    paths = []
    for layer in range(maps.shape[0]):
        for head in range(maps.shape[1]):
            path = prefix.with_name(f"{prefix.name}.layer{layer}.head{head}.tsv")
            path.write_text(matrix_tsv(maps[layer, head], labels))
            paths.append(path)
    mean = maps.mean(axis=(0, 1))
    path = prefix.with_name(f"{prefix.name}.mean.tsv")
    path.write_text(matrix_tsv(mean, labels))
    paths.append(path)
    path = prefix.with_name(f"{prefix.name}.svg")
    path.write_text(render_svg(mean, labels, "attention, mean over layers and heads"))
    paths.append(path)
    return paths

"""Labeled spectra and their CSV / JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

CSV_FORMAT = "%.16e"


class Axis(NamedTuple):
    name: str
    unit: str
    values: np.ndarray


@dataclass
class SpectrumResult:
    """Numeric data on labeled axes; ``data.shape`` matches the axis lengths."""

    axes: list[Axis]
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = [Axis(a[0], a[1], np.asarray(a[2], dtype=float)) for a in self.axes]
        self.data = np.asarray(self.data, dtype=float)
        shape = tuple(len(a.values) for a in self.axes)
        if self.data.shape != shape:
            raise ValueError(f"data shape {self.data.shape} does not match axes {shape}")

    def axis(self, name: str) -> Axis:
        for a in self.axes:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_csv(self, path) -> None:
        """Write axes as leading columns and the data in column-major order.

        Metadata is written as ``# key: <json>`` header comments.
        """
        path = Path(path)
        grids = np.meshgrid(*[a.values for a in self.axes], indexing="ij")
        cols = [g.ravel(order="F") for g in grids] + [self.data.ravel(order="F")]
        table = np.column_stack(cols)
        header = [f"{k}: {json.dumps(v, sort_keys=True, default=_jsonable)}" for k, v in sorted(self.metadata.items())]
        header.append(",".join([f"{a.name} [{a.unit}]" for a in self.axes] + ["signal"]))
        np.savetxt(path, table, fmt=CSV_FORMAT, delimiter=",", header="\n".join(header), comments="# ")

    def to_dict(self) -> dict:
        return {
            "axes": [{"name": a.name, "unit": a.unit, "values": a.values.tolist()} for a in self.axes],
            "data": self.data.tolist(),
            "metadata": json.loads(json.dumps(self.metadata, sort_keys=True, default=_jsonable)),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumResult":
        axes = [Axis(a["name"], a["unit"], np.asarray(a["values"])) for a in d["axes"]]
        return cls(axes, np.asarray(d["data"]), d.get("metadata", {}))

    @classmethod
    def from_json(cls, path) -> "SpectrumResult":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_csv(cls, path) -> "SpectrumResult":
        lines = Path(path).read_text().splitlines()
        head = [ln[2:] for ln in lines if ln.startswith("# ")]
        metadata = {}
        for ln in head[:-1]:
            key, _, val = ln.partition(": ")
            metadata[key] = json.loads(val)
        names = head[-1].split(",")[:-1]
        table = np.loadtxt(path, delimiter=",", ndmin=2)
        axes = []
        for k, label in enumerate(names):
            name, _, unit = label.partition(" [")
            values = np.unique(table[:, k])
            axes.append(Axis(name, unit.rstrip("]"), values))
        shape = tuple(len(a.values) for a in axes)
        data = table[:, -1].reshape(shape, order="F")
        return cls(axes, data, metadata)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "__dict__"):
        return {k: v for k, v in vars(obj).items() if not k.startswith("_")}
    return str(obj)

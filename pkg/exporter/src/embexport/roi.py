"""ROI metadata and the selection-order rule shared with the engine.

Boxes arrive as a TSV metadata file, one record per detected box:
``image_id <TAB> x <TAB> y <TAB> w <TAB> h <TAB> class_name``.  Selection
order must agree with the engine's composer: regions whose class name is
mentioned in the question (case-insensitive whole word) come first, then
larger areas, then class name ascending, then input order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class Box:
    image_id: str
    x: float
    y: float
    w: float
    h: float
    class_name: str

    @property
    def area(self) -> float:
        return self.w * self.h


def read_boxes(path: Path | str) -> dict[str, list[Box]]:
    out: dict[str, list[Box]] = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ValueError(f"boxes line {lineno}: expected 6 tab-separated fields")
        image_id, x, y, w, h, class_name = parts
        out.setdefault(image_id, []).append(
            Box(image_id, float(x), float(y), float(w), float(h), class_name)
        )
    return out


def mentioned(class_name: str, question: str) -> bool:
    if not class_name:
        return False
    return re.search(rf"\b{re.escape(class_name)}\b", question, re.IGNORECASE) is not None


def order_boxes(boxes: list[Box], question: str, n_roi: int) -> list[Box]:
    """Top ``n_roi`` boxes in the engine's selection order."""
    indexed = list(enumerate(boxes))
    indexed.sort(
        key=lambda t: (not mentioned(t[1].class_name, question), -t[1].area, t[1].class_name, t[0])
    )
    return [b for _, b in indexed[:n_roi]]

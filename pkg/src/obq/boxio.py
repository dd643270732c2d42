"""JSON Lines box files: one object per line with cx, cy, w, h, theta and optional score, id."""
from __future__ import annotations

import json

from obq.geometry import OrientedBox

REQUIRED = ("cx", "cy", "w", "h", "theta")


class BoxFileError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


def parse_boxes(lines, path="<boxes>"):
    """Returns (boxes, ids). Blank lines are skipped; ids default to the 0-based record index."""
    boxes, ids = [], []
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BoxFileError(path, lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise BoxFileError(path, lineno, "expected a JSON object")
        missing = [k for k in REQUIRED if k not in obj]
        if missing:
            raise BoxFileError(path, lineno, f"missing keys {missing}")
        try:
            box = OrientedBox(*(float(obj[k]) for k in REQUIRED), score=obj.get("score"))
        except (TypeError, ValueError) as exc:
            raise BoxFileError(path, lineno, str(exc)) from None
        boxes.append(box)
        ids.append(obj.get("id", len(ids)))
    return boxes, ids


def read_boxes(path, allow_empty=False):
    with open(path) as fh:
        boxes, ids = parse_boxes(fh, str(path))
    if not boxes and not allow_empty:
        raise BoxFileError(str(path), 1, "no boxes in file")
    return boxes, ids


def box_to_dict(box: OrientedBox, box_id=None) -> dict:
    d = {"cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h, "theta": box.theta}
    if box.score is not None:
        d["score"] = box.score
    if box_id is not None:
        d["id"] = box_id
    return d


def write_boxes(path, boxes, ids=None):
    # json emits floats in shortest repr form, which round-trips exactly
    ids = ids if ids is not None else [None] * len(boxes)
    with open(path, "w") as fh:
        for box, i in zip(boxes, ids):
            fh.write(json.dumps(box_to_dict(box, i)) + "\n")

"""Axis-aligned boxes and overlap measures on plain floats."""

from dataclasses import dataclass


@dataclass
class BoundingBox:
    """(x_min, y_min, width, height) in pixels."""

    x_min: float
    y_min: float
    width: float
    height: float

    @property
    def x_max(self):
        return self.x_min + self.width

    @property
    def y_max(self):
        return self.y_min + self.height

    @property
    def center(self):
        return (self.x_min + 0.5 * self.width, self.y_min + 0.5 * self.height)

    @property
    def area(self):
        return max(0.0, self.width) * max(0.0, self.height)

    def as_xyxy(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def as_xywh(self):
        return (self.x_min, self.y_min, self.width, self.height)

    @staticmethod
    def from_xyxy(x0, y0, x1, y1):
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def clipped(self, width, height, min_side=1.0):
        """Clamp into a (width, height) frame, keeping at least min_side extent."""
        w = min(max(self.width, min_side), width)
        h = min(max(self.height, min_side), height)
        x = min(max(self.x_min, 0.0), width - w)
        y = min(max(self.y_min, 0.0), height - h)
        return BoundingBox(x, y, w, h)


def _safe_div(num, den):
    return num / den if den > 0.0 else 0.0


def intersection_area(a, b):
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a, b):
    """Intersection over union; degenerate unions count as zero overlap."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return _safe_div(inter, union)


def giou(a, b):
    """Generalized IoU: IoU minus the enclosing box's wasted fraction.

    1 for identical boxes, down to -1 as boxes separate; corner-touching
    unit boxes give exactly -0.5.
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    enclose_w = max(a.x_max, b.x_max) - min(a.x_min, b.x_min)
    enclose_h = max(a.y_max, b.y_max) - min(a.y_min, b.y_min)
    enclosure = enclose_w * enclose_h
    return _safe_div(inter, union) - _safe_div(enclosure - union, enclosure)

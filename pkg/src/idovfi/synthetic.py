"""Desk-scale data: anti-aliased moving shapes over a static textured background."""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .events import EventStream, log_intensity, read_events, simulate_events, write_events

SUPERSAMPLE = 4
DEFAULT_THRESHOLD = 0.2
EVENT_SUBSTEPS = 8


@dataclass
class Shape:
    kind: str  # "square" or "disc"
    center: tuple  # (x, y) at t = 0
    velocity: tuple  # pixels per frame interval
    size: float  # side length or diameter
    intensity: float
    accel: tuple = (0.0, 0.0)
    spin: float = 0.0  # radians per interval (squares only)

    def pose(self, t):
        cx = self.center[0] + self.velocity[0] * t + 0.5 * self.accel[0] * t * t
        cy = self.center[1] + self.velocity[1] * t + 0.5 * self.accel[1] * t * t
        return cx, cy, self.spin * t

    def to_dict(self):
        return {k: getattr(self, k) for k in ("kind", "center", "velocity", "size", "intensity", "accel", "spin")}


@dataclass
class Scene:
    background: np.ndarray
    shapes: list

    def render(self, t):
        h, w = self.background.shape
        s = SUPERSAMPLE
        offs = (np.arange(s) + 0.5) / s - 0.5
        ys = (np.arange(h)[:, None] + offs[None, :]).reshape(-1)
        xs = (np.arange(w)[:, None] + offs[None, :]).reshape(-1)
        py, px = np.meshgrid(ys, xs, indexing="ij")
        img = np.repeat(np.repeat(self.background, s, axis=0), s, axis=1)
        for shape in self.shapes:
            cx, cy, theta = shape.pose(t)
            dx, dy = px - cx, py - cy
            if shape.kind == "disc":
                inside = dx * dx + dy * dy <= (shape.size / 2) ** 2
            else:
                c, sn = np.cos(theta), np.sin(theta)
                inside = np.maximum(np.abs(c * dx + sn * dy), np.abs(-sn * dx + c * dy)) <= shape.size / 2
            img = np.where(inside, shape.intensity, img)
        return img.reshape(h, s, w, s).mean(axis=(1, 3))


@dataclass
class Sample:
    """Boundary frames, ground-truth intermediates and the events between."""

    frames: list  # [I0, ..., I1], (H, W) float arrays
    times: list  # normalised timestamps of ``frames``
    events: EventStream
    meta: dict = field(default_factory=dict)
    name: str = ""

    @property
    def I0(self):
        return self.frames[0]

    @property
    def I1(self):
        return self.frames[-1]

    @property
    def gt(self):
        return {t: f for t, f in zip(self.times[1:-1], self.frames[1:-1])}


def smooth_background(rng, h, w, lo=0.15, hi=0.55):
    coarse = rng.random((h // 8 + 2, w // 8 + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    img = (c[y0][:, x0] * (1 - fx) * (1 - fy) + c[y0][:, x0 + 1] * fx * (1 - fy)
           + c[y0 + 1][:, x0] * (1 - fx) * fy + c[y0 + 1][:, x0 + 1] * fx * fy)
    return lo + (hi - lo) * img


def simulate_through(scene, threshold=DEFAULT_THRESHOLD, substeps=EVENT_SUBSTEPS):
    """Events over [0, 1] from ``substeps`` rendered sub-intervals.

    The per-pixel reference level carries over between sub-intervals (it is the
    last crossed threshold), so sub-threshold changes are not lost at the seams.
    """
    ref = scene.render(0.0)
    parts = []
    for k in range(substeps):
        t0, t1 = k / substeps, (k + 1) / substeps
        nxt = scene.render(t1)
        chunk = simulate_events(ref, nxt, threshold, t0, t1)
        parts.append(chunk)
        lref, lnext = log_intensity(ref), log_intensity(nxt)
        steps = np.trunc((lnext - lref) / threshold)
        ref = np.exp(lref + steps * threshold)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return EventStream((0.0, 1.0), cat("x"), cat("y"), cat("p"), cat("t"))


def random_scene(rng, H, W, speed_range=(1.0, 4.0), n_shapes=(1, 2), accel=1.0):
    bg = smooth_background(rng, H, W)
    shapes = []
    for _ in range(rng.integers(n_shapes[0], n_shapes[1] + 1)):
        size = rng.uniform(0.15, 0.28) * min(H, W)
        speed = rng.uniform(*speed_range)
        ang = rng.uniform(0, 2 * np.pi)
        margin = size / 2 + speed_range[1] + 2
        center = (rng.uniform(margin, W - margin), rng.uniform(margin, H - margin))
        acc = tuple(rng.uniform(-accel, accel, size=2)) if speed > 0 else (0.0, 0.0)
        shapes.append(Shape(
            kind=str(rng.choice(["square", "disc"])),
            center=center,
            velocity=(speed * np.cos(ang), speed * np.sin(ang)),
            size=size,
            intensity=float(rng.uniform(0.65, 0.95)),
            accel=acc,
            spin=float(rng.uniform(-0.2, 0.2)) if speed > 0 else 0.0,
        ))
    return Scene(bg, shapes)


def render_sample(scene, times=(0.5,), threshold=DEFAULT_THRESHOLD, name=""):
    ts = [0.0] + sorted(times) + [1.0]
    frames = [scene.render(t).astype(np.float32) for t in ts]
    events = simulate_through(scene, threshold)
    meta = {"shapes": [s.to_dict() for s in scene.shapes]}
    return Sample(frames, ts, events, meta, name)


def make_synthetic_dataset(n, H=64, W=64, seed=0, times=(0.5,), speed_range=(1.0, 4.0),
                           threshold=DEFAULT_THRESHOLD):
    """``n`` samples of moving shapes with ground truth at ``times``."""
    rng = np.random.default_rng(seed)
    return [render_sample(random_scene(rng, H, W, speed_range), times, threshold, f"{seed:04d}_{i:05d}")
            for i in range(n)]


# ---------------------------------------------------------------------------
# on-disk layout: <root>/<seq>/im1.png ... imK.png + events.txt
# ---------------------------------------------------------------------------

def save_png(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float32) / 255.0


def frame_paths(folder):
    paths = sorted(Path(folder).glob("im*.png"), key=lambda p: int(p.stem[2:]))
    return paths


def write_sample(folder, sample):
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(sample.frames, start=1):
        save_png(folder / f"im{k}.png", frame)
    write_events(folder / "events.txt", sample.events)
    (folder / "meta.json").write_text(json.dumps({"times": sample.times, **sample.meta}, default=float))


def read_sample(folder):
    folder = Path(folder)
    frames = [load_png(p) for p in frame_paths(folder)]
    if len(frames) < 2:
        raise FileNotFoundError(f"{folder} has fewer than two frames")
    times = list(np.linspace(0.0, 1.0, len(frames)))
    meta = {}
    if (folder / "meta.json").exists():
        meta = json.loads((folder / "meta.json").read_text())
        times = meta.pop("times", times)
    ev = folder / "events.txt"
    events = read_events(ev) if ev.exists() else EventStream()
    return Sample(frames, times, events, meta, folder.name)


def list_sequences(root):
    root = Path(root)
    if not root.exists():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and any(p.glob("im*.png")))

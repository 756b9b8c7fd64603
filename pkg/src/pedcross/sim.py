"""Procedural generator of annotated driving sequences.

Scenes are rasterized top-down-free dashcam-style frames: a horizontal road
band with dashed lane markings, a scrolling background (sky, buildings,
sidewalks), and pedestrians as textured, gait-bobbing rectangles. Crossing
pedestrians wander along a sidewalk and then walk across the road band;
non-crossing pedestrians walk parallel, hesitate at the curb, or depart.

Two domains are supported. "virtual" stands in for the synthetic training
distribution; "proxy_real" applies a documented shift: different sprite and
background palettes, a different ego-motion spectrum, added sensor noise, a
brightness offset, and a faster pedestrian-speed distribution.

Everything is a pure function of (config, seed, GENERATOR_VERSION): every
random draw comes from named Philox streams, so datasets are bit-exact
across runs and platforms.
"""

from __future__ import annotations

import json
import os
import struct
import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import CompatibilityError, ConfigError, DataError, IOError_, RangeError
from .rng import named_stream, stream_key

GENERATOR_VERSION = 1
BLOB_MAGIC = b"VRPC"
BLOB_VERSION = 1

DOMAINS = ("virtual", "proxy_real")
WEATHER_CODES = ("sunny", "evening", "night", "rainy")
OCCASION_CODES = ("intersection", "main_road")

# configured offsets applied on top of the virtual-domain baseline
DOMAIN_SHIFT = {
    "virtual": {
        "brightness_offset": 0.0,
        "noise_sigma": 1.5,
        "speed_scale": 1.0,
        "sway_amp": (0.8, 2.0),
        "sway_freq": (0.010, 0.025),
    },
    "proxy_real": {
        "brightness_offset": 12.0,
        "noise_sigma": 6.5,
        "speed_scale": 1.35,
        "sway_amp": (2.0, 4.5),
        "sway_freq": (0.040, 0.080),
    },
}

_WEATHER_NOISE = {"sunny": 0.0, "evening": 1.0, "night": 5.0, "rainy": 2.5}
_WEATHER_GAIN = {"sunny": 1.0, "evening": 0.68, "night": 0.38, "rainy": 0.80}


@dataclass(frozen=True)
class ScenarioConfig:
    domain: str
    weather_code: str
    occasion_code: str
    n_pedestrians: int
    crossing: bool
    seed: int
    frame_size: tuple = (64, 64)
    sequence_len: int | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.weather_code not in WEATHER_CODES:
            raise ConfigError(f"unknown weather_code {self.weather_code!r}")
        if self.occasion_code not in OCCASION_CODES:
            raise ConfigError(f"unknown occasion_code {self.occasion_code!r}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be a 64-bit unsigned value, got {self.seed}")
        h, w = self.frame_size
        if not (32 <= h <= 512 and 32 <= w <= 512):
            raise ConfigError(f"frame_size must be within [32,512]^2, got {self.frame_size}")
        if self.crossing:
            if self.n_pedestrians != 1:
                raise ConfigError("crossing scenarios contain exactly one pedestrian")
        elif not (1 <= self.n_pedestrians <= 3):
            raise ConfigError("non-crossing scenarios contain 1..3 pedestrians")
        if self.sequence_len is None:
            object.__setattr__(self, "sequence_len", 200 if self.crossing else 100)
        if self.sequence_len < 8:
            raise ConfigError(f"sequence_len too small: {self.sequence_len}")
        object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))


@dataclass
class PedestrianTrack:
    centers: np.ndarray  # [L,2] float32, (x, y) image coordinates
    boxes: np.ndarray  # [L,4] float32, (cx, cy, h, w) pixels
    crossing: bool
    crossing_frame: int | None
    gender: int
    age: int

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float32)
        self.boxes = np.asarray(self.boxes, dtype=np.float32)
        if self.crossing and self.crossing_frame is None:
            raise DataError("crossing track without a crossing_frame")
        if self.crossing_frame is not None and not (0 <= self.crossing_frame < len(self.centers)):
            raise DataError("crossing_frame outside the sequence")


@dataclass
class AnnotatedSequence:
    frames: np.ndarray  # [L,H,W,3] uint8
    tracks: list
    config: ScenarioConfig
    version: int = GENERATOR_VERSION


@dataclass
class Layout:
    road_top: float
    road_bottom: float
    sidewalk_h: float
    off_x: np.ndarray  # per-frame horizontal camera offset
    off_y: np.ndarray  # per-frame vertical camera offset
    dash_phase: np.ndarray  # per-frame forward-motion phase of lane dashes
    noise_sigma: float
    brightness: float
    gain: float


def sample_attributes(seed: int, crossing: bool) -> tuple:
    """Per-sequence categorical attributes, re-derivable from the seed alone."""
    rng = named_stream(seed, "attrs")
    weather = WEATHER_CODES[int(rng.integers(len(WEATHER_CODES)))]
    occasion = OCCASION_CODES[int(rng.integers(len(OCCASION_CODES)))]
    n_peds = 1 if crossing else 1 + int(rng.integers(3))
    return weather, occasion, n_peds


def scenario_layout(config: ScenarioConfig) -> Layout:
    h, w = config.frame_size
    length = config.sequence_len
    shift = DOMAIN_SHIFT[config.domain]
    rng = named_stream(config.seed, "layout")
    road_top = h * rng.uniform(0.45, 0.62)
    band = h * rng.uniform(0.20, 0.30)
    road_bottom = min(road_top + band, 0.92 * h)
    sidewalk_h = max(2.0, 0.06 * h)
    t = np.arange(length)
    amp = rng.uniform(*shift["sway_amp"]) * (h / 64.0)
    freq = rng.uniform(*shift["sway_freq"])
    phase = rng.uniform(0, 2 * np.pi)
    off_x = amp * np.sin(2 * np.pi * freq * t + phase)
    off_y = 0.4 * amp * np.sin(2 * np.pi * freq * 1.7 * t + phase * 0.5)
    if config.domain == "proxy_real":
        jitter = named_stream(config.seed, "layout", "jitter")
        off_x = off_x + jitter.normal(0, 0.35, length)
        off_y = off_y + jitter.normal(0, 0.25, length)
    dash_speed = rng.uniform(1.2, 2.8) * (w / 64.0)
    dash_phase = dash_speed * t.astype(np.float64)
    noise = _WEATHER_NOISE[config.weather_code] + shift["noise_sigma"]
    return Layout(
        road_top=float(road_top),
        road_bottom=float(road_bottom),
        sidewalk_h=float(sidewalk_h),
        off_x=off_x,
        off_y=off_y,
        dash_phase=dash_phase,
        noise_sigma=float(noise),
        brightness=float(shift["brightness_offset"]),
        gain=_WEATHER_GAIN[config.weather_code],
    )


def ego_offsets(config: ScenarioConfig) -> np.ndarray:
    """Per-frame (dx, dy) camera displacement; frame 0 gets (0, 0)."""
    lay = scenario_layout(config)
    dx = np.diff(lay.off_x, prepend=lay.off_x[0])
    dy = np.diff(lay.off_y, prepend=lay.off_y[0])
    return np.stack([dx, dy], axis=1)


def road_band_at(layout: Layout, t: int) -> tuple:
    """Road-region row interval in image coordinates at frame t."""
    return layout.road_top + layout.off_y[t], layout.road_bottom + layout.off_y[t]


# -- trajectory planning ------------------------------------------------------------


def _bounded_wander(rng, length, scale):
    steps = rng.normal(0.0, scale, length)
    pos = np.cumsum(steps)
    return pos - pos[0]


def _gait_heights(rng, length, base_h):
    freq = rng.uniform(0.10, 0.25)
    phase = rng.uniform(0, 2 * np.pi)
    return base_h * (1.0 + 0.05 * np.sin(2 * np.pi * freq * np.arange(length) + phase))


def _plan_crossing(config, layout, rng):
    h, w = config.frame_size
    length = config.sequence_len
    shift = DOMAIN_SHIFT[config.domain]
    above = rng.random() < 0.5
    gap = rng.uniform(0.10, 0.28) * h
    y_side = layout.road_top - gap if above else layout.road_bottom + gap
    y_side = float(np.clip(y_side, 2.0, h - 3.0))
    gap = abs((layout.road_top if above else layout.road_bottom) - y_side)
    t_cross = int(rng.uniform(0.45, 0.90) * length)
    speed = rng.uniform(0.25, 0.70) * (h / 64.0) * shift["speed_scale"]
    n_app = int(np.clip(round(gap / speed), 6, max(6, t_cross - 4)))
    t_turn = max(1, t_cross - n_app)
    vy = (gap / (t_cross - t_turn)) * (1.0 if above else -1.0)

    x = np.empty(length)
    y = np.empty(length)
    x[0] = rng.uniform(0.15, 0.85) * w
    y[0] = y_side
    vx_base = rng.uniform(-0.25, 0.25) * (w / 64.0)
    wander_y = _bounded_wander(rng, length, 0.10)
    vx_noise = rng.normal(0.0, 0.04, length)
    for t in range(1, length):
        x[t] = x[t - 1] + vx_base + vx_noise[t]
        if t < t_turn:
            y[t] = y_side + np.clip(wander_y[t], -0.03 * h, 0.03 * h)
        else:
            y[t] = y[t - 1] + vy
    # keep the pre-approach phase strictly on the sidewalk side
    margin = 2.0
    if above:
        y[:t_turn] = np.minimum(y[:t_turn], layout.road_top - margin)
    else:
        y[:t_turn] = np.maximum(y[:t_turn], layout.road_bottom + margin)
    x = _reflect(x, 2.0, w - 3.0)
    y = np.clip(y, 2.0, h - 3.0)
    return x, y


def _plan_noncrossing(config, layout, rng):
    h, w = config.frame_size
    length = config.sequence_len
    shift = DOMAIN_SHIFT[config.domain]
    above = rng.random() < 0.5
    curb = layout.road_top if above else layout.road_bottom
    sign = 1.0 if above else -1.0
    margin = max(2.0, 0.03 * h)
    behavior = ("parallel", "hesitator", "departer")[int(rng.choice(3, p=[0.45, 0.35, 0.20]))]
    speed = rng.uniform(0.25, 0.70) * (h / 64.0) * shift["speed_scale"]

    x = np.empty(length)
    y = np.empty(length)
    x[0] = rng.uniform(0.12, 0.88) * w
    vx = rng.uniform(0.15, 0.55) * (w / 64.0) * rng.choice([-1.0, 1.0])
    vx_noise = rng.normal(0.0, 0.04, length)
    wander = _bounded_wander(rng, length, 0.08)

    if behavior == "parallel":
        gap = rng.uniform(0.10, 0.30) * h
        y_base = curb - sign * gap
        y[:] = y_base + np.clip(wander, -0.02 * h, 0.02 * h)
        x = x[0] + np.cumsum(np.full(length, vx) + vx_noise)
    elif behavior == "hesitator":
        gap0 = rng.uniform(0.18, 0.32) * h
        stop_gap = rng.uniform(0.035, 0.09) * h
        t_go = max(1, int(rng.uniform(0.10, 0.35) * length))
        n_app = max(4, int(round((gap0 - stop_gap) / speed)))
        t_stop = min(length - 1, t_go + n_app)
        retreat = rng.random() < 0.5
        t_retreat = int(rng.uniform(0.70, 0.92) * length) if retreat else length
        y0 = curb - sign * gap0
        for t in range(length):
            if t < t_go:
                y[t] = y0 + np.clip(wander[t], -0.02 * h, 0.02 * h)
            elif t < t_stop:
                y[t] = y[t - 1] + sign * speed
            elif t < t_retreat:
                y[t] = curb - sign * stop_gap + np.clip(wander[t], -0.01 * h, 0.01 * h)
            else:
                y[t] = y[t - 1] - sign * speed * 0.7
        x = x[0] + np.cumsum(np.full(length, vx * 0.4) + vx_noise)
    else:  # departer
        gap0 = rng.uniform(0.05, 0.12) * h
        y0 = curb - sign * gap0
        t_leave = max(1, int(rng.uniform(0.05, 0.30) * length))
        for t in range(length):
            if t < t_leave:
                y[t] = y0 + np.clip(wander[t], -0.01 * h, 0.01 * h)
            else:
                y[t] = y[t - 1] - sign * speed * 0.8
        x = x[0] + np.cumsum(np.full(length, vx * 0.6) + vx_noise)

    # never enter the road band
    if above:
        y = np.minimum(y, layout.road_top - margin)
    else:
        y = np.maximum(y, layout.road_bottom + margin)
    x = _reflect(x, 2.0, w - 3.0)
    y = np.clip(y, 2.0, h - 3.0)
    return x, y


def _reflect(arr, lo, hi):
    span = hi - lo
    folded = np.mod(arr - lo, 2 * span)
    folded = np.where(folded > span, 2 * span - folded, folded)
    return lo + folded


def _realized_crossing_frame(y_scene, layout) -> int | None:
    inside = (y_scene >= layout.road_top) & (y_scene <= layout.road_bottom)
    if not inside.any():
        return None
    first = int(np.argmax(inside))
    if first == 0:
        return 0
    return first


def plan_tracks(config: ScenarioConfig) -> list:
    """Plan all pedestrian tracks (image coordinates) without rendering."""
    layout = scenario_layout(config)
    h, w = config.frame_size
    length = config.sequence_len
    tracks = []
    for i in range(config.n_pedestrians):
        rng = named_stream(config.seed, "ped", i)
        base_h = float(np.exp(rng.uniform(np.log(7.5), np.log(0.62 * h))))
        aspect = rng.uniform(0.32, 0.42)
        gender = int(rng.integers(2))
        age = int(rng.integers(3))
        is_crosser = config.crossing and i == 0
        if is_crosser:
            x, y = _plan_crossing(config, layout, rng)
        else:
            x, y = _plan_noncrossing(config, layout, rng)
        crossing_frame = _realized_crossing_frame(y, layout)
        if is_crosser and crossing_frame is None:
            raise DataError("planned crossing track never entered the road band")
        if not is_crosser and crossing_frame is not None:
            raise DataError("non-crossing track entered the road band")
        heights = _gait_heights(rng, length, base_h)
        widths = aspect * heights
        x_img = np.clip(x + layout.off_x, 1.0, w - 2.0)
        y_img = np.clip(y + layout.off_y, 1.0, h - 2.0)
        centers = np.stack([x_img, y_img], axis=1)
        boxes = np.stack([x_img, y_img, heights, widths], axis=1)
        tracks.append(
            PedestrianTrack(
                centers=centers,
                boxes=boxes,
                crossing=bool(is_crosser),
                crossing_frame=crossing_frame if is_crosser else None,
                gender=gender,
                age=age,
            )
        )
    return tracks


# -- rasterization ------------------------------------------------------------------


def _palette(domain, rng):
    if domain == "virtual":
        return {
            "sky_top": np.array([150, 180, 220.0]),
            "sky_bot": np.array([205, 222, 240.0]),
            "wall": np.array([120, 118, 125.0]) + rng.uniform(-12, 12, 3),
            "sidewalk": np.array([172, 170, 163.0]),
            "ground": np.array([95, 100, 92.0]),
            "road": np.array([92, 92, 98.0]),
            "dash": np.array([225, 225, 212.0]),
            "shirt": np.array([[200, 60, 60], [60, 110, 200], [70, 170, 90], [210, 180, 60.0]]),
            "pants": np.array([[45, 45, 70], [70, 60, 50], [40, 70, 60.0]]),
            "skin": np.array([224, 190, 160.0]),
        }
    return {
        "sky_top": np.array([135, 150, 175.0]),
        "sky_bot": np.array([190, 195, 205.0]),
        "wall": np.array([105, 98, 96.0]) + rng.uniform(-18, 18, 3),
        "sidewalk": np.array([150, 147, 143.0]),
        "ground": np.array([82, 84, 80.0]),
        "road": np.array([78, 78, 82.0]),
        "dash": np.array([200, 198, 186.0]),
        "shirt": np.array([[150, 110, 100], [90, 95, 130], [120, 130, 110], [160, 140, 95.0]]),
        "pants": np.array([[60, 55, 65], [80, 75, 60], [55, 65, 75.0]]),
        "skin": np.array([205, 175, 150.0]),
    }


def _build_texture(config: ScenarioConfig, layout: Layout, rng) -> np.ndarray:
    """Static scene texture, twice the frame width for wrap-around scrolling."""
    h, w = config.frame_size
    tw = 2 * w
    pal = _palette(config.domain, rng)
    tex = np.empty((h, tw, 3), dtype=np.float32)
    road_top = int(round(layout.road_top))
    road_bottom = int(round(layout.road_bottom))
    sw = int(round(layout.sidewalk_h))
    sky_end = max(2, int(0.45 * road_top))
    rows = np.arange(sky_end, dtype=np.float32)[:, None, None] / max(1, sky_end - 1)
    tex[:sky_end] = pal["sky_top"] + rows * (pal["sky_bot"] - pal["sky_top"])
    tex[sky_end:road_top] = pal["wall"]
    n_buildings = int(rng.integers(6, 13))
    for _ in range(n_buildings):
        x0 = int(rng.integers(0, tw))
        bw = int(rng.integers(max(3, w // 12), max(4, w // 4)))
        top = int(rng.integers(sky_end, max(sky_end + 1, road_top - sw - 1)))
        color = pal["wall"] + rng.uniform(-30, 30, 3)
        x1 = min(tw, x0 + bw)
        tex[top : road_top - sw, x0:x1] = color
    if road_top - sw > 0:
        tex[max(0, road_top - sw) : road_top] = pal["sidewalk"]
    tex[road_top:road_bottom] = pal["road"]
    if road_bottom < h:
        tex[road_bottom : min(h, road_bottom + sw)] = pal["sidewalk"]
        tex[min(h, road_bottom + sw) :] = pal["ground"]
    if config.occasion_code == "intersection":
        xc = int(rng.uniform(0.25, 0.75) * tw)
        half = max(3, int(0.10 * w))
        tex[:road_top, max(0, xc - half) : min(tw, xc + half)] = pal["road"] * 1.06
    tex += rng.normal(0, 2.0 if config.domain == "virtual" else 4.5, tex.shape)
    return tex, pal


def _rain_mask(config, rng) -> np.ndarray:
    h, w = config.frame_size
    mask = np.zeros((h, w), dtype=np.float32)
    n = max(6, int(0.004 * h * w))
    for _ in range(n):
        x0 = int(rng.integers(0, w))
        y0 = int(rng.integers(0, h))
        length = int(rng.integers(4, 10))
        ys = (y0 + np.arange(length)) % h
        xs = (x0 + np.arange(length) // 3) % w
        mask[ys, xs] = 1.0
    return mask


def _draw_pedestrian(img, track, t, pal, sprite_rng, domain):
    h, w = img.shape[:2]
    cx, cy, bh, bw = track.boxes[t]
    half_h, half_w = bh / 2.0, bw / 2.0
    r0 = int(np.clip(np.floor(cy - half_h), 0, h - 1))
    r1 = int(np.clip(np.ceil(cy + half_h), 1, h))
    c0 = int(np.clip(np.floor(cx - half_w), 0, w - 1))
    c1 = int(np.clip(np.ceil(cx + half_w), 1, w))
    if r1 <= r0 or c1 <= c0:
        return
    rows = r1 - r0
    head = max(1, int(0.16 * rows))
    torso = max(1, int(0.44 * rows))
    img[r0 : r0 + head, c0:c1] = pal["skin"] * track.sprite_tone
    img[r0 + head : r0 + head + torso, c0:c1] = track.sprite_shirt
    img[r0 + head + torso : r1, c0:c1] = track.sprite_pants
    if domain == "proxy_real":
        img[r0:r1, c0:c1] += sprite_rng.normal(0, 9.0, (r1 - r0, c1 - c0, 3))


def generate_scenario(config: ScenarioConfig) -> AnnotatedSequence:
    """Render the full annotated sequence for one scenario config."""
    layout = scenario_layout(config)
    tracks = plan_tracks(config)
    h, w = config.frame_size
    length = config.sequence_len
    scene_rng = named_stream(config.seed, "scene")
    tex, pal = _build_texture(config, layout, scene_rng)
    rain = _rain_mask(config, scene_rng) if config.weather_code == "rainy" else None

    # per-track sprite appearance, fixed per sequence
    for i, track in enumerate(tracks):
        srng = named_stream(config.seed, "sprite", i)
        track.sprite_shirt = pal["shirt"][int(srng.integers(len(pal["shirt"])))]
        track.sprite_pants = pal["pants"][int(srng.integers(len(pal["pants"])))]
        track.sprite_tone = srng.uniform(0.85, 1.1)

    render_rng = named_stream(config.seed, "render")
    road_top = int(round(layout.road_top))
    road_bottom = int(round(layout.road_bottom))
    dash_row = (road_top + road_bottom) // 2
    cols = np.arange(w)
    frames = np.empty((length, h, w, 3), dtype=np.uint8)
    tw = tex.shape[1]
    rows_idx = np.arange(h)

    for t in range(length):
        off_x = int(round(layout.off_x[t]))
        off_y = int(round(layout.off_y[t]))
        sample_cols = np.mod(cols - off_x, tw)
        img = tex[:, sample_cols].copy()
        # dashed center line, advancing with forward motion and panning with the camera
        phase = int(round(layout.dash_phase[t])) - off_x
        dash_on = ((cols + phase) % max(8, w // 5)) < max(3, w // 14)
        for dr in range(max(1, h // 64)):
            row = dash_row + dr
            if road_top < row < road_bottom:
                img[row, dash_on] = pal["dash"]
        # vertical camera shift with edge clamping
        img = img[np.clip(rows_idx - off_y, 0, h - 1)]
        for track in tracks:
            _draw_pedestrian(img, track, t, pal, render_rng, config.domain)
        img = img * layout.gain
        if config.weather_code == "evening":
            img[..., 0] *= 1.18
            img[..., 2] *= 0.85
        elif config.weather_code == "night":
            img[..., 2] *= 1.25
        elif config.weather_code == "rainy" and rain is not None:
            streaks = np.roll(rain, (3 * t) % h, axis=0)
            img = img * 0.92 + streaks[..., None] * 46.0
        img += layout.brightness
        img += render_rng.normal(0, layout.noise_sigma, img.shape)
        frames[t] = np.clip(img, 0, 255).astype(np.uint8)

    return AnnotatedSequence(frames=frames, tracks=tracks, config=config)


# -- labels ---------------------------------------------------------------------------


def crossing_label(track: PedestrianTrack, obs_end: int, ttc: tuple) -> int:
    """1 iff the track's crossing frame falls in (obs_end+lo, obs_end+hi]."""
    lo, hi = int(ttc[0]), int(ttc[1])
    if not (0 < lo < hi):
        raise ConfigError(f"ttc window must satisfy 0 < lo < hi, got {ttc}")
    n = len(track.centers)
    if obs_end < 0 or obs_end + hi >= n:
        raise RangeError(f"prediction window (obs_end={obs_end}, hi={hi}) exceeds sequence of {n}")
    cf = track.crossing_frame
    if cf is None:
        return 0
    return int(obs_end + lo < cf <= obs_end + hi)


def window_excluded(track: PedestrianTrack, obs_end: int, ttc: tuple) -> bool:
    """Windows where crossing happens at or before obs_end+lo are not sampled."""
    cf = track.crossing_frame
    return cf is not None and cf <= obs_end + int(ttc[0])


# -- binary blob format ------------------------------------------------------------------

_TRACK_HEADER_FLOATS = 4  # crossing flag, crossing_frame (-1 if none), gender, age
_TRACK_FRAME_FLOATS = 6  # cx, cy, box cx, box cy, box h, box w


def write_sequence_blob(path, seq: AnnotatedSequence):
    length, h, w, _ = seq.frames.shape
    parts = [struct.pack("<4sIIIII", BLOB_MAGIC, BLOB_VERSION, length, h, w, len(seq.tracks))]
    parts.append(np.ascontiguousarray(seq.frames).tobytes())
    for track in seq.tracks:
        head = np.array(
            [
                1.0 if track.crossing else 0.0,
                -1.0 if track.crossing_frame is None else float(track.crossing_frame),
                float(track.gender),
                float(track.age),
            ],
            dtype="<f4",
        )
        body = np.empty((length, _TRACK_FRAME_FLOATS), dtype="<f4")
        body[:, 0:2] = track.centers
        body[:, 2:6] = track.boxes
        parts.append(head.tobytes())
        parts.append(body.tobytes())
    _atomic_write_bytes(path, b"".join(parts))


def read_sequence_blob(path):
    """Returns (frames, tracks, header dict). Raises on any malformed layout."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IOError_(f"cannot read sequence blob {path}: {exc}") from exc
    if len(raw) < 24:
        raise CompatibilityError(f"sequence blob truncated: {path}")
    magic, version, length, h, w, n_tracks = struct.unpack_from("<4sIIIII", raw, 0)
    if magic != BLOB_MAGIC:
        raise CompatibilityError(f"bad magic {magic!r} in {path}")
    if version != BLOB_VERSION:
        raise CompatibilityError(f"unsupported blob version {version} in {path}")
    frame_bytes = length * h * w * 3
    track_bytes = 4 * (_TRACK_HEADER_FLOATS + length * _TRACK_FRAME_FLOATS)
    expected = 24 + frame_bytes + n_tracks * track_bytes
    if len(raw) != expected:
        raise CompatibilityError(
            f"sequence blob has {len(raw)} bytes, expected {expected}: {path}"
        )
    frames = np.frombuffer(raw, dtype=np.uint8, count=frame_bytes, offset=24).reshape(
        length, h, w, 3
    )
    tracks = []
    offset = 24 + frame_bytes
    for _ in range(n_tracks):
        head = np.frombuffer(raw, dtype="<f4", count=_TRACK_HEADER_FLOATS, offset=offset)
        offset += 4 * _TRACK_HEADER_FLOATS
        body = np.frombuffer(
            raw, dtype="<f4", count=length * _TRACK_FRAME_FLOATS, offset=offset
        ).reshape(length, _TRACK_FRAME_FLOATS)
        offset += 4 * length * _TRACK_FRAME_FLOATS
        cf = None if head[1] < 0 else int(head[1])
        tracks.append(
            PedestrianTrack(
                centers=body[:, 0:2].copy(),
                boxes=body[:, 2:6].copy(),
                crossing=bool(head[0] > 0.5),
                crossing_frame=cf,
                gender=int(head[2]),
                age=int(head[3]),
            )
        )
    header = {"sequence_len": length, "frame_size": (h, w), "n_tracks": n_tracks}
    return frames.copy(), tracks, header


def _atomic_write_bytes(path, blob: bytes):
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise IOError_(f"cannot write {path}: {exc}") from exc


# -- dataset export -------------------------------------------------------------------------


@dataclass
class Manifest:
    generator_version: int
    config: dict
    sequences: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "Manifest":
        doc = json.loads(text)
        return Manifest(
            generator_version=doc["generator_version"],
            config=doc["config"],
            sequences=doc["sequences"],
        )

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def profile(self) -> dict:
        """Provenance-relevant generation profile (excludes counts and seed)."""
        return {
            "generator_version": self.generator_version,
            "domain": self.config["domain"],
            "frame_size": list(self.config["frame_size"]),
            "crossing_len": self.config["crossing_len"],
        }


def manifest_path(dataset_dir) -> str:
    return os.path.join(dataset_dir, "manifest")


def load_manifest(dataset_dir) -> Manifest:
    path = manifest_path(dataset_dir)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return Manifest.from_json(fh.read())
    except OSError as exc:
        raise IOError_(f"cannot read manifest {path}: {exc}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise CompatibilityError(f"malformed manifest {path}: {exc}") from exc


def sequence_config(manifest: Manifest, entry: dict) -> ScenarioConfig:
    crossing = bool(entry["label"])
    weather, occasion, n_peds = sample_attributes(entry["seed"], crossing)
    base_len = manifest.config["crossing_len"]
    return ScenarioConfig(
        domain=entry["domain"],
        weather_code=weather,
        occasion_code=occasion,
        n_pedestrians=n_peds,
        crossing=crossing,
        seed=entry["seed"],
        frame_size=tuple(manifest.config["frame_size"]),
        sequence_len=base_len if crossing else base_len // 2,
    )


def load_sequence(dataset_dir, manifest: Manifest, entry: dict) -> AnnotatedSequence:
    frames, tracks, header = read_sequence_blob(os.path.join(dataset_dir, entry["path"]))
    config = sequence_config(manifest, entry)
    if header["sequence_len"] != config.sequence_len or header["frame_size"] != config.frame_size:
        raise CompatibilityError(
            f"blob geometry {header} disagrees with manifest for sequence {entry['id']}"
        )
    return AnnotatedSequence(frames=frames, tracks=tracks, config=config)


def export_dataset(
    out_dir,
    n_crossing: int,
    n_noncrossing: int,
    domain: str,
    base_seed: int,
    frame_size=(64, 64),
    crossing_len: int = 200,
) -> Manifest:
    """Generate and write a dataset; returns the manifest (also written).

    Sequence i is crossing iff i < n_crossing; each derives its own child
    seed from (base_seed, i), so content is independent of generation order.
    """
    if n_crossing < 1:
        raise ConfigError("n_crossing must be >= 1 (degenerate class otherwise)")
    if n_noncrossing < 1:
        raise ConfigError("n_noncrossing must be >= 1 (degenerate class otherwise)")
    if domain not in DOMAINS:
        raise ConfigError(f"unknown domain {domain!r}")
    if crossing_len % 2 != 0:
        raise ConfigError("crossing_len must be even to keep the 2:1 length ratio")
    data_dir = os.path.join(out_dir, "data")
    try:
        os.makedirs(data_dir, exist_ok=True)
    except OSError as exc:
        raise IOError_(f"cannot create dataset dir {out_dir}: {exc}") from exc

    manifest = Manifest(
        generator_version=GENERATOR_VERSION,
        config={
            "domain": domain,
            "base_seed": int(base_seed),
            "frame_size": [int(frame_size[0]), int(frame_size[1])],
            "crossing_len": int(crossing_len),
            "noncrossing_len": int(crossing_len) // 2,
            "n_crossing": int(n_crossing),
            "n_noncrossing": int(n_noncrossing),
        },
    )
    total = n_crossing + n_noncrossing
    for i in range(total):
        crossing = i < n_crossing
        seed_i = stream_key(base_seed, "sequence", i) % (2**63)
        weather, occasion, n_peds = sample_attributes(seed_i, crossing)
        config = ScenarioConfig(
            domain=domain,
            weather_code=weather,
            occasion_code=occasion,
            n_pedestrians=n_peds,
            crossing=crossing,
            seed=seed_i,
            frame_size=frame_size,
            sequence_len=crossing_len if crossing else crossing_len // 2,
        )
        seq = generate_scenario(config)
        rel = f"data/seq{i:05d}.vrpc"
        write_sequence_blob(os.path.join(out_dir, rel), seq)
        manifest.sequences.append(
            {
                "id": f"seq{i:05d}",
                "path": rel,
                "label": int(crossing),
                "domain": domain,
                "weather": weather,
                "n_peds": n_peds,
                "seed": seed_i,
            }
        )
    _atomic_write_bytes(manifest_path(out_dir), manifest.to_json().encode())
    return manifest

"""Flat ``key = value`` configuration files for the whole pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .floor import FloorConfig
from .loop_closure import LoopConfig
from .prefilter import PrefilterConfig
from .pretracker import PretrackerConfig
from .registration import RegistrationConfig
from .scan_context import ScanContextParams
from .tracker import KeyframeCriteria


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class PipelineConfig:
    prefilter: PrefilterConfig = field(default_factory=PrefilterConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    pretracker: PretrackerConfig = field(default_factory=PretrackerConfig)
    pretracker_enabled: bool = True
    keyframes: KeyframeCriteria = field(default_factory=KeyframeCriteria)
    floor: FloorConfig = field(default_factory=FloorConfig)
    floor_enabled: bool = True
    loop: LoopConfig = field(default_factory=LoopConfig)
    scan_context: ScanContextParams = field(default_factory=ScanContextParams)
    optimize_every_n_keyframes: int = 3
    incline_threshold_deg: float = 5.0
    map_resolution: float = 0.25
    streaming_queue_capacity: int = 32

    @staticmethod
    def from_file(path: str) -> "PipelineConfig":
        with open(path) as f:
            return PipelineConfig.from_dict(parse_config_text(f.read()))

    @staticmethod
    def from_dict(kv: Dict[str, str]) -> "PipelineConfig":
        cfg = PipelineConfig()
        b = _Binder(kv)
        # pre-filterer
        b.str("downsample_method", cfg.prefilter, "downsample_method")
        b.flt("downsample_resolution", cfg.prefilter, "downsample_resolution")
        b.str("outlier_removal_method", cfg.prefilter, "outlier_method")
        b.flt("radius", cfg.prefilter, "radius")
        b.int("min_neighbors", cfg.prefilter, "min_neighbors")
        # scan matching
        b.str("registration_method", cfg.registration, "method")
        b.int("max_iterations", cfg.registration, "max_iterations")
        b.flt("transformation_epsilon", cfg.registration, "transformation_epsilon")
        b.flt("max_correspondence_distance", cfg.registration,
              "max_correspondence_distance")
        # pre-tracker
        if "pretracker_enabled" in kv:
            cfg.pretracker_enabled = _parse_bool(kv["pretracker_enabled"])
        b.flt("phase1_keep_fraction", cfg.pretracker, "phase1_keep_fraction")
        b.flt("phase2_keep_fraction", cfg.pretracker, "phase2_keep_fraction")
        b.int("large_cloud_threshold", cfg.pretracker, "large_cloud_threshold")
        # tracker
        b.flt("keyframe_delta_trans", cfg.keyframes, "delta_trans")
        b.flt("keyframe_delta_angle", cfg.keyframes, "delta_angle")
        b.flt("keyframe_delta_time", cfg.keyframes, "delta_time")
        # floor detector
        if "floor_enabled" in kv:
            cfg.floor_enabled = _parse_bool(kv["floor_enabled"])
        b.str("floor_mode", cfg.floor, "mode")
        b.flt("floor_clip_min_z", cfg.floor, "clip_min_z")
        b.flt("floor_clip_max_z", cfg.floor, "clip_max_z")
        if "floor_normal_max_angle" in kv:  # degrees in the file
            cfg.floor.normal_vertical_max_angle = np.deg2rad(
                float(kv["floor_normal_max_angle"]))
        b.flt("floor_ransac_threshold", cfg.floor, "ransac_inlier_threshold")
        b.flt("floor_min_inlier_fraction", cfg.floor, "min_inlier_fraction")
        b.flt("floor_rough_clip_radius", cfg.floor, "rough_clip_radius")
        # loop detector
        b.flt("loop_search_radius", cfg.loop, "search_radius")
        b.flt("loop_min_accum_distance", cfg.loop, "min_accumulated_distance")
        b.int("loop_top_k", cfg.loop, "top_k")
        b.flt("loop_fitness_threshold", cfg.loop, "fitness_accept_threshold")
        b.int("sc_rings", cfg.scan_context, "rings")
        b.int("sc_sectors", cfg.scan_context, "sectors")
        b.flt("sc_max_range", cfg.scan_context, "max_range")
        # graph
        if "optimize_every_n_keyframes" in kv:
            cfg.optimize_every_n_keyframes = int(kv["optimize_every_n_keyframes"])
        if "incline_threshold_deg" in kv:
            cfg.incline_threshold_deg = float(kv["incline_threshold_deg"])
        if "map_resolution" in kv:
            cfg.map_resolution = float(kv["map_resolution"])
        b.check_consumed()
        return cfg


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


class _Binder:
    """Applies known keys onto config objects and tracks unknown ones."""

    def __init__(self, kv: Dict[str, str]):
        self.kv = kv
        self.consumed = {"pretracker_enabled", "floor_enabled",
                         "optimize_every_n_keyframes", "incline_threshold_deg",
                         "floor_normal_max_angle", "map_resolution"}

    def _set(self, key, obj, attr, conv):
        self.consumed.add(key)
        if key in self.kv:
            setattr(obj, attr, conv(self.kv[key]))

    def str(self, key, obj, attr):
        self._set(key, obj, attr, lambda v: v)

    def flt(self, key, obj, attr):
        self._set(key, obj, attr, float)

    def int(self, key, obj, attr):
        self._set(key, obj, attr, int)

    def check_consumed(self):
        unknown = set(self.kv) - self.consumed
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

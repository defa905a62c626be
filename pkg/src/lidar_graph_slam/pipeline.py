"""End-to-end pipeline wiring and batch / realtime-simulation drivers.

Topology: raw scans fan out to the pre-filterer and the pre-tracker on
separate workers; filtered clouds fan out to the floor detector and the
tracker; the tracker joins filtered clouds, motion guesses, and floor
coefficients by timestamp, and runs the backend (pose graph building, loop
closure, optimization) inline so results are deterministic for a given
input sequence.
"""

from __future__ import annotations

import json
import os
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import PipelineConfig
from .evaluation import TimedPose, write_tum
from .floor import detect_floor
from .geometry import PointCloud, Pose
from .loop_closure import LoopDetector
from .mapping import build_map, write_ply
from .pose_graph import PoseGraph, default_information
from .prefilter import prefilter
from .pretracker import Pretracker
from .runtime import CoreWorker, DispatchQueue, Message, Notifier
from .tracker import Tracker


@dataclass
class FrameRecord:
    timestamp: float
    keyframe_index: int          # keyframe this frame is expressed against
    relative: Pose


@dataclass
class PipelineResult:
    trajectory: List[TimedPose]
    keyframe_count: int
    loop_count: int
    dropped_frames: int
    runtime_seconds: float
    stage_latencies: Dict[str, List[float]] = field(default_factory=dict)

    def latency_percentiles(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for stage, vals in self.stage_latencies.items():
            if vals:
                arr = np.array(vals)
                out[stage] = {p: float(np.percentile(arr, q))
                              for p, q in (("p50", 50), ("p90", 90), ("p99", 99))}
        return out


class SlamPipeline:
    """Owns all module instances and their wiring."""

    def __init__(self, cfg: Optional[PipelineConfig] = None):
        self.cfg = cfg or PipelineConfig()
        self.pretracker = Pretracker(self.cfg.pretracker)
        self.tracker = Tracker(self.cfg.registration, self.cfg.keyframes)
        self.loop_detector = LoopDetector(self.cfg.loop, self.cfg.registration,
                                          self.cfg.scan_context)
        self.graph = PoseGraph(np.deg2rad(self.cfg.incline_threshold_deg))
        self.keyframes = []
        self.frames: List[FrameRecord] = []
        self.loop_count = 0
        self.dropped_frames = 0
        self._kf_since_opt = 0
        self._floor_by_ts: Dict[float, object] = {}
        self._latencies: Dict[str, List[float]] = {
            "prefilter": [], "pretrack": [], "track": [], "floor": []}

    # -- per-stage handlers -------------------------------------------------

    def _do_prefilter(self, cloud: PointCloud) -> PointCloud:
        t0 = time.perf_counter()
        out = prefilter(cloud, self.cfg.prefilter)
        self._latencies["prefilter"].append(time.perf_counter() - t0)
        return out

    def _do_pretrack(self, cloud: PointCloud):
        t0 = time.perf_counter()
        res = self.pretracker.pretrack(cloud) if self.cfg.pretracker_enabled \
            else None
        self._latencies["pretrack"].append(time.perf_counter() - t0)
        return res

    def _do_floor(self, filtered: PointCloud):
        t0 = time.perf_counter()
        res = detect_floor(filtered, self.cfg.floor) if self.cfg.floor_enabled \
            else None
        self._latencies["floor"].append(time.perf_counter() - t0)
        return res

    def _do_track(self, filtered: PointCloud, guess: Optional[Pose],
                  floor_coeffs):
        t0 = time.perf_counter()
        result = self.tracker.track(filtered, guess)
        self.frames.append(FrameRecord(
            filtered.timestamp,
            result.new_keyframe.index if result.new_keyframe
            else self.tracker.keyframe.index,
            Pose.identity() if result.new_keyframe else result.relative))
        if result.new_keyframe is not None:
            self._on_keyframe(result.new_keyframe,
                              result.odometry_from_previous_keyframe,
                              floor_coeffs)
        self._latencies["track"].append(time.perf_counter() - t0)

    def _on_keyframe(self, kf, odometry_rel, floor_coeffs):
        node_id = self.graph.add_keyframe(kf, odometry_rel)
        self.keyframes.append(kf)
        if floor_coeffs is not None and floor_coeffs.valid:
            self.graph.add_floor(node_id, floor_coeffs)
        loop = None
        if len(self.keyframes) > 1:
            loop = self.loop_detector.detect(kf, self.keyframes)
        if loop is not None:
            self.graph.add_loop(loop, default_information("LOOP", loop.fitness))
            self.loop_count += 1
        self._kf_since_opt += 1
        if loop is not None or self._kf_since_opt >= \
                self.cfg.optimize_every_n_keyframes:
            self._optimize_and_sync()
            self._kf_since_opt = 0

    def _optimize_and_sync(self):
        if len(self.keyframes) < 2:
            return
        self.graph.optimize()
        for kf, pose in zip(self.keyframes, self.graph.keyframe_poses()):
            kf.pose = pose
        self.tracker.update_keyframe_pose(self.keyframes[-1].pose)

    # -- drivers ------------------------------------------------------------

    def run_batch(self, clouds) -> PipelineResult:
        """Run through the dispatch-queue topology, as fast as consumed."""
        return self._run(clouds, realtime=False)

    def run_realtime_sim(self, clouds) -> PipelineResult:
        """Feed at recorded timestamp rate with bounded queues."""
        return self._run(clouds, realtime=True)

    def _run(self, clouds, realtime: bool) -> PipelineResult:
        started = time.perf_counter()
        cap = self.cfg.streaming_queue_capacity if realtime else None
        policy = "drop_oldest" if realtime else "reject"

        q_raw_filter = DispatchQueue(cap, policy, "raw->prefilter")
        q_raw_pretrack = DispatchQueue(cap, policy, "raw->pretrack")
        q_filtered = DispatchQueue(name="filtered->tracker")
        q_guess = DispatchQueue(name="guess->tracker")
        q_floor = DispatchQueue(name="floor->tracker")
        filtered_notifier = Notifier("filtered")

        floor_in = DispatchQueue(name="filtered->floor")
        filtered_notifier.register(lambda m: q_filtered.enqueue(m))
        filtered_notifier.register(lambda m: floor_in.enqueue(m))

        def prefilter_handler(_q, msg: Message):
            out = self._do_prefilter(msg.payload)
            filtered_notifier.publish(out, timestamp=msg.payload.timestamp)

        def pretrack_handler(_q, msg: Message):
            res = self._do_pretrack(msg.payload)
            q_guess.put(res, timestamp=msg.payload.timestamp)

        def floor_handler(_q, msg: Message):
            res = self._do_floor(msg.payload)
            q_floor.put((msg.payload.timestamp, res))

        # tracker worker: join filtered + guess + floor by timestamp
        join: Dict[float, dict] = {}
        ready = deque()

        def _maybe_ready(ts):
            parts = join.get(ts)
            need_guess = self.cfg.pretracker_enabled
            need_floor = self.cfg.floor_enabled
            if parts is None or "filtered" not in parts:
                return
            if need_guess and "guess" not in parts:
                return
            if need_floor and "floor" not in parts:
                return
            ready.append(ts)

        def tracker_handler(q, msg: Message):
            if q is q_filtered:
                ts = msg.payload.timestamp
                join.setdefault(ts, {})["filtered"] = msg.payload
            elif q is q_guess:
                res = msg.payload
                ts = res.timestamp if res is not None else msg.timestamp
                join.setdefault(ts, {})["guess"] = res
            else:
                ts, coeffs = msg.payload
                join.setdefault(ts, {})["floor"] = coeffs
            _maybe_ready(ts)
            while ready:
                t = ready.popleft()
                parts = join.pop(t)
                pre = parts.get("guess")
                guess = pre.guess if pre is not None else None
                self._do_track(parts["filtered"], guess, parts.get("floor"))

        workers = [
            CoreWorker(q_raw_filter, prefilter_handler, "prefilter").start(),
            CoreWorker(q_raw_pretrack, pretrack_handler, "pretrack").start(),
            CoreWorker(floor_in, floor_handler, "floor").start(),
            CoreWorker([q_filtered, q_guess, q_floor], tracker_handler,
                       "tracker").start(),
        ]

        prev_ts = None
        for cloud in clouds:
            if realtime and prev_ts is not None:
                time.sleep(max(cloud.timestamp - prev_ts, 0.0))
            prev_ts = cloud.timestamp
            if realtime and (q_raw_filter.capacity is not None
                             and len(q_raw_filter) >= q_raw_filter.capacity):
                self.dropped_frames += 1
                continue
            if not realtime:
                # backpressure: do not run unboundedly ahead of the tracker
                while len(q_filtered) > 8 or len(q_raw_filter) > 8:
                    time.sleep(0.001)
            msg = Message(cloud, timestamp=cloud.timestamp)
            q_raw_filter.enqueue(msg)
            q_raw_pretrack.enqueue(msg)

        for w in workers:
            w.stop(drain=True, timeout=600.0)
        self._optimize_and_sync()

        trajectory = self._final_trajectory()
        return PipelineResult(trajectory, len(self.keyframes), self.loop_count,
                              self.dropped_frames,
                              time.perf_counter() - started,
                              self._latencies)

    def _final_trajectory(self) -> List[TimedPose]:
        """Per-frame world poses using the optimized keyframe poses."""
        out = []
        for fr in self.frames:
            kf_pose = self.keyframes[fr.keyframe_index].pose
            out.append(TimedPose(fr.timestamp, kf_pose @ fr.relative))
        return out


def run_pipeline(config_path: Optional[str], dataset_dir: str, mode: str,
                 out_dir: str, export_graph: bool = True) -> PipelineResult:
    """Load a dataset directory, run SLAM, and write all outputs."""
    from .kitti import discover_sequence, load_kitti_scan

    if config_path is not None:
        if not os.path.exists(config_path):
            raise FileNotFoundError(f"config file not found: {config_path}")
        cfg = PipelineConfig.from_file(config_path)
    else:
        cfg = PipelineConfig()
    if mode not in ("batch", "realtime-sim"):
        raise ValueError(f"unknown mode {mode!r}")
    seq = discover_sequence(dataset_dir)

    def scan_iter():
        for path, ts in zip(seq.scan_paths, seq.timestamps):
            if not os.path.exists(path):
                raise FileNotFoundError(f"scan file missing mid-sequence: {path}")
            yield load_kitti_scan(path, ts)

    pipeline = SlamPipeline(cfg)
    if mode == "batch":
        result = pipeline.run_batch(scan_iter())
    else:
        result = pipeline.run_realtime_sim(scan_iter())

    os.makedirs(out_dir, exist_ok=True)
    write_tum(os.path.join(out_dir, "trajectory.tum"), result.trajectory)
    if pipeline.keyframes:
        world_map = build_map(pipeline.keyframes,
                              [kf.pose for kf in pipeline.keyframes],
                              cfg.map_resolution)
        write_ply(os.path.join(out_dir, "map.ply"), world_map)
    if export_graph and pipeline.keyframes:
        pipeline.graph.export_g2o(os.path.join(out_dir, "graph.g2o"))
    report = {
        "mode": mode,
        "frames": len(result.trajectory),
        "keyframes": result.keyframe_count,
        "loops": result.loop_count,
        "dropped_frames": result.dropped_frames,
        "runtime_seconds": result.runtime_seconds,
        "latency_percentiles": result.latency_percentiles(),
        "ground_truth_projection": "local tangent plane at first fix",
    }
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2)
    return result

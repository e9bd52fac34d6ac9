"""scikit-learn style wrappers around the tracker and the shape decoder."""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import tracks
from ._validation import check_code
from .config import RunConfig
from .detection import FrameInput
from .evaluation import TrackBox, eval_mot
from .shape import decode_tsdf, fuse_codes, make_decoder, marching_cubes


class ObjectMapper(BaseEstimator):
    """Online object mapper with the estimator interface.

    ``fit`` consumes a frame sequence from an empty map; ``partial_fit`` and
    ``predict`` keep streaming into the current map. Parameters mirror
    :class:`objmap.config.RunConfig`.
    """

    def __init__(self, scene="outdoor", n_confirm=3, n_terminate=3, gate=None, pregate=False,
                 class_aware=True, meas_var=None, accel_noise=None, walk_noise=0.01,
                 transition=(0.6, 0.4, 0.4, 0.6), init_var=1.0, frame_rate=10.0, prune_iou=0.5,
                 stale_after=10, persist_static=True, depth_noise_ref=0.0, image_width=0,
                 image_height=0, elevation_min=-45.0, elevation_max=45.0, decoder="ellipsoid",
                 resolution=32, truncation=0.1):
        self.scene = scene
        self.n_confirm = n_confirm
        self.n_terminate = n_terminate
        self.gate = gate
        self.pregate = pregate
        self.class_aware = class_aware
        self.meas_var = meas_var
        self.accel_noise = accel_noise
        self.walk_noise = walk_noise
        self.transition = transition
        self.init_var = init_var
        self.frame_rate = frame_rate
        self.prune_iou = prune_iou
        self.stale_after = stale_after
        self.persist_static = persist_static
        self.depth_noise_ref = depth_noise_ref
        self.image_width = image_width
        self.image_height = image_height
        self.elevation_min = elevation_min
        self.elevation_max = elevation_max
        self.decoder = decoder
        self.resolution = resolution
        self.truncation = truncation

    def to_config(self) -> RunConfig:
        names = {f.name for f in dataclasses.fields(RunConfig)}
        params = {k: v for k, v in self.get_params().items() if k in names}
        params["transition"] = tuple(float(v) for v in params["transition"])
        return RunConfig(**params).resolved()

    @staticmethod
    def _frames(X) -> list[FrameInput]:
        if isinstance(X, FrameInput):
            return [X]
        frames = list(X)
        for fr in frames:
            if not isinstance(fr, FrameInput):
                raise TypeError(f"expected FrameInput items, got {type(fr).__name__}")
        return frames

    def _run(self, frames):
        outs = []
        for fr in frames:
            self.map_, out = tracks.step(self.map_, fr)
            outs.append(out)
        self.outputs_.extend(outs)
        return outs

    def fit(self, X, y=None):
        self.map_ = tracks.MapState(self.to_config())
        self.outputs_ = []
        self._run(self._frames(X))
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "map_"):
            self.map_ = tracks.MapState(self.to_config())
            self.outputs_ = []
        self._run(self._frames(X))
        return self

    def predict(self, X) -> list[tracks.FrameOutput]:
        """Stream further frames through the fitted map and return their outputs."""
        check_is_fitted(self, "map_")
        return self._run(self._frames(X))

    def fit_predict(self, X, y=None) -> list[tracks.FrameOutput]:
        self.fit(X)
        return list(self.outputs_)

    def track_boxes(self) -> list[TrackBox]:
        check_is_fitted(self, "map_")
        return [TrackBox(r.frame_id, r.track_id, r.class_label, r.box())
                for out in self.outputs_ for r in out.reported()]

    def score(self, X, y) -> float:
        """MOTA of a fresh run over ``X`` against ground-truth objects ``y``."""
        self.fit(X)
        return eval_mot(self.track_boxes(), y).mota

    def reconstruct(self, confirmed_only: bool = True):
        check_is_fitted(self, "map_")
        return tracks.reconstruct(self.map_, confirmed_only)


class ShapeReconstructor(BaseEstimator):
    """Fuse shape codes, decode a TSDF and extract the canonical surface."""

    def __init__(self, decoder="ellipsoid", resolution=64, truncation=0.1):
        self.decoder = decoder
        self.resolution = resolution
        self.truncation = truncation

    def fit(self, X, y=None):
        codes = np.atleast_2d(np.asarray(X, dtype=float))
        codes = [check_code(c) for c in codes]
        self.decoder_ = make_decoder(self.decoder) if isinstance(self.decoder, str) else self.decoder
        self.code_ = fuse_codes(codes)
        self.n_codes_ = len(codes)
        self.grid_ = decode_tsdf(self.decoder_, self.code_, self.resolution, self.truncation)
        self.mesh_ = marching_cubes(self.grid_)
        return self

    def transform(self, X) -> np.ndarray:
        """Signed distance of canonical points under the fused code."""
        check_is_fitted(self, "code_")
        pts = np.asarray(X, dtype=float).reshape(-1, 3)
        return self.decoder_.evaluate(self.code_, pts)

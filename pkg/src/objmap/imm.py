"""Two-model Interacting Multiple Models filter over object centre and velocity.

State vector ``[cx, cy, cz, vx, vy, vz]``. Model 0 is *dynamic* (constant
velocity, white-acceleration noise), model 1 is *static* (position random walk,
velocity carried but not integrated). The static model keeps no
position/velocity cross-covariance, so its updates leave velocity untouched.
Only the centre is observed.

All operations return new :class:`ImmState` objects; inputs are never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_row_stochastic, check_spd, check_vector

DYNAMIC, STATIC = 0, 1
MODEL_NAMES = ("dynamic", "static")

H = np.hstack([np.eye(3), np.zeros((3, 3))])

INDOOR_MEAS_VAR = 0.01
OUTDOOR_MEAS_VAR = 0.25
DEFAULT_TRANSITION = ((0.6, 0.4), (0.4, 0.6))


@dataclass(frozen=True)
class MotionModel:
    name: str
    accel_noise: float = 0.0
    walk_noise: float = 0.0
    nominal_dt: float = 0.1

    def F(self, dt: float) -> np.ndarray:
        F = np.eye(6)
        if self.name == "dynamic":
            F[:3, 3:] = dt * np.eye(3)
        return F

    def Q(self, dt: float) -> np.ndarray:
        Q = np.zeros((6, 6))
        I3 = np.eye(3)
        if self.name == "dynamic":
            q = self.accel_noise ** 2
            Q[:3, :3] = q * dt ** 4 / 4 * I3
            Q[:3, 3:] = Q[3:, :3] = q * dt ** 3 / 2 * I3
            Q[3:, 3:] = q * dt ** 2 * I3
        else:
            # sigma_w per nominal step; variance grows linearly in time
            Q[:3, :3] = self.walk_noise ** 2 * (dt / self.nominal_dt) * I3
        return Q


@dataclass(frozen=True)
class ImmConfig:
    """Filter parameters.

    ``walk_noise`` is the static model's position standard deviation per step of
    ``nominal_dt`` seconds; ``accel_noise`` the dynamic model's acceleration
    standard deviation in m/s^2.
    """

    transition: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_TRANSITION))
    R: np.ndarray = field(default_factory=lambda: OUTDOOR_MEAS_VAR * np.eye(3))
    init_covariance: np.ndarray = field(default_factory=lambda: np.eye(6))
    accel_noise: float = 1.0
    walk_noise: float = 0.01
    nominal_dt: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "transition", check_row_stochastic(self.transition))
        if self.transition.shape != (2, 2):
            raise ValueError("transition matrix must be 2x2")
        object.__setattr__(self, "R", check_spd(self.R, "measurement covariance"))
        object.__setattr__(self, "init_covariance", check_spd(self.init_covariance, "initial covariance"))
        if self.accel_noise < 0 or self.walk_noise < 0:
            raise ValueError("process noise must be non-negative")

    @classmethod
    def for_scene(cls, scene: str, **overrides) -> "ImmConfig":
        if scene == "indoor":
            base = dict(R=INDOOR_MEAS_VAR * np.eye(3), accel_noise=0.2)
        elif scene == "outdoor":
            base = dict(R=OUTDOOR_MEAS_VAR * np.eye(3), accel_noise=1.0)
        else:
            raise ValueError(f"unknown scene {scene!r}")
        base.update(overrides)
        return cls(**base)

    def models(self) -> tuple[MotionModel, MotionModel]:
        return (MotionModel("dynamic", accel_noise=self.accel_noise),
                MotionModel("static", walk_noise=self.walk_noise, nominal_dt=self.nominal_dt))


@dataclass(frozen=True, eq=False)
class ImmState:
    means: np.ndarray        # (2, 6)
    covs: np.ndarray         # (2, 6, 6)
    probs: np.ndarray        # (2,) ordered (dynamic, static)

    @property
    def mean(self) -> np.ndarray:
        return self.probs @ self.means

    @property
    def cov(self) -> np.ndarray:
        x = self.mean
        d = self.means - x
        return np.einsum("j,jab->ab", self.probs, self.covs) + np.einsum("j,ja,jb->ab", self.probs, d, d)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[3:]

    @property
    def p_static(self) -> float:
        return float(self.probs[STATIC])

    @property
    def p_dynamic(self) -> float:
        return float(self.probs[DYNAMIC])


def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def init(z0, cfg: ImmConfig) -> ImmState:
    z0 = check_vector(z0, 3, "observation")
    x = np.concatenate([z0, np.zeros(3)])
    return ImmState(
        means=np.stack([x, x]),
        covs=np.stack([cfg.init_covariance, cfg.init_covariance]).astype(float),
        probs=np.array([0.5, 0.5]),
    )


def mix(s: ImmState, cfg: ImmConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mixing step: predicted model probabilities and mixed per-model moments."""
    T = cfg.transition
    c = T.T @ s.probs
    # w[i, j] = P(model i at k-1 | model j at k)
    w = T * s.probs[:, None] / np.where(c > 0, c, 1.0)[None, :]
    # a model with zero predicted weight just inherits the combined moments
    w[:, c <= 0] = s.probs[:, None]
    means = w.T @ s.means
    covs = np.empty_like(s.covs)
    for j in range(2):
        d = s.means - means[j]
        covs[j] = np.einsum("i,iab->ab", w[:, j], s.covs) + np.einsum("i,ia,ib->ab", w[:, j], d, d)
    return c, means, covs


def predict(s: ImmState, dt: float, cfg: ImmConfig) -> ImmState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    c, means, covs = mix(s, cfg)
    new_means = np.empty_like(means)
    new_covs = np.empty_like(covs)
    for j, model in enumerate(cfg.models()):
        F = model.F(dt)
        Q = model.Q(dt)
        new_means[j] = F @ means[j]
        new_covs[j] = F @ covs[j] @ F.T + Q
        if model.name == "static":
            new_covs[j, :3, 3:] = 0.0
            new_covs[j, 3:, :3] = 0.0
    return ImmState(new_means, _sym(new_covs), c / c.sum())


def _gauss_loglik(y, S):
    L = np.linalg.cholesky(S)
    sol = np.linalg.solve(L, y)
    return -0.5 * (sol @ sol) - np.log(np.diag(L)).sum() - 0.5 * len(y) * np.log(2 * np.pi)


def update(s: ImmState, z, cfg: ImmConfig, R: np.ndarray | None = None) -> ImmState:
    """Per-model Kalman update followed by the model-probability update.

    ``R`` overrides the configured measurement covariance for this update.
    """
    z = check_vector(z, 3, "observation")
    R = cfg.R if R is None else R
    means = np.empty_like(s.means)
    covs = np.empty_like(s.covs)
    logl = np.empty(2)
    I6 = np.eye(6)
    for j in range(2):
        x, P = s.means[j], s.covs[j]
        y = z - x[:3]
        S = P[:3, :3] + R
        try:
            logl[j] = _gauss_loglik(y, S)
            K = np.linalg.solve(S, P[:3, :]).T
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("singular innovation covariance") from None
        IKH = I6 - K @ H
        means[j] = x + K @ y
        covs[j] = IKH @ P @ IKH.T + K @ R @ K.T
    logp = logl + np.log(np.maximum(s.probs, 1e-300))
    logp -= logp.max()
    probs = np.exp(logp)
    probs /= probs.sum()
    return ImmState(means, _sym(covs), probs)


def motion_status(s: ImmState) -> str:
    """``"static"`` only when strictly more probable than dynamic."""
    return "static" if s.probs[STATIC] > s.probs[DYNAMIC] else "dynamic"


def with_probs(s: ImmState, probs) -> ImmState:
    p = np.asarray(probs, dtype=float)
    return replace(s, probs=p / p.sum())

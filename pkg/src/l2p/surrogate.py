"""Seeded surrogate trajectory generators and a toy iterative denoiser.

Reproducibility contract: all randomness comes from numpy's Philox4x64-10
counter-based generator keyed by the 64-bit seed, consumed as raw uniforms
in a fixed draw order (documented in ``gen_smooth_trajectory``), and every
transform downstream of the uniforms uses only IEEE-754 basic arithmetic
plus ``sqrt`` and fixed-coefficient polynomial sin/cos. That keeps golden
trajectory files byte-identical across platforms and makes the recipe
reproducible from the docs alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (
    DivergedError,
    FeatureTrajectory,
    InvalidSpecError,
    ShapeMismatchError,
    TrajectorySet,
)

__all__ = [
    "SmoothSpec",
    "ToyDenoiser",
    "gen_smooth_trajectory",
    "make_toy_denoiser",
    "rollout_denoiser",
    "gen_dataset",
]

TWO_PI = 2.0 * math.pi

# Per-degree amplitude ladder for the shared polynomial trend: the linear
# term dominates so that forecasting has something real to gain over reuse.
_POLY_AMP_0 = 1.0
_POLY_AMP_1 = 1.4
_POLY_AMP_HIGH = 0.5    # degree d >= 2: _POLY_AMP_HIGH * 0.6**(d-2)
_MODE_AMP = 0.12        # per-mode sinusoid amplitude scale
_BIAS_SEED_SALT = 0x9E3779B97F4A7C15  # toy-denoiser bias curves use seed XOR salt


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


def _sin_cos(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Portable sin/cos: quadrant reduction + fixed-coefficient polynomials.

    Basic arithmetic only, so results are bit-identical wherever IEEE-754
    doubles are (unlike libm transcendentals). Absolute error < 1e-13 for
    |x| < 1e6, ample for trajectory synthesis.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.rint(x * (2.0 / math.pi))
    r = x - k * (math.pi / 2.0)
    r2 = r * r
    # Taylor coefficients on |r| <= pi/4
    s = r * (1.0 + r2 * (-1.0 / 6 + r2 * (1.0 / 120 + r2 * (-1.0 / 5040 + r2 * (1.0 / 362880 + r2 * (-1.0 / 39916800))))))
    c = 1.0 + r2 * (-0.5 + r2 * (1.0 / 24 + r2 * (-1.0 / 720 + r2 * (1.0 / 40320 + r2 * (-1.0 / 3628800 + r2 / 479001600)))))
    q = np.asarray(k - 4.0 * np.floor(k * 0.25), dtype=np.int64)  # k mod 4, exact
    sin_out = np.choose(q, [s, c, -s, -c])
    cos_out = np.choose(q, [c, -s, -c, s])
    return sin_out, cos_out


def _irwin_hall_noise(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """Unit-variance approximately Gaussian noise from 12 uniforms per value.

    Arithmetic-only replacement for the ziggurat normal sampler, whose rare
    tail branch calls libm and would break cross-platform byte identity.
    """
    return rng.random(shape + (12,)).sum(axis=-1) - 6.0


def _legendre_basis(u: np.ndarray, degree: int) -> np.ndarray:
    """Shifted Legendre polynomials on [0, 1], L2-normalized, as (T, degree+1)."""
    x = 2.0 * u - 1.0
    cols = [np.ones_like(x)]
    if degree >= 1:
        cols.append(x)
    for n in range(1, degree):
        cols.append(((2 * n + 1) * x * cols[n] - n * cols[n - 1]) / (n + 1))
    basis = np.stack(cols, axis=1)
    return basis * np.sqrt(2.0 * np.arange(degree + 1) + 1.0)[None, :]


@dataclass(frozen=True)
class SmoothSpec:
    """Parameters of the smooth surrogate generator.

    ``noise_scale`` doubles as the conditioning knob for training studies:
    with the default 1e-3 the trajectories are nearly deterministic curves,
    while larger values blend in a white component that flattens the
    regression spectrum (see learner docs).
    """

    poly_degree: int = 3
    num_modes: int = 4
    noise_scale: float = 1e-3
    amplitude_scale: float = 1.0

    def __post_init__(self):
        if self.poly_degree < 0 or self.num_modes < 0:
            raise InvalidSpecError("poly_degree and num_modes must be >= 0")
        for name in ("noise_scale", "amplitude_scale"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidSpecError(f"{name} must be finite")
        if self.noise_scale < 0:
            raise InvalidSpecError("noise_scale must be >= 0")
        if self.amplitude_scale <= 0:
            raise InvalidSpecError("amplitude_scale must be > 0")


def _poly_amplitudes(degree: int) -> np.ndarray:
    amps = np.empty(degree + 1)
    for d in range(degree + 1):
        if d == 0:
            amps[d] = _POLY_AMP_0
        elif d == 1:
            amps[d] = _POLY_AMP_1
        else:
            amps[d] = _POLY_AMP_HIGH * 0.6 ** (d - 2)
    return amps


def gen_smooth_trajectory(seed: int, T: int, D: int,
                          spec: Optional[SmoothSpec] = None) -> FeatureTrajectory:
    """Deterministic polynomial-plus-damped-sinusoid trajectory.

    Each channel is a shared-basis polynomial trend (shifted Legendre,
    per-channel coefficients) plus ``num_modes`` damped sinusoids with
    per-trajectory random frequency and damping and per-channel random
    amplitude and phase, plus noise of scale ``noise_scale``.

    Frozen draw order from Philox(seed), all raw uniforms:
      1. poly coefficients, shape (D, poly_degree+1)
      2. mode frequencies, shape (num_modes,)
      3. mode dampings, shape (num_modes,)
      4. mode amplitudes, shape (D, num_modes)
      5. mode phases, shape (D, num_modes)
      6. noise, shape (T, D, 12) (Irwin-Hall 12-sum)
    """
    spec = spec or SmoothSpec()
    if T < 2 or D < 1:
        raise InvalidSpecError(f"need T >= 2 and D >= 1, got T={T}, D={D}")
    rng = _rng(seed)
    u = np.arange(T) / (T - 1)
    steps = np.arange(T, dtype=np.float64)

    poly_amp = _poly_amplitudes(spec.poly_degree) * spec.amplitude_scale
    poly_coeffs = (2.0 * rng.random((D, spec.poly_degree + 1)) - 1.0) * poly_amp[None, :]
    freq_u = rng.random(spec.num_modes)
    damp_u = rng.random(spec.num_modes)
    amp_u = rng.random((D, spec.num_modes))
    phase_u = rng.random((D, spec.num_modes))
    noise = _irwin_hall_noise(rng, (T, D)) * spec.noise_scale

    data = _legendre_basis(u, spec.poly_degree) @ poly_coeffs.T
    for p in range(spec.num_modes):
        # full-band angular frequency per step (0.02*pi .. pi): the wide band
        # keeps one-step prediction genuinely imperfect for any linear rule
        omega = math.pi * (0.02 + 0.98 * freq_u[p])
        gamma = 0.985 + 0.014 * damp_u[p]
        env = gamma ** steps
        sin_t, cos_t = _sin_cos(omega * steps)
        sin_ph, cos_ph = _sin_cos(TWO_PI * phase_u[:, p])
        amps = (2.0 * amp_u[:, p] - 1.0) * (_MODE_AMP * spec.amplitude_scale)
        # sin(omega*t + phase) expanded so the per-step curves are shared
        curve = np.outer(env * sin_t, cos_ph) + np.outer(env * cos_t, sin_ph)
        data += curve * amps[None, :]
    data += noise

    labels = 1.0 - u  # diffusion-style labels, 1 -> 0 along the run
    return FeatureTrajectory(data=data, step_labels=labels, labels_descending=True,
                             seed=seed, source_tag="surrogate-smooth")


@dataclass(frozen=True)
class ToyDenoiser:
    """Tiny saturating recurrence standing in for an iterative denoiser.

    The recorded feature feeds the state update, so a wrong cached feature
    corrupts every later state exactly as in real cached inference. The
    nonlinearity is the algebraic sigmoid z/sqrt(1+z^2) (tanh-like, and
    arithmetic-only for portability). ``state_dim`` must equal ``dim``
    because the feature is added onto the state.
    """

    dim: int
    state_dim: int
    mixing: np.ndarray               # (D, D), Frobenius norm 0.95
    bias_schedule: np.ndarray        # (T, D) fixed seeded vectors
    step_gain: float = 0.15
    nonlinearity: str = "algebraic-sigmoid"
    seed: int = 0

    def __post_init__(self):
        if self.dim != self.state_dim:
            raise InvalidSpecError("state_dim must equal dim (features feed the state update)")
        # gain 0 is admitted (frozen state, features still vary via the bias)
        if not 0.0 <= self.step_gain <= 1.0:
            raise InvalidSpecError(f"step_gain must be in [0, 1], got {self.step_gain}")
        if self.nonlinearity != "algebraic-sigmoid":
            raise InvalidSpecError(f"unknown nonlinearity tag {self.nonlinearity!r}")
        mixing = np.array(self.mixing, dtype=np.float64, copy=True)
        if mixing.shape != (self.dim, self.dim):
            raise ShapeMismatchError("mixing must be (dim, dim)")
        # Frobenius norm bounds the spectral radius, so radius < 1 <= 1/gain.
        fro = math.sqrt(float((mixing * mixing).sum()))
        if fro >= 1.0 + 1e-12:
            raise InvalidSpecError(f"mixing norm {fro} too large for bounded rollouts")
        bias = np.array(self.bias_schedule, dtype=np.float64, copy=True)
        if bias.ndim != 2 or bias.shape[1] != self.dim:
            raise ShapeMismatchError("bias_schedule must be (T, dim)")
        mixing.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "mixing", mixing)
        object.__setattr__(self, "bias_schedule", bias)

    @property
    def max_steps(self) -> int:
        return self.bias_schedule.shape[0]

    def feature(self, state: np.ndarray, step: int) -> np.ndarray:
        """F = sigma(mixing @ state + bias[step])."""
        z = self.mixing @ state + self.bias_schedule[step]
        return z / np.sqrt(1.0 + z * z)


def make_toy_denoiser(seed: int, T: int, D: int, step_gain: float = 0.15,
                      bias_spec: Optional[SmoothSpec] = None) -> ToyDenoiser:
    """Build a seeded toy denoiser with smooth bias curves for T steps.

    The default bias uses two sinusoid modes and no noise: a noiseless,
    gently textured drive keeps the feature stream forecastable, which is
    the regime caching is for.
    """
    if T < 2 or D < 1:
        raise InvalidSpecError(f"need T >= 2 and D >= 1, got T={T}, D={D}")
    rng = _rng(seed)
    mixing = 2.0 * rng.random((D, D)) - 1.0
    mixing *= 0.95 / math.sqrt(float((mixing * mixing).sum()))
    bias_spec = bias_spec or SmoothSpec(num_modes=2, noise_scale=0.0)
    if bias_spec.noise_scale != 0.0:
        bias_spec = SmoothSpec(poly_degree=bias_spec.poly_degree, num_modes=bias_spec.num_modes,
                               noise_scale=0.0, amplitude_scale=bias_spec.amplitude_scale)
    bias = gen_smooth_trajectory(seed ^ _BIAS_SEED_SALT, T, D, bias_spec).data
    return ToyDenoiser(dim=D, state_dim=D, mixing=mixing, bias_schedule=bias,
                       step_gain=step_gain, seed=seed)


def initial_state(model: ToyDenoiser, init_seed: int) -> np.ndarray:
    """Seeded starting state in [-1, 1)^D."""
    return 2.0 * _rng(init_seed).random(model.dim) - 1.0


def rollout_denoiser(model: ToyDenoiser, T: int, init_seed: int
                     ) -> Tuple[FeatureTrajectory, np.ndarray]:
    """Run x_{r+1} = x_r + gain * F_r for T steps, recording F_r per step."""
    if T < 2:
        raise InvalidSpecError(f"need T >= 2, got T={T}")
    if T > model.max_steps:
        raise ShapeMismatchError(
            f"model has bias vectors for {model.max_steps} steps, asked for {T}"
        )
    x = initial_state(model, init_seed)
    feats = np.empty((T, model.dim))
    for r in range(T):
        f = model.feature(x, r)
        feats[r] = f
        x = x + model.step_gain * f
        if not np.isfinite(x).all():
            raise DivergedError(f"non-finite state at step {r}")
    labels = 1.0 - np.arange(T) / (T - 1)
    traj = FeatureTrajectory(data=feats, step_labels=labels, labels_descending=True,
                             seed=init_seed, source_tag="surrogate-denoiser")
    return traj, x


def gen_dataset(base_seed: int, count: int, T: int, D: int, kind: str = "smooth",
                spec: Optional[SmoothSpec] = None, model_seed: int = 0,
                step_gain: float = 0.15) -> TrajectorySet:
    """Generate ``count`` trajectories with seeds base_seed + i.

    For ``kind="denoiser"`` one fixed model is built from ``model_seed``
    (kept separate from the per-trajectory init seeds so that train and
    held-out sets can share the same dynamics).
    """
    if count < 1:
        raise InvalidSpecError(f"need count >= 1, got {count}")
    if kind not in ("smooth", "denoiser"):
        raise InvalidSpecError(f"unknown dataset kind {kind!r}")
    trajs = []
    if kind == "smooth":
        for i in range(count):
            trajs.append(gen_smooth_trajectory(base_seed + i, T, D, spec))
    else:
        model = make_toy_denoiser(model_seed, T, D, step_gain=step_gain, bias_spec=spec)
        for i in range(count):
            trajs.append(rollout_denoiser(model, T, base_seed + i)[0])
    manifest = tuple(
        {"seed": tr.seed, "tag": tr.source_tag, "kind": kind,
         **({"model_seed": model_seed} if kind == "denoiser" else {})}
        for tr in trajs
    )
    return TrajectorySet(trajectories=tuple(trajs), manifest=manifest)

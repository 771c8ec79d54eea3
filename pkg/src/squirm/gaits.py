"""Prescribed growth-wave generators for the forward locomotion studies.

Each gait prescribes the ventral-chamber growth u(s, t) over the normalised
body coordinate s in [0, 1] (reference X / L); the dorsal chamber follows
with the gait's polarity:

    undulatory:  u_v = +u_o sin(2 pi f t + 2 pi gamma s),   u_d = -u_v
    crawling:    u_v = +u_o sin(2 pi f t + 2 pi gamma s + pi), u_d = +u_v
    inching:     u_v = -u_o |sin(n pi f t)| sin(2 pi gamma s), u_d = -u_v
                 (standing wave; gamma is fixed at 0.5)

Undulatory and crawling are travelling waves; inching is the rectified
standing wave whose envelope pulses n times per 1/f.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("undulatory", "crawling", "inching")

INCHING_WAVE_NUMBER = 0.5


@dataclass(frozen=True)
class GaitSpec:
    kind: str
    u_o: float
    f: float = 1.0
    gamma: float = 1.0
    n_strokes: int = 4

    def __post_init__(self):
        problems = []
        if self.kind not in KINDS:
            problems.append(f"unknown gait kind {self.kind!r}")
        if not abs(self.u_o) < 1.0:
            problems.append(f"|u_o|={abs(self.u_o)} must stay below 1")
        if self.f <= 0 or self.gamma <= 0:
            problems.append("frequency and wave number must be positive")
        if self.kind == "inching":
            if self.n_strokes < 1:
                problems.append("inching needs n_strokes >= 1")
            if self.gamma != INCHING_WAVE_NUMBER:
                object.__setattr__(self, "gamma", INCHING_WAVE_NUMBER)
        if problems:
            raise ConfigError(problems)

    @property
    def polarity(self):
        return "synergistic" if self.kind == "crawling" else "antagonistic"


def growth_at(spec, s, t):
    """(ventral, dorsal) growth at body coordinate s and time t."""
    if spec.kind == "undulatory":
        u_v = spec.u_o * np.sin(2 * np.pi * spec.f * t
                                + 2 * np.pi * spec.gamma * s)
        return u_v, -u_v
    if spec.kind == "crawling":
        u_v = spec.u_o * np.sin(2 * np.pi * spec.f * t
                                + 2 * np.pi * spec.gamma * s + np.pi)
        return u_v, u_v
    u_v = -spec.u_o * np.abs(np.sin(spec.n_strokes * np.pi * spec.f * t)) \
        * np.sin(2 * np.pi * spec.gamma * s)
    return u_v, -u_v


def sample_to_channels(spec, s_coords, times):
    """Ventral control table ((len(times), len(s_coords))).

    Channel values are the ventral growth at the channel's body coordinate;
    the dorsal side is implied by the control map's polarity sign.
    """
    s = np.asarray(s_coords, dtype=float)[None, :]
    t = np.asarray(times, dtype=float)[:, None]
    u_v, _ = growth_at(spec, s, t)
    return u_v

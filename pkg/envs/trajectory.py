import numpy as np

from envs.task_spec import TrajectorySpec


class Lemniscate:
    """
    Figure-eight reference:

        p(t) = c + (s sin wt, s sin wt cos wt, h sin wt),   w = 2 pi / period

    Its speed never exceeds w * sqrt(2 s^2 + h^2).
    """

    def __init__(self, spec: TrajectorySpec):
        self.center = np.asarray(spec.center, dtype=np.float64)
        self.scale = spec.scale
        self.z_amplitude = spec.z_amplitude
        self.omega = 2.0 * np.pi / spec.period

    def position(self, t) -> np.ndarray:
        phase = self.omega * np.asarray(t, dtype=np.float64)
        s, c = np.sin(phase), np.cos(phase)
        offset = np.stack([self.scale * s, self.scale * s * c, self.z_amplitude * s], axis=-1)
        return self.center + offset

    def velocity(self, t) -> np.ndarray:
        phase = self.omega * np.asarray(t, dtype=np.float64)
        return self.omega * np.stack([
            self.scale * np.cos(phase),
            self.scale * np.cos(2.0 * phase),
            self.z_amplitude * np.cos(phase),
        ], axis=-1)

    @property
    def max_speed(self) -> float:
        return self.omega * np.sqrt(2.0 * self.scale ** 2 + self.z_amplitude ** 2)

"""Deterministic synthetic data with closed-form expectations.

Two generators back the test and demo suites:

* a 10x10 two-region toy image with salt noise and rectangular sparse
  annotations, whose importance weights have exact count-ratio values
  (with one-hot intensity indicators the logistic fit is saturated, so the
  weight of an intensity level is n_image(level) / n_annotated(level));
* Gaussian covariate-shift sample tables whose test/train log-density ratio
  is known analytically, giving an oracle for the fitted log-weights.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError
from .labels import HEALTHY, TUMOROUS
from .samples import SampleTable
from .volume import PatientVolume

# (x, y) coordinates; 5 on the left half, 4 on the right
DEFAULT_SALT_PIXELS = (
    (0, 0), (2, 3), (1, 5), (4, 7), (3, 9),
    (5, 0), (7, 4), (9, 2), (6, 9),
)

# inclusive (x0, x1, y0, y1) rectangles; 12 pixels each, strictly inside
# their halves; together they cover exactly 3 salt pixels
DEFAULT_SUR_LEFT = (1, 3, 2, 5)
DEFAULT_SUR_RIGHT = (6, 8, 3, 6)


@dataclass(frozen=True)
class ToyConfig:
    """Layout of the 100-pixel toy image.

    The image is split into a left and a right region with distinct base
    intensities; ``salt_pixels`` are bright outliers on both sides. The two
    annotation rectangles stay strictly inside their halves and cover exactly
    3 of the 9 bright pixels. With ``encode_indicators`` the features are
    one-hot intensity-level indicators (d=3), otherwise the raw intensity
    (d=1).
    """

    width: int = 10
    height: int = 10
    left_intensity: float = 0.2
    right_intensity: float = 0.8
    bright_intensity: float = 1.0
    salt_pixels: tuple = DEFAULT_SALT_PIXELS
    sur_left: tuple = DEFAULT_SUR_LEFT
    sur_right: tuple = DEFAULT_SUR_RIGHT
    encode_indicators: bool = True

    def __post_init__(self):
        levels = {self.left_intensity, self.right_intensity, self.bright_intensity}
        if len(levels) != 3:
            raise DataError("toy intensity levels must be three distinct values")
        half = self.width // 2
        n_left = sum(1 for x, _ in self.salt_pixels if x < half)
        n_right = len(self.salt_pixels) - n_left
        if len(self.salt_pixels) != 9 or n_left != 5 or n_right != 4:
            raise DataError("toy needs 9 salt pixels: 5 on the left half, 4 on the right")
        for name, rect, lo, hi in (
            ("sur_left", self.sur_left, 0, half - 1),
            ("sur_right", self.sur_right, half, self.width - 1),
        ):
            x0, x1, y0, y1 = rect
            if not (lo <= x0 <= x1 <= hi and 0 <= y0 <= y1 < self.height):
                raise DataError(f"{name} rectangle {rect} leaves its half")
        inside = sum(1 for p in self.salt_pixels if self._in_sur(p))
        if inside != 3:
            raise DataError(f"annotations must cover exactly 3 salt pixels, found {inside}")

    def _in_sur(self, pixel):
        x, y = pixel
        for x0, x1, y0, y1 in (self.sur_left, self.sur_right):
            if x0 <= x <= x1 and y0 <= y <= y1:
                return True
        return False


def make_toy(config=None):
    """Build the toy image as a PatientVolume (single z slice, full mask).

    Ground-truth labels mark the left half healthy and the right half
    tumorous; the annotation raster repeats those labels inside the two
    rectangles only.
    """
    config = config or ToyConfig()
    w, h = config.width, config.height
    half = w // 2
    n = w * h
    xs = np.arange(n) % w
    ys = np.arange(n) // w

    intensity = np.where(xs < half, config.left_intensity, config.right_intensity)
    intensity = intensity.astype(np.float64)
    salt = np.zeros(n, dtype=bool)
    for x, y in config.salt_pixels:
        salt[x + w * y] = True
    intensity[salt] = config.bright_intensity

    labels = np.where(xs < half, HEALTHY, TUMOROUS).astype(np.uint8)
    sur = np.zeros(n, dtype=np.uint8)
    for value, (x0, x1, y0, y1) in (
        (HEALTHY, config.sur_left),
        (TUMOROUS, config.sur_right),
    ):
        inside = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        sur[inside] = value

    if config.encode_indicators:
        names = ("is_left_level", "is_right_level", "is_bright")
        levels = (config.left_intensity, config.right_intensity, config.bright_intensity)
        channels = np.stack([(intensity == lv).astype(np.float32) for lv in levels])
    else:
        names = ("intensity",)
        channels = intensity[None, :].astype(np.float32)

    return PatientVolume(
        patient_id="toy",
        dims=(w, h, 1),
        spacing=(1.0, 1.0, 1.0),
        channel_names=names,
        channels=channels,
        brain_mask=np.ones(n, dtype=np.uint8),
        labels=labels,
        sur_labels=sur,
    )


@dataclass(frozen=True)
class GaussianShiftConfig:
    """Covariate-shift benchmark: shared labeling rule, shifted marginals.

    Feature axis 0 is drawn from N(train_mean, train_std^2) for training
    rows and N(test_mean, test_std^2) for test rows; further axes are
    standard normal in both domains. Labels follow the shared posterior of
    two equal-prior Gaussian class models on axis 0, so only P(x) differs
    between domains. Defaults give the closed-form log density ratio
    ln p_test(x)/p_train(x) = x - 0.5.
    """

    d: int = 1
    train_mean: float = 0.0
    train_std: float = 1.0
    test_mean: float = 1.0
    test_std: float = 1.0
    class_mean_a: float = -1.0
    class_mean_b: float = 1.0
    class_std: float = 1.0
    n_train: int = 200
    n_test: int = 1000
    seed: int = 0
    label_a: int = HEALTHY
    label_b: int = TUMOROUS

    def __post_init__(self):
        if min(self.train_std, self.test_std, self.class_std) <= 0:
            raise DataError("standard deviations must be positive")
        if self.n_train < 10 or self.n_test < 10:
            raise DataError("n_train and n_test must be >= 10")
        if self.d < 1:
            raise DataError("d must be >= 1")

    def posterior_b(self, x0):
        """Shared P(label = b | x), a logistic in the first feature."""
        slope = (self.class_mean_b - self.class_mean_a) / self.class_std**2
        mid = 0.5 * (self.class_mean_a + self.class_mean_b)
        return expit(slope * (np.asarray(x0, dtype=np.float64) - mid))


def _draw_domain(rng, config, n, mean, std, patient_id):
    X = rng.standard_normal((n, config.d))
    X[:, 0] = mean + std * X[:, 0]
    p_b = config.posterior_b(X[:, 0])
    y = np.where(rng.random(n) < p_b, config.label_b, config.label_a)
    return SampleTable(
        features=X,
        labels=y.astype(np.int64),
        patient_ids=np.full(n, patient_id, dtype=object),
    )


def make_gaussian_shift(config=None):
    """Draw (train, test) sample tables; deterministic per config.seed."""
    config = config or GaussianShiftConfig()
    rng = np.random.default_rng(config.seed)
    pid = f"gauss-{config.seed}"
    train = _draw_domain(rng, config, config.n_train, config.train_mean, config.train_std, pid)
    test = _draw_domain(rng, config, config.n_test, config.test_mean, config.test_std, pid)
    return train, test


def analytic_log_ratio(x, config=None):
    """Closed-form ln p_test(x)/p_train(x); depends on feature axis 0 only."""
    config = config or GaussianShiftConfig()
    x = np.asarray(x, dtype=np.float64)
    x0 = x[..., 0] if x.ndim > 1 else x
    a = (x0 - config.train_mean) ** 2 / (2.0 * config.train_std**2)
    b = (x0 - config.test_mean) ** 2 / (2.0 * config.test_std**2)
    return a - b + np.log(config.train_std / config.test_std)


def make_gaussian_patient(config=None, patient_id=None):
    """Lay a Gaussian-shift draw out as a PatientVolume.

    The image holds the test draws followed by the train draws along x
    (dims (n, 1, 1)); the annotation raster marks the train block, so the
    annotated voxels are part of the image exactly as sparse annotations are
    part of a scan. Ground truth is complete.
    """
    config = config or GaussianShiftConfig()
    train, test = make_gaussian_shift(config)
    pid = patient_id or f"gauss-{config.seed}"
    features = np.concatenate([test.features, train.features])
    labels = np.concatenate([test.labels, train.labels]).astype(np.uint8)
    n = features.shape[0]
    sur = np.zeros(n, dtype=np.uint8)
    sur[len(test):] = labels[len(test):]
    return PatientVolume(
        patient_id=pid,
        dims=(n, 1, 1),
        spacing=(1.0, 1.0, 1.0),
        channel_names=tuple(f"x{i}" for i in range(config.d)),
        channels=features.T.astype(np.float32),
        brain_mask=np.ones(n, dtype=np.uint8),
        labels=labels,
        sur_labels=sur,
    )

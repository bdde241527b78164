"""
Loss functions of the detection heads and the extra scene head.

Every differentiable loss returns ``(value, gradient)`` where the gradient is
taken with respect to the prediction. Component losses are per element; the
caller sums them over positives and the ``*_total`` functions normalize by the
positive count exactly once.

The rotated IoU loss has no analytic gradient; ``iou3d_loss_gradient`` gives a
central-difference estimate over the seven box parameters.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.core.errors import ValidationError
from src.core.geometry import Box3D, CameraExtrinsics, camera_pitch_roll, iou3d

logger = logging.getLogger(__name__)

DEFAULT_FOCAL_ALPHA = 0.25
DEFAULT_FOCAL_GAMMA = 2.0
DEFAULT_SMOOTH_L1_BETA = 1.0 / 9.0

LossAndGrad = Tuple[float, Union[float, np.ndarray]]


@dataclass(frozen=True)
class LossWeightsOutdoor:
    lambda_loc: float = 2.0
    lambda_cls: float = 1.0
    lambda_dir: float = 0.2

    def __post_init__(self):
        _check_weights(self.lambda_loc, self.lambda_cls, self.lambda_dir)


@dataclass(frozen=True)
class LossWeightsExtra:
    lambda_layout: float = 0.1
    lambda_pose: float = 1.0

    def __post_init__(self):
        _check_weights(self.lambda_layout, self.lambda_pose)


def _check_weights(*weights: float) -> None:
    if any(not math.isfinite(w) or w < 0 for w in weights):
        raise ValidationError(f"Loss weights must be finite and non-negative, got {weights}")


@dataclass(frozen=True)
class PoseAngles:
    """
    Camera pose relative to the floor.

    Attributes:
        beta (float): Pitch in radians
        gamma (float): Roll in radians
    """

    beta: float
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and math.isfinite(self.gamma)):
            raise ValidationError(f"Pose angles must be finite, got ({self.beta}, {self.gamma})")

    @classmethod
    def from_extrinsics(cls, rt: CameraExtrinsics) -> "PoseAngles":
        return cls(*camera_pitch_roll(rt))


def _check_probability(p: float, name: str = "p") -> None:
    if not 0.0 < p < 1.0:
        raise ValidationError(f"{name} must lie in the open interval (0, 1), got {p}")


def focal_loss(
    p: float,
    y: int,
    alpha: float = DEFAULT_FOCAL_ALPHA,
    gamma: float = DEFAULT_FOCAL_GAMMA
) -> LossAndGrad:
    """
    Binary focal loss ``-alpha_t * (1 - p_t)^gamma * log(p_t)``.

    Args:
        p: Predicted foreground probability in (0, 1)
        y: Target, 1 for foreground and 0 for background
        alpha: Foreground weight; background uses 1 - alpha
        gamma: Focusing exponent (>= 0)

    Returns:
        (loss, d loss / d p)

    Raises:
        ValidationError: If p is 0, 1 or outside, or y is not binary

    Examples:
        >>> round(focal_loss(0.5, 1)[0], 5)
        0.04332
    """
    _check_probability(p)
    if y not in (0, 1):
        raise ValidationError(f"Focal target must be 0 or 1, got {y}")
    if gamma < 0:
        raise ValidationError(f"Focal gamma must be non-negative, got {gamma}")
    if y == 1:
        q = 1.0 - p
        loss = -alpha * q ** gamma * math.log(p)
        grad = alpha * (gamma * q ** (gamma - 1) * math.log(p) - q ** gamma / p) if gamma > 0 else -alpha / p
        return loss, grad
    q = 1.0 - p
    loss = -(1.0 - alpha) * p ** gamma * math.log(q)
    grad = -(1.0 - alpha) * (gamma * p ** (gamma - 1) * math.log(q) - p ** gamma / q) if gamma > 0 else (1.0 - alpha) / q
    return loss, grad


def smooth_l1(
    pred: Union[float, Sequence[float]],
    target: Union[float, Sequence[float]],
    beta: float = DEFAULT_SMOOTH_L1_BETA
) -> LossAndGrad:
    """
    Smooth L1 (Huber-style) loss summed over elements.

    ``0.5 * d^2 / beta`` for ``|d| < beta`` and ``|d| - 0.5 * beta`` otherwise,
    so value and slope are continuous at ``|d| = beta``.

    Returns:
        (loss, gradient with the shape of ``pred``)
    """
    if not beta > 0:
        raise ValidationError(f"Smooth L1 beta must be positive, got {beta}")
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    small = np.abs(d) < beta
    values = np.where(small, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    grad = np.where(small, d / beta, np.sign(d))
    if grad.ndim == 0:
        return float(values), float(grad)
    return float(values.sum()), grad


def dir_ce(logits: Sequence[float], target: int) -> LossAndGrad:
    """
    Two-class softmax cross-entropy of the direction classifier.

    Returns:
        (loss, gradient w.r.t. the two logits)
    """
    z = np.asarray(logits, dtype=float)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise ValidationError(f"Direction logits must be two finite values, got {logits}")
    if target not in (0, 1):
        raise ValidationError(f"Direction target must be 0 or 1, got {target}")
    shifted = z - z.max()
    log_norm = math.log(float(np.exp(shifted).sum()))
    loss = log_norm - float(shifted[target])
    probs = np.exp(shifted - log_norm)
    probs[target] -= 1.0
    return loss, probs


def iou3d_loss(pred: Box3D, gt: Box3D) -> float:
    """``1 - iou3d(pred, gt)``."""
    return 1.0 - iou3d(pred, gt)


def iou3d_loss_gradient(pred: Box3D, gt: Box3D, eps: float = 1e-5) -> np.ndarray:
    """
    Central-difference gradient of iou3d_loss w.r.t. (x, y, z, w, h, l, theta) of ``pred``.

    Raises:
        ValidationError: If a step would make an extent non-positive
    """
    base = pred.as_array()
    grad = np.zeros(7)
    for i in range(7):
        step = np.zeros(7)
        step[i] = eps
        plus = iou3d_loss(Box3D.from_array(base + step), gt)
        minus = iou3d_loss(Box3D.from_array(base - step), gt)
        grad[i] = (plus - minus) / (2.0 * eps)
    return grad


def layout_loss(pred: Box3D, gt: Box3D) -> float:
    """Room-layout loss; the rotated IoU loss between layout boxes."""
    return iou3d_loss(pred, gt)


def centerness_bce(pred: float, target: float) -> LossAndGrad:
    """
    Binary cross-entropy of the centerness branch.

    Minimized at ``pred == target``; the minimum is the entropy of the target,
    so it is 0 only for targets at 0 or 1.
    """
    _check_probability(pred, "Centerness prediction")
    if not 0.0 <= target <= 1.0:
        raise ValidationError(f"Centerness target must lie in [0, 1], got {target}")
    loss = -(target * math.log(pred) + (1.0 - target) * math.log(1.0 - pred))
    grad = (pred - target) / (pred * (1.0 - pred))
    return loss, grad


def pose_loss(pred: PoseAngles, gt: PoseAngles) -> LossAndGrad:
    """
    ``|sin(beta_gt - beta)| + |sin(gamma_gt - gamma)|``.

    Returns:
        (loss, gradient w.r.t. (beta, gamma) of ``pred``); at a zero residual the
        subgradient 0 is used
    """
    grad = np.zeros(2)
    loss = 0.0
    for i, residual in enumerate((gt.beta - pred.beta, gt.gamma - pred.gamma)):
        s = math.sin(residual)
        loss += abs(s)
        grad[i] = -float(np.sign(s)) * math.cos(residual)
    return loss, grad


def _check_n_pos(n_pos: int) -> None:
    if n_pos < 0:
        raise ValidationError(f"Positive count must be non-negative, got {n_pos}")


def outdoor_total(
    loc: float,
    cls: float,
    dir: float,  # pylint: disable=redefined-builtin
    n_pos: int,
    w: LossWeightsOutdoor = LossWeightsOutdoor()
) -> float:
    """
    ``(lambda_loc * loc + lambda_cls * cls + lambda_dir * dir) / n_pos``.

    With no positives the location and direction terms are zero and the
    classification sum is divided by 1.

    Examples:
        >>> round(outdoor_total(1.0, 1.0, 1.0, 1), 12)
        3.2
    """
    _check_n_pos(n_pos)
    if n_pos == 0:
        return w.lambda_cls * cls
    return (w.lambda_loc * loc + w.lambda_cls * cls + w.lambda_dir * dir) / n_pos


def indoor_total(loc: float, cls: float, cntr: float, n_pos: int) -> float:
    """``(loc + cls + cntr) / n_pos``; with no positives only ``cls`` is returned."""
    _check_n_pos(n_pos)
    if n_pos == 0:
        return cls
    return (loc + cls + cntr) / n_pos


def extra_total(
    layout_pred: Box3D,
    layout_gt: Box3D,
    pose_pred: PoseAngles,
    pose_gt: PoseAngles,
    w: LossWeightsExtra = LossWeightsExtra()
) -> float:
    """``lambda_layout * layout_loss + lambda_pose * pose_loss``."""
    return w.lambda_layout * layout_loss(layout_pred, layout_gt) + w.lambda_pose * pose_loss(pose_pred, pose_gt)[0]


def grad_check(
    f: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x: Sequence[float],
    eps: float = 1e-6
) -> float:
    """
    Compare an analytic gradient against central differences.

    Args:
        f: Function of a 1-D point returning (value, gradient)
        x: Point at which to check
        eps: Finite-difference step

    Returns:
        Max over coordinates of ``|a - n| / max(|a|, |n|, 1e-8)``. Non-smooth
        points produce a large value rather than an exception.
    """
    point = np.array(x, dtype=float).reshape(-1)
    analytic = np.asarray(f(point)[1], dtype=float).reshape(-1)
    if analytic.shape != point.shape:
        raise ValidationError(f"Gradient shape {analytic.shape} does not match point shape {point.shape}")
    worst = 0.0
    for i in range(point.size):
        step = np.zeros_like(point)
        step[i] = eps
        numeric = (f(point + step)[0] - f(point - step)[0]) / (2.0 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def gradient_sweep(seed: int = 0, points: int = 100) -> Dict[str, float]:
    """
    Run grad_check for every analytic loss at random generic points.

    Returns:
        Mapping of loss name to the worst relative error seen
    """
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(("focal_pos", "focal_neg", "centerness_bce", "smooth_l1", "dir_ce", "pose"), 0.0)
    for _ in tqdm(range(points), desc="gradcheck", disable=None):
        p = rng.uniform(0.05, 0.95)
        t = rng.uniform(0.0, 1.0)
        label = int(rng.integers(0, 2))
        target = rng.normal(size=7)
        pred = _away_from_kinks(target + rng.normal(scale=0.5, size=7), target, DEFAULT_SMOOTH_L1_BETA)
        gt_pose = PoseAngles(*rng.uniform(-1.0, 1.0, size=2))
        offset = rng.uniform(0.1, 1.0, size=2) * rng.choice([-1.0, 1.0], size=2)

        errors = {
            "focal_pos": grad_check(lambda v: _wrap(focal_loss(float(v[0]), 1)), [p]),
            "focal_neg": grad_check(lambda v: _wrap(focal_loss(float(v[0]), 0)), [p]),
            "centerness_bce": grad_check(lambda v: _wrap(centerness_bce(float(v[0]), t)), [p]),
            "smooth_l1": grad_check(lambda v: smooth_l1(v, target), pred),
            "dir_ce": grad_check(lambda v: dir_ce(v, label), rng.normal(scale=3.0, size=2)),
            "pose": grad_check(
                lambda v: pose_loss(PoseAngles(v[0], v[1]), gt_pose),
                np.array([gt_pose.beta, gt_pose.gamma]) + offset
            ),
        }
        for name, error in errors.items():
            worst[name] = max(worst[name], error)
    logger.info(f"Gradient sweep over {points} points: {worst}")
    return worst


def _wrap(result: LossAndGrad) -> Tuple[float, np.ndarray]:
    return result[0], np.array([result[1]])


def _away_from_kinks(pred: np.ndarray, target: np.ndarray, beta: float, margin: float = 1e-3) -> np.ndarray:
    d = pred - target
    near = np.abs(np.abs(d) - beta) < margin
    d[near] += np.sign(d[near]) * 10 * margin
    return target + d

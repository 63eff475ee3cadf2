"""
Utility functions for the co-carrying toolkit

Rotation helpers shared by the kinematic, pose and trajectory modules, plus
the small export/statistics helpers used by the pipeline and the API.
Quaternions are stored scalar-first (w, x, y, z) throughout the package;
``scipy.spatial.transform.Rotation`` is scalar-last, so conversions go
through ``quat_to_scipy`` / ``quat_from_scipy``.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]

X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


def as_vector(value: ArrayLike, size: int = 3, name: str = "vector") -> np.ndarray:
    """
    Convert input to a finite float vector of a given size

    Raises:
        ValueError: If the shape is wrong or entries are not finite
    """
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have {size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def skew(v: ArrayLike) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector"""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rodrigues(axis: ArrayLike, angle: float) -> np.ndarray:
    """
    Rotation matrix for a rotation of ``angle`` about a unit ``axis``

    Uses R = I + sin(θ) K + (1 − cos(θ)) K², K the skew matrix of the axis.
    """
    k = skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def wrap_angle(angle: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Wrap angles to (−π, π]"""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def normalize_quaternion(q: ArrayLike, tolerance: float = 1e-6) -> np.ndarray:
    """
    Normalize a (w, x, y, z) quaternion and fix its sign so that w >= 0

    Raises:
        ValueError: If the norm is further than ``tolerance`` from one
    """
    quat = as_vector(q, 4, "quaternion")
    norm = float(np.linalg.norm(quat))
    if abs(norm - 1.0) > tolerance:
        raise ValueError(f"quaternion norm must be 1 (got {norm:.6g})")
    quat = quat / norm
    return -quat if quat[0] < 0.0 else quat


def quat_to_scipy(q: ArrayLike) -> Rotation:
    """Wrap (w, x, y, z) quaternions (single or stacked) as a scipy Rotation"""
    return Rotation.from_quat(np.roll(np.asarray(q, dtype=float), -1, axis=-1))


def quat_from_scipy(rotation: Rotation) -> np.ndarray:
    """(w, x, y, z) quaternion of a scipy Rotation, with w >= 0"""
    quat = np.roll(rotation.as_quat(), 1, axis=-1)
    return -quat if quat[0] < 0.0 else quat


def quat_to_matrix(q: ArrayLike) -> np.ndarray:
    return quat_to_scipy(q).as_matrix()


def matrix_to_quat(matrix: np.ndarray) -> np.ndarray:
    return quat_from_scipy(Rotation.from_matrix(matrix))


def quat_angle_between(q1: ArrayLike, q2: ArrayLike) -> float:
    """Smallest rotation angle taking orientation q1 to q2"""
    relative = quat_to_scipy(q2) * quat_to_scipy(q1).inv()
    return float(np.linalg.norm(relative.as_rotvec()))



def to_builtin(value: Any) -> Any:
    """Recursively convert numpy containers and scalars to plain Python types"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    return value


def export_to_csv(data: Union[pd.DataFrame, List[Dict[str, Any]]], path: Union[str, Path]) -> Path:
    """
    Export tabular data to a CSV file

    Args:
        data: DataFrame or list of row dictionaries
        path: Destination file; parent directories are created

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
    # repr-precision floats keep reruns byte-identical
    df.to_csv(path, index=False, float_format="%.17g")
    logger.debug(f"Wrote {len(df)} rows to {path}")
    return path


def export_to_json(data: Any, path: Optional[Union[str, Path]] = None, pretty: bool = True) -> str:
    """
    Export data to JSON format

    Args:
        data: Data to export (numpy values are converted)
        path: Optional destination file
        pretty: Whether to format JSON prettily

    Returns:
        JSON content as string
    """
    content = json.dumps(
        to_builtin(data),
        indent=2 if pretty else None,
        sort_keys=True,
        ensure_ascii=False,
        default=str,
    )
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content + "\n", encoding="utf-8")
    return content


def calculate_series_stats(values: Sequence[float]) -> Dict[str, float]:
    """
    Calculate summary statistics for a series of values

    Args:
        values: Values to summarize; non-finite entries are dropped

    Returns:
        Dictionary with statistical measures (empty if nothing is left)
    """
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return {}

    return {
        "mean": float(np.mean(arr)),
        "median": float(np.median(arr)),
        "std": float(np.std(arr)),
        "min": float(np.min(arr)),
        "max": float(np.max(arr)),
        "rms": float(np.sqrt(np.mean(arr ** 2))),
    }

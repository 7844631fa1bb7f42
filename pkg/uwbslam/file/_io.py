"""

Copyright (c) 2024 The uwbslam Project

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
import csv
import json
import logging
import os
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from ..config import ParameterError
from ..geometry import Covariance3, Pose2
from ..scenario import Dataset, RangingMeasurement, Trajectory

__all__ = [
    "DatasetParseError",
    "DatasetValidationError",
    "read_dataset",
    "write_dataset",
    "read_trajectories",
    "write_trajectories",
    "read_closures",
    "write_closures",
    "read_rows",
    "write_rows",
    "read_json",
    "write_json",
    "write_text",
    "optional_path",
]

logger = logging.getLogger(__name__)

_FLOAT = ".17g"
_POSE_TAGS = {"ODOM", "GT", "EST"}
_FIELDS = {"ODOM": 6, "GT": 6, "EST": 6, "UWB": 5}

CLOSURE_COLUMNS = ("uid", "source", "target", "t", "x", "y", "theta",
                   "cov_xx", "cov_xy", "cov_xt", "cov_yy", "cov_yt", "cov_tt",
                   "residual", "window_size", "degenerate", "converged")


class DatasetParseError(ValueError):
    def __init__(self, path: str, line_number: int, reason: str, line: str = ""):
        self.path = path
        self.line_number = line_number
        snippet = f": {line.strip()!r}" if line else ""
        super().__init__(f"{path}:{line_number}: {reason}{snippet}")


class DatasetValidationError(ValueError):
    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")


def _fmt(value: float) -> str:
    return format(float(value), _FLOAT)


def _read_lines(path: str) -> List[str]:
    try:
        with open(path, "rb") as fp:
            data = fp.read()
    except OSError as err:
        raise IOError(f"Error when trying to read the file {path}\n{err}")
    lines = []
    for number, raw in enumerate(data.splitlines(keepends=True), start=1):
        try:
            lines.append(raw.decode("utf-8"))
        except UnicodeDecodeError as err:
            raise DatasetParseError(path, number, f"not valid UTF-8 ({err.reason} at byte {err.start})")
    return lines


def write_text(path: str, text: str) -> None:
    """Writes ``text``, creating the parent directory on demand."""
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(text)
    except OSError as err:
        raise IOError(f"Error writing to the file system file: {err}")


def _records(path: str, allowed: Sequence[str]) -> Iterator[Tuple[int, str, str, List[str]]]:
    for number, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag not in allowed:
            raise DatasetParseError(path, number, f"unknown record type {tag!r}", raw)
        if len(tokens) != _FIELDS[tag]:
            raise DatasetParseError(path, number, f"{tag} expects {_FIELDS[tag] - 1} fields, got {len(tokens) - 1}",
                                    raw)
        yield number, raw, tag, tokens[1:]


def _robot(path, number, raw, token: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise DatasetParseError(path, number, f"robot id {token!r} is not an integer", raw)
    if value < 0:
        raise DatasetParseError(path, number, f"robot id {value} is negative", raw)
    return value


def _number(path, number, raw, token: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise DatasetParseError(path, number, f"{token!r} is not a number", raw)


def _pose_streams(path: str, tags: Sequence[str]):
    """Parses pose records of ``tags`` plus UWB records; validates per-robot time order."""
    streams = {tag: {} for tag in tags if tag in _POSE_TAGS}
    ranging: List[RangingMeasurement] = []
    last_uwb = None
    for number, raw, tag, fields in _records(path, tags):
        t = _number(path, number, raw, fields[0])
        if tag == "UWB":
            source = _robot(path, number, raw, fields[1])
            target = _robot(path, number, raw, fields[2])
            distance = _number(path, number, raw, fields[3])
            if last_uwb is not None and t < last_uwb:
                raise DatasetValidationError(path, number, f"UWB timestamp {t!r} goes back from {last_uwb!r}")
            try:
                ranging.append(RangingMeasurement(t, source, target, distance))
            except ParameterError as err:
                raise DatasetValidationError(path, number, str(err))
            last_uwb = t
            continue
        robot = _robot(path, number, raw, fields[1])
        pose = tuple(_number(path, number, raw, v) for v in fields[2:])
        times, poses = streams[tag].setdefault(robot, ([], []))
        if times and not t > times[-1]:
            raise DatasetValidationError(path, number,
                                         f"{tag} timestamps of robot {robot} must increase ({t!r} after {times[-1]!r})")
        times.append(t)
        poses.append(pose)
    trajectories = {tag: {robot: Trajectory(times, poses) for robot, (times, poses) in sorted(stream.items())}
                    for tag, stream in streams.items()}
    return trajectories, ranging


def read_dataset(path: str) -> Dataset:
    """
    Reads a dataset file. One record per line, fields separated by spaces, ``#``
    starts a comment::

        ODOM t robot x y theta
        UWB t from to dist
        GT t robot x y theta

    Raises:
        DatasetParseError: a malformed line (carries ``line_number``).
        DatasetValidationError: timestamps out of order, self-ranging or negative distance.
    """
    streams, ranging = _pose_streams(path, ("ODOM", "UWB", "GT"))
    truth = streams["GT"] or None
    logger.info(f"read {path}: {len(streams['ODOM'])} robots, {len(ranging)} ranging samples"
                f"{', with ground truth' if truth else ''}")
    return Dataset(odometry=streams["ODOM"], ranging=ranging, truth=truth)


def write_dataset(path: str, dataset: Dataset) -> None:
    """Writes records merged in time order (ODOM before UWB before GT at equal times)."""
    rows = []
    for robot, traj in dataset.odometry.items():
        for t, pose in traj.items():
            rows.append((t, 0, robot, 0, f"ODOM {_fmt(t)} {robot} {_fmt(pose.x)} {_fmt(pose.y)} {_fmt(pose.theta)}"))
    for m in dataset.ranging:
        rows.append((m.t, 1, m.source, m.target, f"UWB {_fmt(m.t)} {m.source} {m.target} {_fmt(m.distance)}"))
    for robot, traj in (dataset.truth or {}).items():
        for t, pose in traj.items():
            rows.append((t, 2, robot, 0, f"GT {_fmt(t)} {robot} {_fmt(pose.x)} {_fmt(pose.y)} {_fmt(pose.theta)}"))
    rows.sort(key=lambda r: r[:4])
    lines = ["# uwbslam dataset: ODOM t robot x y theta | UWB t from to dist | GT t robot x y theta"]
    lines.extend(r[4] for r in rows)
    write_text(path, "\n".join(lines) + "\n")


def write_trajectories(path: str, trajectories: Dict[int, Trajectory], tag: str = "EST") -> None:
    rows = []
    for robot, traj in trajectories.items():
        for t, pose in traj.items():
            rows.append((t, robot, f"{tag} {_fmt(t)} {robot} {_fmt(pose.x)} {_fmt(pose.y)} {_fmt(pose.theta)}"))
    rows.sort(key=lambda r: r[:2])
    write_text(path, "".join(r[2] + "\n" for r in rows))


def read_trajectories(path: str, tag: str = "EST") -> Dict[int, Trajectory]:
    streams, _ = _pose_streams(path, (tag,))
    return streams[tag]


def write_rows(path: str, rows: Iterable[Dict[str, Any]], columns: Sequence[str]) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fp:
            writer = csv.DictWriter(fp, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
    except OSError as err:
        raise IOError(f"Error writing to the file system file: {err}")


def read_rows(path: str) -> List[Dict[str, str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fp:
            return list(csv.DictReader(fp))
    except OSError as err:
        raise IOError(f"Error when trying to read the file {path}\n{err}")


def write_closures(path: str, closures: Iterable) -> None:
    rows = []
    for lc in closures:
        xx, xy, xt, yy, yt, tt = lc.covariance.upper_triangle()
        rows.append({"uid": lc.uid, "source": lc.source, "target": lc.target, "t": float(lc.t),
                     "x": lc.pose.x, "y": lc.pose.y, "theta": lc.pose.theta,
                     "cov_xx": float(xx), "cov_xy": float(xy), "cov_xt": float(xt),
                     "cov_yy": float(yy), "cov_yt": float(yt), "cov_tt": float(tt),
                     "residual": float(lc.residual), "window_size": lc.window_size,
                     "degenerate": int(lc.degenerate), "converged": int(lc.converged)})
    write_rows(path, rows, CLOSURE_COLUMNS)


def read_closures(path: str) -> List:
    from ..estimation import LoopClosure
    closures = []
    for number, row in enumerate(read_rows(path), start=2):
        try:
            closures.append(LoopClosure(
                    uid=int(row["uid"]), source=int(row["source"]), target=int(row["target"]), t=float(row["t"]),
                    pose=Pose2(float(row["x"]), float(row["y"]), float(row["theta"])),
                    covariance=Covariance3.from_upper_triangle(
                            [float(row[k]) for k in ("cov_xx", "cov_xy", "cov_xt", "cov_yy", "cov_yt", "cov_tt")]),
                    residual=float(row["residual"]), window_size=int(row["window_size"]),
                    degenerate=bool(int(row["degenerate"])), converged=bool(int(row["converged"]))))
        except (KeyError, TypeError, ValueError) as err:
            raise DatasetParseError(path, number, f"bad closure row ({err})")
    return closures


def write_json(path: str, data: Any) -> None:
    write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fp:
            return json.load(fp)
    except OSError as err:
        raise IOError(f"Error when trying to read the file {path}\n{err}")
    except ValueError as err:
        raise DatasetParseError(path, getattr(err, "lineno", 0), f"invalid json ({err})")


def optional_path(directory: str, name: str) -> Optional[str]:
    path = os.path.join(directory, name)
    return path if os.path.exists(path) else None

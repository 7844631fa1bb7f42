from typing import Tuple, Union

__all__ = ["get_version", "get_version_pep440_compliant"]

_RELEASE_LEVELS = {"alpha": "a", "beta": "b", "rc": "rc", "final": ""}


def get_version(version: Union[str, Tuple] = None) -> Tuple[int, int, int, str, int]:
    """
    Dotted version string to a 5-tuple, e.g. '0.3.0.final.0' -> (0, 3, 0, 'final', 0)
    """
    if version is None:
        from uwbslam import VERSION as version
    if isinstance(version, str):
        parts = version.split(".")
        if len(parts) != 5:
            raise ValueError(f"Version must have 5 dotted parts, got {version!r}")
        version = (int(parts[0]), int(parts[1]), int(parts[2]), parts[3], int(parts[4]))
    if version[3] not in _RELEASE_LEVELS:
        raise ValueError(f"Unknown release level {version[3]!r}")
    return tuple(version)


def get_version_pep440_compliant(version: str = None) -> str:
    major, minor, micro, level, serial = get_version(version)
    root_version = f"{major}.{minor}.{micro}"
    if level == "final":
        return root_version if serial == 0 else f"{root_version}.post{serial}"
    return f"{root_version}{_RELEASE_LEVELS[level]}{serial}"

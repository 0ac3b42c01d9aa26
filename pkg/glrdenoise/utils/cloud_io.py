"""
cloud_io.py - Point cloud files: PLY (ascii, binary little endian) and XYZ text

PLY files go through plyfile. Only the x, y, z vertex properties are read; every other
property is skipped with a warning. Files are written with double precision coordinates
so binary round trips are bit-exact and text round trips keep 17 significant digits.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyParseError

from ..config import TEXT_FLOAT_FORMAT
from ..core import PointCloud
from ..exceptions import CloudFormatError
from .logger import get_logger, log_diagnostic

logger = get_logger(__name__)

COMPONENT = "cloud_io"

COORDINATES = ("x", "y", "z")
VERTEX_DTYPE = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8")])


class CloudFormat(str, Enum):
    PLY_ASCII = "ply_ascii"
    PLY_BINARY_LE = "ply_binary_le"
    XYZ = "xyz"


@dataclass(frozen=True)
class CloudFile:
    path: str
    format: CloudFormat

    @classmethod
    def for_path(cls, path: Union[str, Path], format: Optional[CloudFormat] = None) -> "CloudFile":
        """Format from the extension: .xyz is text, .ply defaults to binary little endian."""
        if format is None:
            suffix = Path(path).suffix.lower()
            if suffix == ".xyz":
                format = CloudFormat.XYZ
            elif suffix == ".ply":
                format = CloudFormat.PLY_BINARY_LE
            else:
                raise CloudFormatError(f"unsupported layout: unknown extension '{suffix}' for {path}")
        return cls(str(path), CloudFormat(format))


# =============================================================================
# READING
# =============================================================================

def _header_lines(path: str) -> int:
    """Number of header lines up to and including end_header."""
    with open(path, "rb") as fid:
        for count, raw in enumerate(fid, start=1):
            if raw.strip() == b"end_header":
                return count
    return 0


def _first_data_line(ply: PlyData, path: str, element_name: str) -> int:
    """Line number of the first record of an ascii element."""
    line = _header_lines(path) + 1
    for element in ply.elements:
        if element.name == element_name:
            break
        line += element.count
    return line


def _load_ply(path: str) -> PlyData:
    try:
        return PlyData.read(path, mmap=False)
    except PlyElementParseError as exc:
        if "end-of-file" in exc.message:
            element = getattr(exc.element, "name", "vertex")
            count = getattr(exc.element, "count", "?")
            present = "fewer" if exc.row is None else exc.row
            raise CloudFormatError(f"corrupt header: {count} {element} records declared, "
                                   f"{present} present in {path}") from exc
        if exc.row is None:
            raise CloudFormatError(f"invalid coordinate in {path}: {exc.message}") from exc
        if _is_text_ply(path):
            line = _header_lines(path) + 1 + exc.row
            raise CloudFormatError(f"invalid coordinate at line {line}") from exc
        raise CloudFormatError(f"invalid coordinate at record {exc.row}") from exc
    except (PlyParseError, ValueError, KeyError, IndexError, UnicodeDecodeError) as exc:
        raise CloudFormatError(f"corrupt header: {exc} in {path}") from exc


def _is_text_ply(path: str) -> bool:
    with open(path, "rb") as fid:
        for raw in fid:
            tokens = raw.split()
            if tokens[:1] == [b"format"]:
                return tokens[1:2] == [b"ascii"]
            if tokens[:1] == [b"end_header"]:
                break
    return False


def _vertex_points(ply: PlyData, path: str) -> np.ndarray:
    if not ply.text and ply.byte_order == ">":
        raise CloudFormatError(f"unsupported layout: PLY format 'binary_big_endian' in {path}")
    names = [element.name for element in ply.elements]
    if "vertex" not in names:
        raise CloudFormatError(f"unsupported layout: no vertex element in {path}")

    vertex = ply["vertex"]
    fields = vertex.data.dtype.names or ()
    for axis in COORDINATES:
        if axis not in fields:
            raise CloudFormatError(f"unsupported layout: vertex property '{axis}' missing in {path}")
        kind = vertex.data.dtype[axis]
        if kind.kind != "f":
            raise CloudFormatError(f"unsupported layout: '{axis}' stored as {kind} in {path}")
    ignored = [name for name in fields if name not in COORDINATES]
    if ignored:
        log_diagnostic(logger, "PLY properties ignored", component=COMPONENT, operation="read_cloud",
                       path=path, properties=ignored)

    points = np.column_stack([np.asarray(vertex[axis], dtype=np.float64) for axis in COORDINATES])
    bad = np.flatnonzero(~np.all(np.isfinite(points), axis=1))
    if bad.size:
        if ply.text:
            line = _first_data_line(ply, path, "vertex") + int(bad[0])
            raise CloudFormatError(f"invalid coordinate at line {line}")
        raise CloudFormatError(f"invalid coordinate at record {int(bad[0])}")
    return points.reshape(-1, 3)


def _read_xyz(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fid:
        for line_no, line in enumerate(fid, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.replace(",", " ").split()
            try:
                row = [float(t) for t in tokens[:3]]
            except ValueError:
                raise CloudFormatError(f"invalid coordinate at line {line_no}")
            if len(row) < 3 or not all(np.isfinite(row)):
                raise CloudFormatError(f"invalid coordinate at line {line_no}")
            rows.append(row)
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def read_cloud(file: Union[CloudFile, str, Path]) -> PointCloud:
    """Points in file order; the PLY variant is taken from the header."""
    path = str(file.path if isinstance(file, CloudFile) else file)
    if Path(path).suffix.lower() == ".xyz" or (isinstance(file, CloudFile) and file.format is CloudFormat.XYZ):
        points = _read_xyz(path)
    else:
        points = _vertex_points(_load_ply(path), path)
    return PointCloud(points, {"source": path})


# =============================================================================
# WRITING
# =============================================================================

def write_cloud(cloud: PointCloud, file: Union[CloudFile, str, Path]) -> None:
    """Writes the cloud in the file's format; I/O errors name the path."""
    target = file if isinstance(file, CloudFile) else CloudFile.for_path(file)
    points = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)
    try:
        if target.format is CloudFormat.XYZ:
            np.savetxt(target.path, points, fmt=TEXT_FLOAT_FORMAT, delimiter=" ")
            return
        records = np.empty(points.shape[0], dtype=VERTEX_DTYPE)
        for column, axis in enumerate(COORDINATES):
            records[axis] = points[:, column]
        vertex = PlyElement.describe(records, "vertex")
        PlyData([vertex], text=target.format is CloudFormat.PLY_ASCII, byte_order="<").write(target.path)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write point cloud: {exc.strerror}", target.path) from exc

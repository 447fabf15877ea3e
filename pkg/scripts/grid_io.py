"""SGRD grid files and PGM quicklooks.

SGRD layout (little-endian):
    b"SGRD", version byte 0x01,
    ncols u32, nrows u32, pixel_size_m f64, origin_lat f64, origin_lon f64,
    nrows*ncols f32 values row-major, invalid pixels as quiet NaN.
"""
import os
import struct

import numpy as np
from PIL import Image

import utils
from raster_core import Grid

logger = utils.setup_logging(__name__)

MAGIC = b"SGRD"
VERSION = 1
_HEADER = struct.Struct("<4sBIIddd")


class GridFormatError(utils.DataError):
    pass


def encode_sgrd(grid):
    header = _HEADER.pack(MAGIC, VERSION, grid.ncols, grid.nrows,
                          grid.pixel_size_m, grid.origin_lat, grid.origin_lon)
    body = np.where(grid.validity, grid.values, np.nan).astype("<f4")
    return header + body.tobytes(order="C")


def decode_sgrd(data):
    if len(data) < _HEADER.size:
        raise GridFormatError(f"SGRD too short: {len(data)} bytes")
    magic, version, ncols, nrows, pixel, lat, lon = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise GridFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise GridFormatError(f"unsupported SGRD version {version}")
    expected = _HEADER.size + 4 * ncols * nrows
    if len(data) != expected:
        raise GridFormatError(f"SGRD size {len(data)} != expected {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(nrows, ncols)
    values = values.astype(float)
    validity = ~np.isnan(values)
    return Grid(np.where(validity, values, 0.0), validity, pixel, lat, lon)


def write_sgrd(grid, path):
    utils.ensure_dir(os.path.dirname(os.path.abspath(path)))
    with open(path, "wb") as f:
        f.write(encode_sgrd(grid))
    logger.info(f"Wrote {grid.ncols}x{grid.nrows} grid at {grid.pixel_size_m} m: {path}")
    return path


def read_sgrd(path):
    if not os.path.exists(path):
        raise GridFormatError(f"grid file not found: {path}")
    with open(path, "rb") as f:
        return decode_sgrd(f.read())


def write_pgm(grid, path, vmin=None, vmax=None):
    """Write an 8-bit graymap, linear between vmin and vmax (255 = vmax).

    Invalid pixels are written as 0. A sidecar `<path>.txt` records the
    scaling so pixel values can be mapped back.
    """
    valid_vals = grid.values[grid.validity]
    if vmin is None:
        vmin = float(valid_vals.min()) if valid_vals.size else 0.0
    if vmax is None:
        vmax = float(valid_vals.max()) if valid_vals.size else 1.0
    if vmax <= vmin:
        vmax = vmin + 1.0

    scale = (vmax - vmin) / 255.0
    pix = np.clip(np.round((grid.values - vmin) / scale), 0, 255)
    pix = np.where(grid.validity, pix, 0).astype(np.uint8)

    utils.ensure_dir(os.path.dirname(os.path.abspath(path)))
    Image.fromarray(pix).save(path, format="PPM")
    with open(f"{path}.txt", "w") as f:
        f.write("maxval = 255\n")
        f.write(f"offset = {utils.format_float(vmin)}\n")
        f.write(f"scale = {utils.format_float(scale)}\n")
        f.write("value = offset + pixel * scale (invalid pixels written as 0)\n")
    logger.info(f"Wrote PGM quicklook: {path}")
    return path

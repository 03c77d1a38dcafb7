"""On-disk formats.

``MCF1``  16-byte header ``b"MCF1", u32 C, u32 N, u32 dtype`` then ``C*N*N``
          little-endian float64 values, channel-row-major. Phase profiles,
          PSFs and sensor images.
``MCK1``  20-byte header ``b"MCK1", u32 K, u32 C, u32 k, u32 dtype`` then
          ``K*C*k*k`` float64 values. Kernel sets.
``MCN1``  ``b"MCN1", u32 count`` then per tensor ``u32 name_len, name (utf-8),
          u32 ndim, u32 dims..., float64 data``. Network checkpoints.

Text formats are UTF-8 with ``\\n`` line endings: key=value files (``#``
comments), CSVs with a header row, and 16-bit binary PGM with the intensity
mapping stored in a header comment.
"""
import csv
import os
import struct

import numpy as np

from .errors import ParseError

DTYPE_F64 = 1
_MCF = struct.Struct("<4sIII")
_MCK = struct.Struct("<4sIIII")


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def _payload(data, offset, count, path):
    need = offset + 8 * count
    if len(data) != need:
        raise ParseError(f"{path}: expected {need} bytes, file has {len(data)}",
                         f"offset {min(len(data), need)}")
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(float)


def write_mcf(path, array):
    a = np.asarray(array, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError(f"MCF1 stores (C, N, N) arrays, got {a.shape}")
    with open(path, "wb") as fh:
        fh.write(_MCF.pack(b"MCF1", a.shape[0], a.shape[1], DTYPE_F64))
        fh.write(a.astype("<f8").tobytes(order="C"))


def read_mcf(path):
    """Read an MCF1 file as a ``(C, N, N)`` float array."""
    data = _read_bytes(path)
    if len(data) < _MCF.size:
        raise ParseError(f"{path}: truncated header", f"offset {len(data)}")
    magic, c, n, dtype = _MCF.unpack_from(data)
    if magic != b"MCF1":
        raise ParseError(f"{path}: bad magic {magic!r}", "offset 0")
    if dtype != DTYPE_F64:
        raise ParseError(f"{path}: unsupported dtype tag {dtype}", "offset 12")
    return _payload(data, _MCF.size, c * n * n, path).reshape(c, n, n)


def write_mck(path, kernels):
    k = np.asarray(kernels, dtype=float)
    if k.ndim != 4:
        raise ValueError(f"MCK1 stores (K, C, k, k) arrays, got {k.shape}")
    with open(path, "wb") as fh:
        fh.write(_MCK.pack(b"MCK1", k.shape[0], k.shape[1], k.shape[2], DTYPE_F64))
        fh.write(k.astype("<f8").tobytes(order="C"))


def read_mck(path):
    data = _read_bytes(path)
    if len(data) < _MCK.size:
        raise ParseError(f"{path}: truncated header", f"offset {len(data)}")
    magic, nk, nc, k, dtype = _MCK.unpack_from(data)
    if magic != b"MCK1":
        raise ParseError(f"{path}: bad magic {magic!r}", "offset 0")
    if dtype != DTYPE_F64:
        raise ParseError(f"{path}: unsupported dtype tag {dtype}", "offset 16")
    return _payload(data, _MCK.size, nk * nc * k * k, path).reshape(nk, nc, k, k)


def write_tensors(path, tensors):
    """Write named float64 tensors (``dict`` order is preserved)."""
    with open(path, "wb") as fh:
        fh.write(b"MCN1" + struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            a = np.asarray(value, dtype=float)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            fh.write(a.astype("<f8").tobytes(order="C"))


def read_tensors(path):
    data = _read_bytes(path)
    if data[:4] != b"MCN1":
        raise ParseError(f"{path}: bad magic {data[:4]!r}", "offset 0")
    pos = 4
    out = {}
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        for _ in range(count):
            (ln,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape))
            if pos + 8 * size > len(data):
                raise ParseError(f"{path}: tensor {name!r} truncated", f"offset {pos}")
            out[name] = np.frombuffer(data, "<f8", size, pos).astype(float).reshape(shape)
            pos += 8 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: corrupt tensor section ({exc})", f"offset {pos}") from None
    if pos != len(data):
        raise ParseError(f"{path}: trailing bytes", f"offset {pos}")
    return out


# --- text formats --------------------------------------------------------

def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in np.asarray(value).tolist())
    return str(value)


def write_kv(path, items, header=None):
    lines = [f"# {line}" for line in (header or "").splitlines()]
    lines += [f"{k}={format_value(v)}" for k, v in items.items()]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_kv(path):
    """Parse ``key=value`` lines into a dict of strings; ``#`` starts a comment line."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}: expected key=value", f"line {lineno}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ParseError(f"{path}: empty key", f"line {lineno}")
            out[key] = value.strip()
    return out


def layout_to_kv(layout):
    return {
        "kernel_size": layout.kernel_size,
        "pad": layout.pad,
        "tile_size": layout.tile_size,
        "grid_rows": layout.grid_rows,
        "grid_cols": layout.grid_cols,
        "mask_resolution": layout.mask_resolution,
        "num_tiles": len(layout.tile_centers),
        "normalization": float(layout.normalization),
        "channel_scale": np.asarray(layout.channel_scale, dtype=float),
        "tile_rows": layout.tile_centers[:, 0],
        "tile_cols": layout.tile_centers[:, 1],
        "polarity": layout.polarity,
        "kernel_index": layout.kernel_index,
    }


def layout_from_kv(kv):
    from .layout import TileLayout

    def ints(key):
        return np.array([int(v) for v in kv[key].split(",")], dtype=int)

    try:
        return TileLayout(
            kernel_size=int(kv["kernel_size"]),
            pad=int(kv["pad"]),
            grid_rows=int(kv["grid_rows"]),
            grid_cols=int(kv["grid_cols"]),
            mask_resolution=int(kv["mask_resolution"]),
            tile_centers=np.stack([ints("tile_rows"), ints("tile_cols")], axis=1),
            polarity=ints("polarity"),
            kernel_index=ints("kernel_index"),
            channel_scale=np.array([float(v) for v in kv["channel_scale"].split(",")]),
            normalization=float(kv["normalization"]),
        )
    except KeyError as exc:
        raise ParseError(f"layout sidecar is missing field {exc.args[0]!r}") from None


def write_layout(path, layout):
    write_kv(path, layout_to_kv(layout), header="tile layout")


def read_layout(path):
    return layout_from_kv(read_kv(path))


def write_orientation_csv(path, angles):
    """Rows ``row,col,channel,angle_radians``, channel-major then row-major."""
    a = np.asarray(angles, dtype=float)
    if a.ndim == 2:
        a = a[None]
    with open(path, "w", newline="\n") as fh:
        fh.write("row,col,channel,angle_radians\n")
        for c in range(a.shape[0]):
            for r in range(a.shape[1]):
                fh.write("".join(f"{r},{col},{c},{v!r}\n" for col, v in enumerate(a[c, r].tolist())))


def read_orientation_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row", "col", "channel", "angle_radians"]:
            raise ParseError(f"{path}: unexpected header {header!r}", "line 1")
        for lineno, row in enumerate(reader, start=2):
            try:
                r, col, c, v = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: malformed row {row!r}", f"line {lineno}") from None
            rows.append((r, col, c, v))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    idx = np.array([x[:3] for x in rows])
    nr, ncol, nc = idx.max(axis=0) + 1
    out = np.full((nc, nr, ncol), np.nan)
    out[idx[:, 2], idx[:, 0], idx[:, 1]] = [x[3] for x in rows]
    if np.isnan(out).any():
        raise ParseError(f"{path}: missing elements")
    return out


def write_trace_csv(path, losses):
    with open(path, "w", newline="\n") as fh:
        fh.write("iteration,loss\n")
        fh.write("".join(f"{i},{float(v)!r}\n" for i, v in enumerate(losses)))


def read_trace_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "iteration,loss":
        raise ParseError(f"{path}: unexpected header", "line 1")
    return [float(line.split(",")[1]) for line in lines[1:] if line]


def write_pgm16(path, image, lo=None, hi=None):
    """Write a 16-bit PGM mapping ``[lo, hi]`` affinely onto ``[0, 65535]``.

    The mapping is recorded as ``# affine lo=<lo> hi=<hi>`` in the header.
    Returns ``(lo, hi)``.
    """
    img = np.asarray(image, dtype=float)
    lo = float(img.min()) if lo is None else float(lo)
    hi = float(img.max()) if hi is None else float(hi)
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.rint((img - lo) / span * 65535.0), 0, 65535).astype(">u2")
    h, w = img.shape
    header = f"P5\n# affine lo={lo!r} hi={hi!r}\n{w} {h}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + q.tobytes())
    return lo, hi


def read_pgm16(path):
    """Return ``(values, (lo, hi))`` with values mapped back to the original scale."""
    data = _read_bytes(path)
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1:end].decode("ascii").strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5" or int(tokens[3]) != 65535:
        raise ParseError(f"{path}: not a 16-bit binary PGM", "offset 0")
    w, h = int(tokens[1]), int(tokens[2])
    q = np.frombuffer(data, ">u2", w * h, pos).reshape(h, w).astype(float)
    lo, hi = 0.0, 65535.0
    for c in comments:
        if c.startswith("affine"):
            fields = dict(f.split("=") for f in c.split()[1:])
            lo, hi = float(fields["lo"]), float(fields["hi"])
    span = hi - lo if hi > lo else 1.0
    return lo + q / 65535.0 * span, (lo, hi)


def load_ppm_dataset(directory):
    """Load ``labels.csv`` (``filename,label``) and the PPM images it names.

    Returns ``(scenes, labels)`` with scenes ``(B, 3, S, S)`` scaled to ``[0, 1]``.
    """
    from PIL import Image

    path = os.path.join(directory, "labels.csv")
    scenes, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[0] == "filename":
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected filename,label", f"line {lineno}")
            with Image.open(os.path.join(directory, row[0])) as im:
                arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
            scenes.append(arr.transpose(2, 0, 1))
            labels.append(int(row[1]))
    return np.stack(scenes), np.array(labels)

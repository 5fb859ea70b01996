"""Artifact formats: versioned little-endian binaries, CSV tables and hashes."""
import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

VERSION = 1
_SPECTRUM = b"IBVS"
_NORMAL = b"IBVN"
_DNMAP = b"IBVD"
_CGO = b"IBVC"


def fmt(x):
    """Round-trip float text (17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialise {type(o).__name__}")


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def surface_hash(surface):
    h = hashlib.sha256()
    src = surface.source
    if isinstance(src, np.ndarray):
        h.update(np.ascontiguousarray(src, float).tobytes())
    else:
        h.update(str(src).encode())
    h.update(struct.pack("<I", surface.grid_resolution))
    return h.digest()[:16]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# -- binaries ---------------------------------------------------------------

def _head(magic):
    return magic + struct.pack("<I", VERSION)


def _check_head(buf, magic):
    if buf[:4] != magic:
        raise ValueError(f"not a {magic.decode()} file")
    (ver,) = struct.unpack_from("<I", buf, 4)
    if ver != VERSION:
        raise ValueError(f"unsupported version {ver}")
    return 8


def write_spectrum(path, spectrum, surface):
    """Cache: magic, version, grid hash (16 bytes), K, N, eigenvalues, mass, eigenfields (row-major)."""
    K = spectrum.count
    N = spectrum.eigenfields.shape[0]
    with open(path, "wb") as fh:
        fh.write(_head(_SPECTRUM) + surface_hash(surface) + struct.pack("<II", K, N))
        fh.write(np.asarray(spectrum.eigenvalues, "<f8").tobytes())
        fh.write(np.asarray(spectrum.mass, "<f8").tobytes())
        fh.write(np.ascontiguousarray(spectrum.eigenfields, "<f8").tobytes())


def read_spectrum(path, surface=None):
    from .spectral import DirichletSpectrum
    buf = Path(path).read_bytes()
    off = _check_head(buf, _SPECTRUM)
    key = buf[off:off + 16]
    off += 16
    if surface is not None and key != surface_hash(surface):
        raise ValueError("spectrum cache belongs to a different surface")
    K, N = struct.unpack_from("<II", buf, off)
    off += 8
    ev = np.frombuffer(buf, "<f8", K, off)
    off += 8 * K
    mass = np.frombuffer(buf, "<f8", N, off)
    off += 8 * N
    V = np.frombuffer(buf, "<f8", N * K, off).reshape(N, K)
    res = surface.grid_resolution if surface is not None else 0
    return DirichletSpectrum(ev.copy(), V.copy(), mass.copy(), res)


def write_normal_matrix(path, nm):
    """magic, version, sigma (re, im), n, coords (n x 2), entries (re then im, row-major)."""
    n = nm.entries.shape[0]
    s = complex(nm.sigma)
    E = np.asarray(nm.entries, complex)
    with open(path, "wb") as fh:
        fh.write(_head(_NORMAL) + struct.pack("<ddI", s.real, s.imag, n))
        fh.write(np.ascontiguousarray(nm.coords, "<f8").tobytes())
        fh.write(np.ascontiguousarray(E.real, "<f8").tobytes())
        fh.write(np.ascontiguousarray(E.imag, "<f8").tobytes())


def read_normal_matrix(path):
    buf = Path(path).read_bytes()
    off = _check_head(buf, _NORMAL)
    sr, si, n = struct.unpack_from("<ddI", buf, off)
    off += 20
    coords = np.frombuffer(buf, "<f8", 2 * n, off).reshape(n, 2)
    off += 16 * n
    re = np.frombuffer(buf, "<f8", n * n, off).reshape(n, n)
    off += 8 * n * n
    im = np.frombuffer(buf, "<f8", n * n, off).reshape(n, n)
    return complex(sr, si), coords.copy(), re + 1j * im


def write_dn_map(path, dn):
    """magic, version, mesh hash (16 ASCII hex), n, matrix (row-major)."""
    A = np.ascontiguousarray(dn.matrix, "<f8")
    with open(path, "wb") as fh:
        fh.write(_head(_DNMAP) + dn.grid.hash.encode()[:16].ljust(16, b"0") + struct.pack("<I", A.shape[0]))
        fh.write(A.tobytes())


def read_dn_map(path):
    buf = Path(path).read_bytes()
    off = _check_head(buf, _DNMAP)
    mesh = buf[off:off + 16].decode()
    (n,) = struct.unpack_from("<I", buf, off + 16)
    A = np.frombuffer(buf, "<f8", n * n, off + 20).reshape(n, n)
    return mesh, A.copy()


def write_cgo(path, cg):
    """magic, version, tau, sigma, omega (2), sign, ns, N, s nodes, x nodes (N x 2),
    amplitude and remainder (complex128, row-major (ns, N))."""
    grid = cg.grid
    nodes = grid.surface.nodes
    ns, N = cg.amplitude.shape
    with open(path, "wb") as fh:
        fh.write(_head(_CGO) + struct.pack("<dddddiII", cg.tau, cg.sigma, cg.omega[0], cg.omega[1],
                                           cg.tau_nudge, cg.sign, ns, N))
        fh.write(np.asarray(cg.phi, "<f8").tobytes())
        fh.write(np.ascontiguousarray(nodes, "<f8").tobytes())
        fh.write(np.ascontiguousarray(cg.amplitude, "<c16").tobytes())
        fh.write(np.ascontiguousarray(cg.remainder, "<c16").tobytes())


def read_cgo(path):
    buf = Path(path).read_bytes()
    off = _check_head(buf, _CGO)
    tau, sigma, ox, oy, nudge, sign, ns, N = struct.unpack_from("<dddddiII", buf, off)
    off += struct.calcsize("<dddddiII")
    s = np.frombuffer(buf, "<f8", ns, off)
    off += 8 * ns
    nodes = np.frombuffer(buf, "<f8", 2 * N, off).reshape(N, 2)
    off += 16 * N
    a = np.frombuffer(buf, "<c16", ns * N, off).reshape(ns, N)
    off += 16 * ns * N
    r = np.frombuffer(buf, "<c16", ns * N, off).reshape(ns, N)
    return {"tau": tau, "sigma": sigma, "omega": (ox, oy), "tau_nudge": nudge, "sign": sign, "s": s.copy(),
            "nodes": nodes.copy(), "amplitude": a.copy(), "remainder": r.copy()}


def sinogram_rows(sino, surface):
    """Rows ``(omega_arclength, direction_angle, mu, re_value, im_value)``."""
    fan = sino.fan
    arc = surface.boundary_arclength(fan.phi)
    rows = []
    for i in range(fan.shape[0]):
        for j in range(fan.shape[1]):
            v = complex(sino.values[i, j])
            rows.append((arc[i], fan.alpha[j], fan.santalo[i, j], v.real, v.imag))
    return rows


SINOGRAM_HEADER = ("omega_arclength", "direction_angle", "mu", "re_value", "im_value")

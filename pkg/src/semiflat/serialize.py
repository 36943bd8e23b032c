"""On-disk formats: binary grid files for connections, columnar text for
plot-ready data, key-value text reports, and the hashed run manifest.

Binary layout (little-endian): an 8-byte magic, a u32 kind tag, the header
fields of the kind, then row-major complex128 payloads.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .fiber_gauge import FiberConnection
from .hym_solver import Connection4D

MAGIC = b"SFLGRID\x01"
KIND_FIBER = 1
KIND_CONN4D = 2


def save_fiber_connection(path, conn: FiberConnection):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", KIND_FIBER, conn.n))
        fh.write(struct.pack("<dI", conn.fiber_period, 2))
        for comp in (conn.ax, conn.ay):
            fh.write(np.ascontiguousarray(comp, dtype="<c16").tobytes())


def load_fiber_connection(path) -> FiberConnection:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a grid file")
        kind, n = struct.unpack("<II", fh.read(8))
        if kind != KIND_FIBER:
            raise ValueError(f"{path}: not a fiber connection file")
        period, ncomp = struct.unpack("<dI", fh.read(12))
        comps = []
        for _ in range(ncomp):
            buf = fh.read(n * n * 4 * 16)
            comps.append(np.frombuffer(buf, dtype="<c16").reshape(n, n, 2, 2))
    return FiberConnection(comps[0].copy(), comps[1].copy(), period)


def save_connection4d(path, conn: Connection4D):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", KIND_CONN4D, conn.nb))
        fh.write(struct.pack("<I", conn.nf))
        fh.write(struct.pack("<4d", *conn.base_period, *conn.fiber_period))
        fh.write(struct.pack("<d", conn.epsilon))
        fh.write(struct.pack("<4q", *conn.winding_su2.ravel()))
        fh.write(struct.pack("<4q", *conn.winding_trace.ravel()))
        fh.write(np.ascontiguousarray(conn.conformal_factor, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", 4))
        for comp in conn.fields():
            fh.write(np.ascontiguousarray(comp, dtype="<c16").tobytes())


def load_connection4d(path) -> Connection4D:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a grid file")
        kind, nb = struct.unpack("<II", fh.read(8))
        if kind != KIND_CONN4D:
            raise ValueError(f"{path}: not a 4D connection file")
        (nf,) = struct.unpack("<I", fh.read(4))
        periods = struct.unpack("<4d", fh.read(32))
        (eps,) = struct.unpack("<d", fh.read(8))
        w_su2 = np.array(struct.unpack("<4q", fh.read(32)), dtype=int).reshape(2, 2)
        w_tr = np.array(struct.unpack("<4q", fh.read(32)), dtype=int).reshape(2, 2)
        cf = np.frombuffer(fh.read(nb * nb * 8), dtype="<f8").reshape(nb, nb)
        (ncomp,) = struct.unpack("<I", fh.read(4))
        comps = []
        for _ in range(ncomp):
            buf = fh.read(nb * nb * nf * nf * 4 * 16)
            comps.append(np.frombuffer(buf, dtype="<c16")
                         .reshape(nb, nb, nf, nf, 2, 2).copy())
    return Connection4D(*comps, epsilon=eps, base_period=periods[:2],
                        fiber_period=periods[2:], winding_su2=w_su2,
                        winding_trace=w_tr, conformal_factor=cf.copy())


# ---------------------------------------------------------------------------
# text artifacts
# ---------------------------------------------------------------------------

def write_report(path, sections: dict):
    """Key-value report: '[section]' headers, 'key = value' lines, stable
    ordering and repr so reruns are bit-identical."""
    lines = []
    for sec in sorted(sections):
        lines.append(f"[{sec}]")
        body = sections[sec]
        for key in sorted(body):
            val = body[key]
            if isinstance(val, float):
                val = f"{val:.17g}"
            lines.append(f"{key} = {val}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def read_report(path) -> dict:
    out = {}
    sec = None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            sec = line[1:-1]
            out[sec] = {}
        elif "=" in line and sec is not None:
            k, v = line.split("=", 1)
            out[sec][k.strip()] = v.strip()
    return out


def write_columns(path, header, columns):
    arr = np.column_stack(columns)
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in arr:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def write_multisection(path, section):
    """Columnar text: s, t, branch, a, b plus the winding declaration."""
    nb = section.branches[0].a.shape[0]
    ls, lt = section.base_period
    s = np.repeat(np.arange(nb) * ls / nb, nb)
    t = np.tile(np.arange(nb) * lt / nb, nb)
    cols_s, cols_t, cols_br, cols_a, cols_b, cols_m = [], [], [], [], [], []
    masked = section.masked if section.masked is not None else np.zeros((nb, nb), bool)
    for bi, br in enumerate(section.branches):
        cols_s.append(s)
        cols_t.append(t)
        cols_br.append(np.full(nb * nb, float(bi)))
        cols_a.append(br.a.ravel())
        cols_b.append(br.b.ravel())
        cols_m.append(masked.ravel().astype(float))
    with open(path, "w") as fh:
        fh.write(f"# c0 = {section.c0:.17g}\n")
        fh.write(f"# provenance = {section.provenance}\n")
        for bi, br in enumerate(section.branches):
            fh.write(f"# branch {bi} winding_a = {br.winding_a} "
                     f"winding_b = {br.winding_b}\n")
        fh.write("# s t branch a b masked\n")
        for blk in range(len(section.branches)):
            arr = np.column_stack([cols_s[blk], cols_t[blk], cols_br[blk],
                                   cols_a[blk], cols_b[blk], cols_m[blk]])
            for row in arr:
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def write_family_columns(path, entry):
    """Per-scale columnar data: base site, cell mass, section value, defects."""
    nb = entry.mu.shape[0]
    i = np.repeat(np.arange(nb), nb).astype(float)
    j = np.tile(np.arange(nb), nb).astype(float)
    mu = entry.mu.ravel()
    if entry.phi is not None:
        a_re = entry.phi.lifts.real.ravel()
        a_im = entry.phi.lifts.imag.ravel()
    else:
        a_re = np.full(nb * nb, np.nan)
        a_im = np.full(nb * nb, np.nan)
    c = entry.c_field.ravel()
    write_columns(path, ["i", "j", "mu", "a_real", "a_imag", "c_stat"],
                  [i, j, mu, a_re, a_im, c])


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, artifacts, config_echo, status="ok"):
    out_dir = Path(out_dir)
    entries = {}
    for name in sorted(artifacts):
        p = out_dir / name
        if p.exists():
            entries[name] = sha256_of(p)
    manifest = {"status": status, "artifacts": entries, "config": config_echo}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return manifest

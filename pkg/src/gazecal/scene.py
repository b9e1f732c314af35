"""Static triangle-mesh scenes with a BVH for nearest-hit ray queries."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import _kernels
from .errors import SceneFormatError

LEAF_SIZE = 4
MIN_AREA = 1e-12


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class SceneModel:
    """Immutable triangle mesh.

    Degenerate (near zero-area) triangles are dropped at construction; the
    kept triangles are numbered ``0..n-1`` in input order and that numbering
    is what :meth:`cast` reports.
    """

    def __init__(self, vertices, triangles):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) == 0:
            raise SceneFormatError("scene has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise SceneFormatError("triangle index out of range")
        if not np.all(np.isfinite(vertices)):
            raise SceneFormatError("non-finite vertex")
        corners = vertices[triangles]
        area = 0.5 * np.linalg.norm(
            np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
        keep = area > MIN_AREA
        if not keep.any():
            raise SceneFormatError("all triangles are degenerate")
        self.vertices = _readonly(vertices)
        self.triangles = _readonly(triangles[keep])
        self._build_bvh(vertices[self.triangles])

    def __len__(self):
        return len(self.triangles)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def _build_bvh(self, corners):
        cent = corners.mean(axis=1)
        lo = corners.min(axis=1)
        hi = corners.max(axis=1)
        nmin, nmax, nleft, nstart, ncount = [], [], [], [], []
        order = []

        def new_node():
            for lst, v in ((nmin, None), (nmax, None), (nleft, -1), (nstart, 0), (ncount, 0)):
                lst.append(v)
            return len(nleft) - 1

        root = new_node()
        work = [(root, np.arange(len(corners)))]
        while work:
            node, idx = work.pop()
            nmin[node] = lo[idx].min(axis=0)
            nmax[node] = hi[idx].max(axis=0)
            if len(idx) <= LEAF_SIZE:
                nstart[node] = len(order)
                ncount[node] = len(idx)
                order.extend(idx.tolist())
                continue
            axis, half, idx = _sah_split(idx, cent, lo, hi)
            left = new_node()
            right = new_node()
            assert right == left + 1
            nleft[node] = left
            work.append((right, idx[half:]))
            work.append((left, idx[:half]))

        self._order = _readonly(np.array(order, dtype=np.int64))
        self._tris = _readonly(corners[self._order])
        self._nmin = _readonly(np.array(nmin, dtype=float))
        self._nmax = _readonly(np.array(nmax, dtype=float))
        self._nleft = _readonly(np.array(nleft, dtype=np.int64))
        self._nstart = _readonly(np.array(nstart, dtype=np.int64))
        self._ncount = _readonly(np.array(ncount, dtype=np.int64))

    @property
    def bvh(self):
        """Flattened BVH arrays in the order the kernels expect."""
        return (self._tris, self._nmin, self._nmax, self._nleft, self._nstart, self._ncount)

    def cast(self, origins, directions):
        """Nearest hit for each ray ``origin + t * direction``.

        Returns ``(t, tri)`` arrays; misses have ``t = inf`` and ``tri = -1``.
        """
        o = np.ascontiguousarray(np.broadcast_to(origins, np.shape(directions)), dtype=float).reshape(-1, 3)
        d = np.ascontiguousarray(directions, dtype=float).reshape(-1, 3)
        t, k = _kernels.cast_rays(o, d, *self.bvh)
        tri = np.where(k >= 0, self._order[np.maximum(k, 0)], -1)
        shape = np.shape(directions)[:-1]
        return t.reshape(shape), tri.reshape(shape)

    def cast_exhaustive(self, origins, directions):
        """Reference nearest-hit query testing every triangle (Moller-Trumbore).

        Pure numpy and independent of the BVH; meant for verification.
        """
        o = np.broadcast_to(origins, np.shape(directions)).reshape(-1, 3).astype(float)
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        c = self.vertices[self.triangles]
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        p = np.cross(d[:, None, :], e2[None])
        det = np.einsum("tk,rtk->rt", e1, p)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            s = o[:, None, :] - c[None, :, 0]
            u = np.einsum("rtk,rtk->rt", s, p) * inv
            q = np.cross(s, e1[None])
            v = np.einsum("rk,rtk->rt", d, q) * inv
            t = np.einsum("tk,rtk->rt", e2, q) * inv
        tmin = _kernels.HIT_EPS / np.linalg.norm(d, axis=1)
        ok = (det != 0) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > tmin[:, None])
        t = np.where(ok, t, np.inf)
        k = np.argmin(t, axis=1)
        best = t[np.arange(len(t)), k]
        tri = np.where(np.isfinite(best), k, -1)
        shape = np.shape(directions)[:-1]
        return best.reshape(shape), tri.reshape(shape)

    # -- file I/O ---------------------------------------------------------

    @classmethod
    def from_obj(cls, path) -> "SceneModel":
        vertices, triangles = parse_obj(Path(path).read_text())
        return cls(vertices, triangles)

    def to_obj(self, path, header=None):
        lines = []
        if header:
            lines += [f"# {h}" for h in header.splitlines()]
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in self.vertices.tolist()]
        lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in self.triangles.tolist()]
        Path(path).write_text("\n".join(lines) + "\n")


def _surface_area(lo, hi):
    e = np.maximum(hi - lo, 0.0)
    return 2.0 * (e[..., 0] * e[..., 1] + e[..., 1] * e[..., 2] + e[..., 2] * e[..., 0])


def _sah_split(idx, cent, lo, hi):
    """Best surface-area-heuristic split of ``idx`` over sorted centroid prefixes."""
    best = (np.inf, 0, len(idx) // 2, idx)
    for axis in range(3):
        # stable sort keeps the build deterministic for coincident centroids
        order = idx[np.argsort(cent[idx, axis], kind="stable")]
        l_lo = np.minimum.accumulate(lo[order], axis=0)
        l_hi = np.maximum.accumulate(hi[order], axis=0)
        r_lo = np.minimum.accumulate(lo[order][::-1], axis=0)[::-1]
        r_hi = np.maximum.accumulate(hi[order][::-1], axis=0)[::-1]
        n = np.arange(1, len(order))
        cost = _surface_area(l_lo[:-1], l_hi[:-1]) * n + _surface_area(r_lo[1:], r_hi[1:]) * n[::-1]
        k = int(np.argmin(cost))
        if cost[k] < best[0]:
            best = (cost[k], axis, k + 1, order)
    _, axis, half, order = best
    return axis, half, order


def parse_obj(text: str):
    """Vertices and fan-triangulated faces from the ``v``/``f`` subset of OBJ."""
    vertices = []
    faces = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise SceneFormatError("vertex needs three coordinates", lineno)
            try:
                vertices.append([float(x) for x in rest[:3]])
            except ValueError:
                raise SceneFormatError(f"bad vertex {line!r}", lineno) from None
        elif tag == "f":
            if len(rest) < 3:
                raise SceneFormatError("face needs at least three vertices", lineno)
            idx = []
            for tok in rest:
                try:
                    i = int(tok.split("/")[0])
                except ValueError:
                    raise SceneFormatError(f"bad face index {tok!r}", lineno) from None
                if i < 0:
                    i = len(vertices) + i + 1
                if not 1 <= i <= len(vertices):
                    raise SceneFormatError(f"face index {tok} out of range", lineno)
                idx.append(i - 1)
            for a in range(1, len(idx) - 1):
                faces.append((idx[0], idx[a], idx[a + 1]))
    if not faces:
        raise SceneFormatError("no faces in OBJ data")
    return np.array(vertices, dtype=float), np.array(faces, dtype=np.int64)


def box_mesh(lo, hi):
    """Axis-aligned box as 8 vertices and 12 triangles."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], dtype=float)
    quads = [(0, 1, 2, 3), (4, 7, 6, 5), (0, 4, 5, 1), (3, 2, 6, 7), (0, 3, 7, 4), (1, 5, 6, 2)]
    f = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return v, np.array(f, dtype=np.int64)


def quad_mesh(corners):
    """Planar quad from four corners given in order."""
    v = np.asarray(corners, dtype=float)
    return v, np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)


def tiled_box_shell(lo, hi, tile=1.0):
    """Inside of a box room, each face split into roughly ``tile``-sized quads."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    parts = []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        na = max(1, int(round((hi[a] - lo[a]) / tile)))
        nb_ = max(1, int(round((hi[b] - lo[b]) / tile)))
        ga = np.linspace(lo[a], hi[a], na + 1)
        gb = np.linspace(lo[b], hi[b], nb_ + 1)
        for level in (lo[axis], hi[axis]):
            for i in range(na):
                for j in range(nb_):
                    quad = np.zeros((4, 3))
                    quad[:, axis] = level
                    quad[:, a] = [ga[i], ga[i + 1], ga[i + 1], ga[i]]
                    quad[:, b] = [gb[j], gb[j], gb[j + 1], gb[j + 1]]
                    parts.append(quad_mesh(quad))
    return merge_meshes(parts)


def merge_meshes(parts):
    vs, fs, base = [], [], 0
    for v, f in parts:
        vs.append(v)
        fs.append(f + base)
        base += len(v)
    return np.vstack(vs), np.vstack(fs)


def room_scene() -> SceneModel:
    """The bundled furnished-room fixture (see ``data/room.obj``)."""
    return SceneModel.from_obj(Path(__file__).parent / "data" / "room.obj")


def build_room_mesh():
    """Room-scale box with furniture around a free 2 m square walking area.

    The walking area spans x, z in [-1, 1] (floor at y = 0, +y up); nothing
    stands within 1 m of it. Walls sit 2.5 to 4.5 m out; boxes of varied
    size provide depth discontinuities and occlusion edges.
    """
    parts = [
        # room shell: floor, ceiling, four walls in ~1 m tiles (keeps BVH boxes tight)
        tiled_box_shell((-3.5, 0.0, -3.0), (4.5, 3.0, 5.0)),
        # shelves and cabinets
        box_mesh((2.2, 0.0, -1.2), (3.0, 1.9, 0.4)),
        box_mesh((-2.9, 0.0, 0.5), (-2.1, 1.2, 2.3)),
        box_mesh((-1.5, 0.0, 2.4), (0.2, 0.8, 3.2)),
        box_mesh((0.9, 0.0, -2.8), (2.6, 2.2, -2.2)),
        box_mesh((-3.1, 0.0, -2.6), (-2.2, 2.4, -1.6)),
        box_mesh((2.6, 0.7, 2.6), (3.6, 1.4, 3.6)),
        # table top on a pedestal
        box_mesh((-0.8, 0.72, -2.6), (0.6, 0.78, -2.0)),
        box_mesh((-0.15, 0.0, -2.35), (-0.05, 0.72, -2.25)),
        # small box on the shelf, partially occluding the wall behind
        box_mesh((2.0, 1.9, -0.6), (2.5, 2.2, -0.1)),
        # pillar
        box_mesh((2.2, 0.0, 2.0), (2.5, 3.0, 2.3)),
    ]
    return merge_meshes(parts)

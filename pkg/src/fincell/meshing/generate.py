"""Mesh generation: graded point placement + constrained Delaunay + smoothing.

The outer rectangle is discretized with identical station layouts on opposite
sides when that direction is periodic, so periodic node pairs match by exact
coordinate translation. Fin boundaries get a boundary-layer spacing of
`fin_factor * h_target` and one offset ring of interior points.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from ..errors import MeshError
from ..geometry import (
    ChannelGeometry,
    UnitCellGeometry,
    distance_to_polyline,
    points_in_polygon,
    polygon_area,
    polygon_centroid,
    resample_polyline,
    subdivide_polyline,
)
from .cdt import constrained_triangulation
from .trimesh import BoundaryTag, TriMesh

__all__ = ["MeshParams", "generate_unit_cell_mesh", "generate_channel_mesh", "remesh"]


@dataclass(frozen=True)
class MeshParams:
    """Knobs of the point-placement heuristics (defaults are calibrated)."""

    fin_factor: float = 0.5  # boundary-layer spacing on fins, relative to h_target
    grade: float = 0.9  # sizing growth per unit distance from the fin
    reject_factor: float = 0.82  # Poisson-disk radius relative to local size
    ring_offset: float = 0.72  # first interior ring distance, relative to fin spacing
    clearance: float = 0.60  # keep-out band around constrained edges, relative
    n_smooth: int = 6
    relax: float = 0.7
    quality_gate: float = 0.3
    max_retries: int = 4
    h_far: float | None = None  # coarser target far from fins (channel buffers)
    fine_span: tuple | None = None  # (x_lo, x_hi) kept at h_target when h_far set
    loop_smooth_passes: int = 2  # zigzag damping of fin loops during remesh


def _side_stations(lo: float, hi: float, spacing: float) -> np.ndarray:
    """Interior station coordinates of one rectangle side (excludes corners)."""
    n = max(2, int(round((hi - lo) / spacing)))
    return lo + np.arange(1, n) * ((hi - lo) / n)


def _fin_normals(poly: np.ndarray) -> np.ndarray:
    """Outward (into-fluid) unit normals at the vertices of a CCW polyline."""
    fwd = np.roll(poly, -1, axis=0) - poly
    bwd = poly - np.roll(poly, 1, axis=0)

    def rot_right(v):
        return np.column_stack([v[:, 1], -v[:, 0]])

    def unit(v):
        return v / np.maximum(np.hypot(v[:, 0], v[:, 1]), 1e-300)[:, None]

    n = unit(rot_right(unit(fwd)) + rot_right(unit(bwd)))
    return n


def _generate(
    domain: tuple,
    fins: list,
    periodic_x: bool,
    periodic_y: bool,
    h_target: float,
    params: MeshParams,
    jitter_rng=None,
) -> TriMesh:
    x0, y0, x1, y1 = domain
    W, H = x1 - x0, y1 - y0
    fin_h = params.fin_factor * h_target

    # --- sizing field ---------------------------------------------------------
    fin_tree = cKDTree(np.vstack(fins)) if fins else None

    def cap(pts: np.ndarray) -> np.ndarray:
        c = np.full(len(pts), h_target)
        if params.h_far is not None and params.fine_span is not None:
            lo, hi = params.fine_span
            ramp = max(4.0 * h_target, 0.05 * W)
            d = np.maximum(lo - pts[:, 0], pts[:, 0] - hi)
            t = np.clip(d / ramp, 0.0, 1.0)
            c = h_target + (params.h_far - h_target) * t
        return c

    def size(pts: np.ndarray) -> np.ndarray:
        c = cap(pts)
        if fin_tree is None:
            return c
        d, _ = fin_tree.query(pts, k=1)
        return np.minimum(c, fin_h + params.grade * d)

    # --- boundary points --------------------------------------------------------
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
    sx = float(size(np.array([[0.5 * (x0 + x1), y0]]))[0]) if not params.h_far else h_target
    bot_x = _side_stations(x0, x1, sx if fins else h_target)
    if params.h_far is not None:
        # graded stations along the long sides: step follows the local cap
        stations = [x0]
        while stations[-1] < x1:
            step = float(cap(np.array([[stations[-1], y0]]))[0])
            stations.append(stations[-1] + step)
        raw = np.array(stations)
        bot_x = x0 + (raw[1:-1] - x0) * (W / (raw[-1] - x0))
    side_y = _side_stations(y0, y1, h_target)

    pts_list = [corners]
    idx = 4
    bot_ids = np.arange(idx, idx + len(bot_x)); idx += len(bot_x)
    pts_list.append(np.column_stack([bot_x, np.full(len(bot_x), y0)]))
    top_ids = np.arange(idx, idx + len(bot_x)); idx += len(bot_x)
    pts_list.append(np.column_stack([bot_x, np.full(len(bot_x), y1)]))
    left_ids = np.arange(idx, idx + len(side_y)); idx += len(side_y)
    pts_list.append(np.column_stack([np.full(len(side_y), x0), side_y]))
    right_ids = np.arange(idx, idx + len(side_y)); idx += len(side_y)
    pts_list.append(np.column_stack([np.full(len(side_y), x1), side_y]))

    fin_ranges = []
    for poly in fins:
        fin_ranges.append((idx, idx + len(poly)))
        pts_list.append(poly)
        idx += len(poly)
    boundary_pts = np.vstack(pts_list)
    n_boundary = idx

    # constrained segments: chains along each side, rings around each fin
    def chain(ids_interior, c_a, c_b, coord):
        order = np.argsort(boundary_pts[ids_interior, coord], kind="stable")
        seq = np.concatenate([[c_a], ids_interior[order], [c_b]])
        return np.column_stack([seq[:-1], seq[1:]])

    segs = [
        chain(bot_ids, 0, 1, 0),
        chain(top_ids, 2, 3, 0),
        chain(left_ids, 0, 2, 1),
        chain(right_ids, 1, 3, 1),
    ]
    for (a, b) in fin_ranges:
        ring = np.arange(a, b)
        segs.append(np.column_stack([ring, np.roll(ring, -1)]))
    segments = np.vstack(segs)

    # --- interior candidates ------------------------------------------------------
    s_lat = fin_h if fins else 0.82 * h_target
    ny = int(np.ceil(H / (s_lat * np.sqrt(3) / 2)))
    nx = int(np.ceil(W / s_lat)) + 1
    jx = jy = 0.0
    if jitter_rng is not None:
        jx, jy = jitter_rng.uniform(0.15, 0.85, size=2) * s_lat
    rows = []
    for j in range(ny + 1):
        y = y0 + jy + j * (s_lat * np.sqrt(3) / 2)
        xs = x0 + jx + (np.arange(nx) + (0.5 if j % 2 else 0.0)) * s_lat
        rows.append(np.column_stack([xs, np.full(nx, y)]))
    cand = np.vstack(rows)
    cand = cand[(cand[:, 0] > x0) & (cand[:, 0] < x1) & (cand[:, 1] > y0) & (cand[:, 1] < y1)]

    # hard keep-outs: outer margin, fin interior, fin clearance band
    margin = params.clearance * np.minimum(
        cap(cand), np.maximum(h_target, sx if not params.h_far else cap(cand))
    )
    near_out = (
        (cand[:, 0] - x0 < margin)
        | (x1 - cand[:, 0] < margin)
        | (cand[:, 1] - y0 < margin)
        | (y1 - cand[:, 1] < margin)
    )
    cand = cand[~near_out]
    if fins:
        keep = np.ones(len(cand), dtype=bool)
        d_coarse, _ = fin_tree.query(cand, k=1)
        suspect = d_coarse < 2.5 * fin_h
        for poly in fins:
            lo, hi = poly.min(axis=0), poly.max(axis=0)
            inbox = (
                (cand[:, 0] > lo[0] - 2 * fin_h)
                & (cand[:, 0] < hi[0] + 2 * fin_h)
                & (cand[:, 1] > lo[1] - 2 * fin_h)
                & (cand[:, 1] < hi[1] + 2 * fin_h)
            )
            test = np.where(keep & (suspect | inbox) & inbox)[0]
            if len(test) == 0:
                continue
            inside = points_in_polygon(cand[test], poly)
            keep[test[inside]] = False
            test = test[~inside]
            if len(test):
                d = distance_to_polyline(cand[test], poly)
                keep[test[d < params.clearance * fin_h]] = False
        cand = cand[keep]

    # one offset ring along each fin for a regular first layer
    ring_pts = []
    for poly in fins:
        normals = _fin_normals(poly)
        ring = poly + params.ring_offset * fin_h * normals
        ok = (
            (ring[:, 0] > x0 + 0.3 * h_target)
            & (ring[:, 0] < x1 - 0.3 * h_target)
            & (ring[:, 1] > y0 + 0.3 * h_target)
            & (ring[:, 1] < y1 - 0.3 * h_target)
        )
        ring = ring[ok]
        if len(ring):
            bad = points_in_polygon(ring, poly)
            d = distance_to_polyline(ring[~bad], poly)
            ring_pts.append(ring[~bad][d >= 0.55 * fin_h])
    # candidates processed fine-to-coarse; rings first (highest priority)
    order = np.argsort(size(cand), kind="stable")
    cand = cand[order]
    if ring_pts:
        cand = np.vstack([np.vstack(ring_pts), cand])

    # --- greedy Poisson-disk acceptance -----------------------------------------
    accepted = [boundary_pts]
    tree = cKDTree(boundary_pts)
    recent: list = []
    r_cand = params.reject_factor * size(cand)
    for p, r in zip(cand, r_cand):
        d, _ = tree.query(p, k=1)
        if d < r:
            continue
        if recent:
            rec = np.asarray(recent)
            if np.min((rec[:, 0] - p[0]) ** 2 + (rec[:, 1] - p[1]) ** 2) < r * r:
                continue
        recent.append(p)
        if len(recent) >= 512:
            accepted.append(np.asarray(recent))
            tree = cKDTree(np.vstack(accepted))
            recent = []
    if recent:
        accepted.append(np.asarray(recent))
    interior = np.vstack(accepted[1:]) if len(accepted) > 1 else np.zeros((0, 2))
    pts = np.vstack([boundary_pts, interior])

    # --- smoothing iterations ---------------------------------------------------
    holes = list(fins)
    tris = constrained_triangulation(pts, segments, holes)
    for _ in range(params.n_smooth):
        rows_adj = np.concatenate([tris[:, 0], tris[:, 1], tris[:, 2]])
        cols_adj = np.concatenate([tris[:, 1], tris[:, 2], tris[:, 0]])
        deg = np.zeros(len(pts))
        sx_acc = np.zeros(len(pts))
        sy_acc = np.zeros(len(pts))
        np.add.at(deg, rows_adj, 1.0)
        np.add.at(sx_acc, rows_adj, pts[cols_adj, 0])
        np.add.at(sy_acc, rows_adj, pts[cols_adj, 1])
        np.add.at(deg, cols_adj, 1.0)
        np.add.at(sx_acc, cols_adj, pts[rows_adj, 0])
        np.add.at(sy_acc, cols_adj, pts[rows_adj, 1])
        target = np.column_stack([sx_acc, sy_acc]) / np.maximum(deg, 1.0)[:, None]
        moved = pts.copy()
        mi = np.arange(n_boundary, len(pts))
        moved[mi] = pts[mi] + params.relax * (target[mi] - pts[mi])
        # revert moves that violate keep-outs
        ok = (
            (moved[mi, 0] > x0 + 0.4 * h_target)
            & (moved[mi, 0] < x1 - 0.4 * h_target)
            & (moved[mi, 1] > y0 + 0.4 * h_target)
            & (moved[mi, 1] < y1 - 0.4 * h_target)
        )
        if fins:
            d_new, _ = fin_tree.query(moved[mi], k=1)
            close = d_new < 2.0 * fin_h
            exact = np.full(len(mi), np.inf)
            for poly in fins:
                sel = np.where(close)[0]
                if len(sel):
                    exact[sel] = np.minimum(exact[sel], distance_to_polyline(moved[mi[sel]], poly))
                    inside = points_in_polygon(moved[mi[sel]], poly)
                    exact[sel[inside]] = -1.0
            ok &= exact >= 0.52 * fin_h
        moved[mi[~ok]] = pts[mi[~ok]]
        pts = moved
        tris = constrained_triangulation(pts, segments, holes)

    # --- assemble TriMesh ----------------------------------------------------------
    edges = np.sort(
        np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1
    )
    uniq, inv, counts = np.unique(edges, axis=0, return_inverse=True, return_counts=True)
    bnd_mask = counts[inv] == 1  # per directed-edge slot
    tri_of_edge = np.tile(np.arange(len(tris)), 3)
    local_of_edge = np.repeat(np.arange(3), len(tris))
    sel = np.where(bnd_mask)[0]
    b_parent = tri_of_edge[sel]
    b_local = local_of_edge[sel]
    pair_a = tris[b_parent, b_local]
    pair_b = tris[b_parent, (b_local + 1) % 3]
    b_edges = np.column_stack([pair_a, pair_b])

    seg_lookup = {}
    for si, (a, b) in enumerate(segments):
        seg_lookup[(int(a), int(b)) if a < b else (int(b), int(a))] = si
    tag = np.empty(len(b_edges), dtype=np.int64)
    fin_id = np.full(len(b_edges), -1, dtype=np.int64)
    tol = 1e-9 * max(W, H)
    for i, (a, b) in enumerate(b_edges):
        key = (int(a), int(b)) if a < b else (int(b), int(a))
        if key not in seg_lookup:
            raise MeshError(f"unconstrained boundary edge {key} (triangulation leak)")
        pa, pb = pts[a], pts[b]
        if abs(pa[0] - x0) < tol and abs(pb[0] - x0) < tol:
            tag[i] = BoundaryTag.LEFT
        elif abs(pa[0] - x1) < tol and abs(pb[0] - x1) < tol:
            tag[i] = BoundaryTag.RIGHT
        elif abs(pa[1] - y0) < tol and abs(pb[1] - y0) < tol:
            tag[i] = BoundaryTag.BOTTOM
        elif abs(pa[1] - y1) < tol and abs(pb[1] - y1) < tol:
            tag[i] = BoundaryTag.TOP
        else:
            tag[i] = BoundaryTag.FIN
            for k, (lo_k, hi_k) in enumerate(fin_ranges):
                if lo_k <= a < hi_k:
                    fin_id[i] = k
                    break
            else:
                raise MeshError(f"boundary edge {key} not on any fin or outer side")

    pairs = []
    if periodic_y:
        order = np.argsort(boundary_pts[bot_ids, 0], kind="stable")
        for bi, ti in zip(bot_ids[order], top_ids[order]):
            pairs.append((ti, bi))
        pairs += [(2, 0), (3, 1)]
    if periodic_x:
        order = np.argsort(boundary_pts[left_ids, 1], kind="stable")
        for li, ri in zip(left_ids[order], right_ids[order]):
            pairs.append((ri, li))
        pairs += [(1, 0), (3, 2)]
    pairs_arr = np.array(pairs, dtype=np.int64) if pairs else np.zeros((0, 2), dtype=np.int64)

    mesh = TriMesh(
        nodes=pts,
        triangles=tris,
        boundary_edges=b_edges,
        boundary_parent=b_parent,
        boundary_tag=tag,
        boundary_fin=fin_id,
        periodic_pairs=pairs_arr,
        domain=np.array([x0, y0, x1, y1]),
        periodic_x=periodic_x,
        periodic_y=periodic_y,
        h_target=h_target,
    )
    mesh.validate()
    return mesh


def _generate_with_retries(domain, fins, periodic_x, periodic_y, h_target, params):
    last_exc = None
    for attempt in range(params.max_retries):
        rng = np.random.default_rng(1234 + attempt) if attempt else None
        try:
            mesh = _generate(domain, fins, periodic_x, periodic_y, h_target, params, rng)
        except MeshError as exc:
            last_exc = exc
            continue
        q = mesh.min_quality()
        if q >= params.quality_gate:
            return mesh
        last_exc = MeshError(
            f"mesh quality {q:.3f} below gate {params.quality_gate} (attempt {attempt})"
        )
    raise MeshError(f"mesh generation failed after {params.max_retries} attempts: {last_exc}")


def generate_unit_cell_mesh(
    geom: UnitCellGeometry, h_target: float, params: MeshParams | None = None
) -> TriMesh:
    """Mesh the periodic unit cell; fin boundary at fin_factor * h_target spacing."""
    params = params or MeshParams()
    if h_target <= 0 or h_target > 0.5 * min(geom.lx, geom.ly):
        raise MeshError(f"h_target {h_target} out of range for cell {geom.lx} x {geom.ly}")
    fins = []
    if geom.fin is not None:
        fins.append(subdivide_polyline(geom.fin, params.fin_factor * h_target))
    return _generate_with_retries(
        (0.0, 0.0, geom.lx, geom.ly), fins, True, True, h_target, params
    )


def generate_channel_mesh(
    geom: ChannelGeometry, h_target: float, params: MeshParams | None = None
) -> TriMesh:
    """Mesh the laterally periodic channel (inlet left, outlet right)."""
    params = params or MeshParams()
    fins = [subdivide_polyline(p, params.fin_factor * h_target) for p in geom.fins]
    if params.h_far is not None and params.fine_span is None and fins:
        allpts = np.vstack(fins)
        params = replace(params, fine_span=(allpts[:, 0].min(), allpts[:, 0].max()))
    return _generate_with_retries(
        (0.0, 0.0, geom.length, geom.height), fins, False, True, h_target, params
    )


def _area_matched(loop: np.ndarray, area: float) -> np.ndarray:
    """Scale a closed loop about its centroid so its enclosed area equals `area`."""
    a = polygon_area(loop)
    if a * area <= 0:
        raise MeshError("resampled fin loop degenerated (area sign flip)")
    c = polygon_centroid(loop)
    return c + np.sqrt(area / a) * (loop - c)


def _denoise_loop(loop: np.ndarray, passes: int) -> np.ndarray:
    """Damp vertex-scale zigzag of a uniformly spaced closed loop.

    Jacobi relaxation toward the neighbor midpoint: each pass removes ~75 %
    of the two-segment sawtooth while displacing resolved features only by
    O(spacing^2 * curvature). Run after uniform resampling (equal weights
    assume equal spacing) and before the area restore.
    """
    out = loop.astype(float)
    for _ in range(passes):
        mid = 0.5 * (np.roll(out, 1, axis=0) + np.roll(out, -1, axis=0))
        out = out + 0.5 * (mid - out)
    return out


def remesh(mesh: TriMesh, h_target: float | None = None, params: MeshParams | None = None) -> TriMesh:
    """Regenerate a fresh mesh around the mesh's current fin polylines.

    Each polyline is resampled at uniform arclength spacing (the fin
    boundary-layer spacing), relieved of vertex-scale zigzag accumulated by
    nodal shape updates, and rescaled about its centroid so the enclosed
    polygon area is restored exactly; re-chording alone shifts the area of
    convex loops by O(spacing^2). Fluid area is preserved to 0.1 %.
    """
    params = params or MeshParams()
    h = h_target if h_target is not None else mesh.h_target
    fins = []
    for loop in mesh.fin_loops():
        out = resample_polyline(loop, params.fin_factor * h)
        out = _denoise_loop(out, params.loop_smooth_passes)
        fins.append(_area_matched(out, polygon_area(loop)))
    out = _generate_with_retries(
        tuple(mesh.domain), fins, mesh.periodic_x, mesh.periodic_y, h, params
    )
    a0, a1 = mesh.fluid_area(), out.fluid_area()
    if abs(a1 - a0) > 1e-3 * a0:
        raise MeshError(
            f"remesh changed fluid area by {abs(a1 - a0) / a0:.2e} (limit 1e-3)"
        )
    return out

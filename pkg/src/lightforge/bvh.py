"""Bounding volume hierarchy over triangle meshes.

Construction is plain numpy (it runs once per scene); traversal-ready data
lives in flat arrays consumed by the numba kernels in ``trace``. Nodes are
stored pre-order: an internal node's left child is the next array slot and
the right child index is stored explicitly. Leaves reference a contiguous
run of reordered triangles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 4


@dataclass
class Bvh:
    node_min: np.ndarray      # (N, 3) float64
    node_max: np.ndarray      # (N, 3) float64
    node_right: np.ndarray    # (N,) int32, right child for internal nodes
    node_start: np.ndarray    # (N,) int32, first triangle for leaves
    node_count: np.ndarray    # (N,) int32, 0 for internal nodes
    tri_v0: np.ndarray        # (M, 3) float64, leaf order
    tri_e1: np.ndarray
    tri_e2: np.ndarray
    tri_n0: np.ndarray        # per-corner shading normals, leaf order
    tri_n1: np.ndarray
    tri_n2: np.ndarray
    tri_gn: np.ndarray        # (M, 3) unit geometric normals
    tri_order: np.ndarray     # (M,) original triangle index per leaf slot


def build_bvh(vertices: np.ndarray, triangles: np.ndarray,
              shading_normals: np.ndarray) -> Bvh:
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    sn = np.asarray(shading_normals, dtype=np.float64)
    m = t.shape[0]
    if m == 0:
        raise ValueError("cannot build a BVH over an empty mesh")

    p0 = v[t[:, 0]]
    p1 = v[t[:, 1]]
    p2 = v[t[:, 2]]
    tri_min = np.minimum(np.minimum(p0, p1), p2)
    tri_max = np.maximum(np.maximum(p0, p1), p2)
    centroid = (tri_min + tri_max) * 0.5

    node_min, node_max = [], []
    node_right, node_start, node_count = [], [], []
    order = np.arange(m)

    def emit(idx):
        node_min.append(tri_min[idx].min(axis=0))
        node_max.append(tri_max[idx].max(axis=0))
        node_right.append(-1)
        node_start.append(-1)
        node_count.append(0)
        return len(node_count) - 1

    def build(idx, write_at):
        slot = emit(idx) if write_at is None else write_at
        if len(idx) <= LEAF_SIZE:
            node_start[slot] = build.cursor
            node_count[slot] = len(idx)
            build.leaf_order.extend(idx.tolist())
            build.cursor += len(idx)
            return slot
        ext = centroid[idx].max(axis=0) - centroid[idx].min(axis=0)
        axis = int(np.argmax(ext))
        key = np.argsort(centroid[idx, axis], kind="stable")
        half = len(idx) // 2
        left_idx = idx[key[:half]]
        right_idx = idx[key[half:]]
        build(left_idx, None)
        node_right[slot] = build(right_idx, None)
        return slot

    build.cursor = 0
    build.leaf_order = []

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 4 * int(np.log2(m + 1)) + 128))
    try:
        build(order, None)
    finally:
        sys.setrecursionlimit(old_limit)

    leaf = np.array(build.leaf_order, dtype=np.int64)
    lv0 = p0[leaf]
    gn = np.cross(p1[leaf] - lv0, p2[leaf] - lv0)
    gn /= np.linalg.norm(gn, axis=1, keepdims=True)
    return Bvh(
        node_min=np.ascontiguousarray(node_min, dtype=np.float64),
        node_max=np.ascontiguousarray(node_max, dtype=np.float64),
        node_right=np.array(node_right, dtype=np.int32),
        node_start=np.array(node_start, dtype=np.int32),
        node_count=np.array(node_count, dtype=np.int32),
        tri_v0=np.ascontiguousarray(lv0),
        tri_e1=np.ascontiguousarray(p1[leaf] - lv0),
        tri_e2=np.ascontiguousarray(p2[leaf] - lv0),
        tri_n0=np.ascontiguousarray(sn[t[leaf, 0]]),
        tri_n1=np.ascontiguousarray(sn[t[leaf, 1]]),
        tri_n2=np.ascontiguousarray(sn[t[leaf, 2]]),
        tri_gn=np.ascontiguousarray(gn),
        tri_order=leaf.astype(np.int32),
    )

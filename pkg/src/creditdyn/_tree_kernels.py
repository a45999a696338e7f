"""Numba kernels for exact-greedy regression tree growth, prediction and
path-dependent Shapley attribution over flattened tree arrays.

Tree layout: parallel arrays indexed by node id. ``left[u] < 0`` marks a
leaf. Missing values (NaN) are routed by ``miss_left``. ``cover`` holds
the training row count that reached each node.
"""

import numpy as np
from numba import njit

MIN_GAIN = 1e-12


@njit(cache=True, nogil=True)
def grow_tree(X, sort_idx, n_finite, g, h, max_depth, min_leaf, lam,
              feat, thr, miss_left, left, right, value, cover, node_of_row):
    """Grow one regression tree by exact greedy gain maximization.

    ``sort_idx[:, f]`` lists row indices sorted by feature f (NaN rows
    last, ``n_finite[f]`` of them finite). Ties between candidate splits
    are broken toward the lower feature index, then the lower threshold
    (scan order), and missing routing prefers left on equal gain.
    Returns the number of nodes; ``node_of_row`` ends as the leaf id of
    every training row.
    """
    n, n_feat = X.shape
    max_nodes = feat.shape[0]

    node_g = np.zeros(max_nodes)
    node_h = np.zeros(max_nodes)
    node_cnt = np.zeros(max_nodes, dtype=np.int64)
    node_depth = np.zeros(max_nodes, dtype=np.int64)

    best_gain = np.full(max_nodes, -1.0)
    best_feat = np.full(max_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(max_nodes)
    best_miss_left = np.zeros(max_nodes, dtype=np.bool_)

    # scan accumulators, indexed by node id
    cg = np.zeros(max_nodes)
    ch = np.zeros(max_nodes)
    cc = np.zeros(max_nodes, dtype=np.int64)
    last_val = np.zeros(max_nodes)
    mg = np.zeros(max_nodes)
    mh = np.zeros(max_nodes)
    mc = np.zeros(max_nodes, dtype=np.int64)

    for i in range(n):
        node_of_row[i] = 0
    node_g[0] = g.sum()
    node_h[0] = h.sum()
    node_cnt[0] = n
    n_nodes = 1
    level = np.empty(max_nodes, dtype=np.int64)
    level[0] = 0
    level_size = 1

    for depth in range(max_depth + 1):
        if level_size == 0:
            break
        for li in range(level_size):
            u = level[li]
            best_gain[u] = MIN_GAIN
            best_feat[u] = -1

        if depth < max_depth:
            for f in range(n_feat):
                # reset accumulators for this level's nodes
                for li in range(level_size):
                    u = level[li]
                    cg[u] = 0.0
                    ch[u] = 0.0
                    cc[u] = 0
                    mg[u] = 0.0
                    mh[u] = 0.0
                    mc[u] = 0
                # missing-row sums per node
                for k in range(n_finite[f], n):
                    r = sort_idx[k, f]
                    u = node_of_row[r]
                    if node_depth[u] == depth:
                        mg[u] += g[r]
                        mh[u] += h[r]
                        mc[u] += 1
                # scan finite rows in ascending value order
                for k in range(n_finite[f]):
                    r = sort_idx[k, f]
                    u = node_of_row[r]
                    if node_depth[u] != depth:
                        continue
                    v = X[r, f]
                    if cc[u] > 0 and v > last_val[u]:
                        tot_g = node_g[u]
                        tot_h = node_h[u]
                        fin_g = tot_g - mg[u]
                        fin_h = tot_h - mh[u]
                        fin_c = node_cnt[u] - mc[u]
                        parent_score = tot_g * tot_g / (tot_h + lam)
                        # option A: missing goes left
                        gl = cg[u] + mg[u]
                        hl = ch[u] + mh[u]
                        nl = cc[u] + mc[u]
                        nr = fin_c - cc[u]
                        gain_a = -1.0
                        if nl >= min_leaf and nr >= min_leaf:
                            gr = fin_g - cg[u]
                            hr = fin_h - ch[u]
                            gain_a = 0.5 * (gl * gl / (hl + lam)
                                            + gr * gr / (hr + lam) - parent_score)
                        # option B: missing goes right
                        nl = cc[u]
                        nr = fin_c - cc[u] + mc[u]
                        gain_b = -1.0
                        if nl >= min_leaf and nr >= min_leaf:
                            gl = cg[u]
                            hl = ch[u]
                            gr = fin_g - cg[u] + mg[u]
                            hr = fin_h - ch[u] + mh[u]
                            gain_b = 0.5 * (gl * gl / (hl + lam)
                                            + gr * gr / (hr + lam) - parent_score)
                        if gain_a >= gain_b:
                            cand_gain = gain_a
                            cand_left = True
                        else:
                            cand_gain = gain_b
                            cand_left = False
                        if cand_gain > best_gain[u]:
                            t = last_val[u] + (v - last_val[u]) / 2.0
                            if t >= v:  # midpoint rounded up between adjacent floats
                                t = last_val[u]
                            best_gain[u] = cand_gain
                            best_feat[u] = f
                            best_thr[u] = t
                            best_miss_left[u] = cand_left
                    cg[u] += g[r]
                    ch[u] += h[r]
                    cc[u] += 1
                    last_val[u] = v

        # materialize splits / leaves for this level
        for li in range(level_size):
            u = level[li]
            feat[u] = -1
            left[u] = -1
            right[u] = -1
            miss_left[u] = False
            value[u] = 0.0
            cover[u] = float(node_cnt[u])
            if depth < max_depth and best_feat[u] >= 0:
                lc = n_nodes
                rc = n_nodes + 1
                n_nodes += 2
                feat[u] = best_feat[u]
                thr[u] = best_thr[u]
                miss_left[u] = best_miss_left[u]
                left[u] = lc
                right[u] = rc
                node_depth[lc] = depth + 1
                node_depth[rc] = depth + 1
            else:
                value[u] = -node_g[u] / (node_h[u] + lam)

        # partition rows into children and accumulate child sums
        for r in range(n):
            u = node_of_row[r]
            if node_depth[u] == depth and left[u] >= 0:
                v = X[r, feat[u]]
                if np.isnan(v):
                    c = left[u] if miss_left[u] else right[u]
                else:
                    c = left[u] if v <= thr[u] else right[u]
                node_of_row[r] = c
                node_g[c] += g[r]
                node_h[c] += h[r]
                node_cnt[c] += 1

        new_level = np.empty(max_nodes, dtype=np.int64)
        pos = 0
        for li in range(level_size):
            u = level[li]
            if left[u] >= 0:
                new_level[pos] = left[u]
                new_level[pos + 1] = right[u]
                pos += 2
        level = new_level
        level_size = pos

    return n_nodes


@njit(cache=True, nogil=True)
def predict_tree(X, feat, thr, miss_left, left, right, value, out):
    """Accumulate raw leaf values of one tree into ``out``."""
    for i in range(X.shape[0]):
        u = 0
        while left[u] >= 0:
            v = X[i, feat[u]]
            if np.isnan(v):
                u = left[u] if miss_left[u] else right[u]
            else:
                u = left[u] if v <= thr[u] else right[u]
        out[i] += value[u]


@njit(cache=True, nogil=True)
def _extend(pd_, pz, po, pw, l, zero_frac, one_frac, fi):
    pd_[l] = fi
    pz[l] = zero_frac
    po[l] = one_frac
    pw[l] = 1.0 if l == 0 else 0.0
    for i in range(l - 1, -1, -1):
        pw[i + 1] += one_frac * pw[i] * (i + 1) / (l + 1)
        pw[i] = zero_frac * pw[i] * (l - i) / (l + 1)


@njit(cache=True, nogil=True)
def _unwind(pd_, pz, po, pw, l, path_index):
    one_frac = po[path_index]
    zero_frac = pz[path_index]
    next_one = pw[l]
    for i in range(l - 1, -1, -1):
        if one_frac != 0.0:
            tmp = pw[i]
            pw[i] = next_one * (l + 1) / ((i + 1) * one_frac)
            next_one = tmp - pw[i] * zero_frac * (l - i) / (l + 1)
        else:
            pw[i] = pw[i] * (l + 1) / (zero_frac * (l - i))
    for i in range(path_index, l):
        pd_[i] = pd_[i + 1]
        pz[i] = pz[i + 1]
        po[i] = po[i + 1]


@njit(cache=True, nogil=True)
def _unwound_sum(pz, po, pw, l, path_index):
    one_frac = po[path_index]
    zero_frac = pz[path_index]
    next_one = pw[l]
    total = 0.0
    if one_frac != 0.0:
        for i in range(l - 1, -1, -1):
            tmp = next_one / ((i + 1) * one_frac)
            total += tmp
            next_one = pw[i] - tmp * zero_frac * (l - i)
    else:
        for i in range(l - 1, -1, -1):
            total += pw[i] / (zero_frac * (l - i))
    return total * (l + 1)


@njit(cache=True, nogil=True)
def _shap_row(x, feat, thr, miss_left, left, right, value, cover, phi,
              pd_, pz, po, pw, st_node, st_ud, st_off, st_zero, st_one, st_fi):
    """Depth-first path-dependent attribution of one tree for one row.

    Explicit-stack form of the usual recursion: every frame does its work
    (copy + extend the unique path, then either accumulate at a leaf or
    unwind and push both children) before any descendant runs, so the
    shared path workspace is reused exactly as in the recursive variant.
    """
    top = 0
    st_node[0] = 0
    st_ud[0] = 0
    st_off[0] = 0
    st_zero[0] = 1.0
    st_one[0] = 1.0
    st_fi[0] = -1
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        unique_depth = st_ud[top]
        parent_offset = st_off[top]
        parent_zero = st_zero[top]
        parent_one = st_one[top]
        parent_fi = st_fi[top]

        # copy the parent's unique path and extend it with the incoming split
        offset = parent_offset + unique_depth
        for i in range(unique_depth):
            pd_[offset + i] = pd_[parent_offset + i]
            pz[offset + i] = pz[parent_offset + i]
            po[offset + i] = po[parent_offset + i]
            pw[offset + i] = pw[parent_offset + i]
        _extend(pd_[offset:], pz[offset:], po[offset:], pw[offset:],
                unique_depth, parent_zero, parent_one, parent_fi)
        l = unique_depth  # index of the last path element after extend

        if left[node] < 0:
            for i in range(1, l + 1):
                w = _unwound_sum(pz[offset:], po[offset:], pw[offset:], l, i)
                phi[pd_[offset + i]] += w * (po[offset + i] - pz[offset + i]) \
                    * value[node]
            continue

        f = feat[node]
        v = x[f]
        if np.isnan(v):
            hot = left[node] if miss_left[node] else right[node]
        else:
            hot = left[node] if v <= thr[node] else right[node]
        cold = right[node] if hot == left[node] else left[node]

        inc_zero = 1.0
        inc_one = 1.0
        path_index = -1
        for i in range(l + 1):
            if pd_[offset + i] == f:
                path_index = i
                break
        if path_index >= 0:
            inc_zero = pz[offset + path_index]
            inc_one = po[offset + path_index]
            _unwind(pd_[offset:], pz[offset:], po[offset:], pw[offset:],
                    l, path_index)
            l -= 1

        w = cover[node]
        # cold below hot: the hot subtree finishes before cold reuses the
        # workspace region past ``offset + l + 1``
        st_node[top] = cold
        st_ud[top] = l + 1
        st_off[top] = offset
        st_zero[top] = cover[cold] / w * inc_zero
        st_one[top] = 0.0
        st_fi[top] = f
        top += 1
        st_node[top] = hot
        st_ud[top] = l + 1
        st_off[top] = offset
        st_zero[top] = cover[hot] / w * inc_zero
        st_one[top] = inc_one
        st_fi[top] = f
        top += 1


@njit(cache=True, nogil=True)
def tree_shap_single(x, feat, thr, miss_left, left, right, value, cover,
                     max_depth, phi):
    """Path-dependent Shapley attribution of one tree for one row,
    accumulated into ``phi`` (length n_features)."""
    size = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 2
    pd_ = np.full(size, -1, dtype=np.int64)
    pz = np.zeros(size)
    po = np.zeros(size)
    pw = np.zeros(size)
    cap = 2 * (max_depth + 2)
    st_node = np.empty(cap, dtype=np.int64)
    st_ud = np.empty(cap, dtype=np.int64)
    st_off = np.empty(cap, dtype=np.int64)
    st_zero = np.empty(cap)
    st_one = np.empty(cap)
    st_fi = np.empty(cap, dtype=np.int64)
    _shap_row(x, feat, thr, miss_left, left, right, value, cover, phi,
              pd_, pz, po, pw, st_node, st_ud, st_off, st_zero, st_one, st_fi)


@njit(cache=True, nogil=True)
def tree_shap_batch(X, feat, thr, miss_left, left, right, value, cover,
                    max_depth, phi):
    """Attribution of one tree for every row of X, accumulated into the
    (n_rows, n_features) matrix ``phi``."""
    size = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 2
    pd_ = np.empty(size, dtype=np.int64)
    pz = np.empty(size)
    po = np.empty(size)
    pw = np.empty(size)
    cap = 2 * (max_depth + 2)
    st_node = np.empty(cap, dtype=np.int64)
    st_ud = np.empty(cap, dtype=np.int64)
    st_off = np.empty(cap, dtype=np.int64)
    st_zero = np.empty(cap)
    st_one = np.empty(cap)
    st_fi = np.empty(cap, dtype=np.int64)
    for i in range(X.shape[0]):
        for j in range(size):
            pd_[j] = -1
            pz[j] = 0.0
            po[j] = 0.0
            pw[j] = 0.0
        _shap_row(X[i], feat, thr, miss_left, left, right, value, cover,
                  phi[i], pd_, pz, po, pw,
                  st_node, st_ud, st_off, st_zero, st_one, st_fi)

"""Compiled kernels for CART growth, traversal and weighted-quantile prediction.

Conventions
-----------
* A forest is stored as flat node arrays (``feature``, ``threshold``,
  ``left``, ``right``, ``depth``, ``start``, ``end``, ``value``) with global
  node ids, plus one ``samples`` array holding in-bag training row indices.
  Node ``k`` owns ``samples[start[k]:end[k]]``; children partition their
  parent's range, so internal nodes also carry their full multiset.
* Feature subsampling at a node is driven by a SplitMix64 hash of the node's
  path from the root.  Growth never consults a node counter, so a tree grown
  with ``max_depth=d`` is exactly the depth-``d`` truncation of a deeper tree
  grown with the same key.
* Quantile weights are integers: an entry of a leaf holding ``m`` rows weighs
  ``QUNIT // m``.  Integer sums are exact, so aggregation order never changes
  a prediction.
"""

from __future__ import annotations

import numpy as np
from numba import njit

QUNIT = np.int64(1) << np.int64(40)
TAU_SLACK = 1e-9

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FEATURE_SALT = np.uint64(0xD6E8FEB86659FD93)
_LEFT_SALT = np.uint64(0xA0761D6478BD642F)
_RIGHT_SALT = np.uint64(0xE7037ED1A0B428DB)


@njit(cache=True, inline="always")
def splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _choose_features(node_key, p, max_features, buf):
    """Sorted subset of ``max_features`` of ``range(p)`` fixed by ``node_key``.

    Partial Fisher-Yates driven by a SplitMix64 stream; writes into ``buf``
    and returns the count.
    """
    for j in range(p):
        buf[j] = j
    if max_features >= p:
        return p
    state = node_key ^ _FEATURE_SALT
    for i in range(max_features):
        state = splitmix64(state)
        span = p - i
        j = i + np.int64(float(state >> np.uint64(11)) * (1.0 / 9007199254740992.0) * span)
        tmp = buf[i]
        buf[i] = buf[j]
        buf[j] = tmp
    for i in range(1, max_features):
        v = buf[i]
        k = i - 1
        while k >= 0 and buf[k] > v:
            buf[k + 1] = buf[k]
            k -= 1
        buf[k + 1] = v
    return max_features


@njit(cache=True, inline="always")
def _sort_pairs(xs, ys, cnt):
    """Stable insertion sort of ``xs[:cnt]`` carrying ``ys`` along."""
    for i in range(1, cnt):
        xv = xs[i]
        yv = ys[i]
        k = i - 1
        while k >= 0 and xs[k] > xv:
            xs[k + 1] = xs[k]
            ys[k + 1] = ys[k]
            k -= 1
        xs[k + 1] = xv
        ys[k + 1] = yv


@njit(cache=True, nogil=True)
def grow_tree(X, y, boot, max_depth, max_features, min_samples_leaf, tree_key,
              feature, threshold, left, right, depth, start, end, value, samples,
              node_off, sample_off):
    """Grow one variance-reduction tree on the rows listed in ``boot``.

    Nodes are written at ``node_off`` onwards (child links are global ids)
    and in-bag rows at ``sample_off`` onwards.  ``max_depth < 0`` means
    unlimited.  Returns the number of nodes written.
    """
    m = boot.shape[0]
    p = X.shape[1]
    cap = 2 * m + 1
    keys = np.zeros(cap, dtype=np.uint64)
    scratch = np.empty(m, dtype=np.int64)
    xs = np.empty(m, dtype=np.float64)
    ys = np.empty(m, dtype=np.float64)
    fbuf = np.empty(p, dtype=np.int64)
    for k in range(m):
        samples[sample_off + k] = boot[k]

    start[node_off] = sample_off
    end[node_off] = sample_off + m
    depth[node_off] = 0
    keys[0] = splitmix64(tree_key)
    n_nodes = 1
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        local = stack[sp]
        node = node_off + local
        feature[node] = -1
        threshold[node] = 0.0
        left[node] = -1
        right[node] = -1
        s = start[node]
        e = end[node]
        cnt = e - s
        # the range is only permuted by ancestors' partitions here, so this
        # sum matches the one a shallower tree with the same key computes
        ymin = y[samples[s]]
        ymax = ymin
        ysum = 0.0
        for k in range(s, e):
            v = y[samples[k]]
            ysum += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        ymean = ysum / cnt
        value[node] = ymean
        if max_depth >= 0 and depth[node] >= max_depth:
            continue
        if cnt < 2 or cnt < 2 * min_samples_leaf or ymax == ymin:
            continue

        n_feats = _choose_features(keys[local], p, max_features, fbuf)
        best_sse = np.inf
        best_f = -1
        best_thr = 0.0
        for fi in range(n_feats):
            f = fbuf[fi]
            for k in range(cnt):
                r = samples[s + k]
                xs[k] = X[r, f]
                ys[k] = y[r] - ymean
            _sort_pairs(xs, ys, cnt)
            if xs[0] == xs[cnt - 1]:
                continue
            tot = 0.0
            totq = 0.0
            for k in range(cnt):
                d = ys[k]
                tot += d
                totq += d * d
            sl = 0.0
            ql = 0.0
            for i in range(1, cnt):
                d = ys[i - 1]
                sl += d
                ql += d * d
                if i < min_samples_leaf or cnt - i < min_samples_leaf:
                    continue
                if not (xs[i - 1] < xs[i]):
                    continue
                sr = tot - sl
                qr = totq - ql
                sse = (ql - sl * sl / i) + (qr - sr * sr / (cnt - i))
                if sse < best_sse:
                    best_sse = sse
                    best_f = f
                    thr = 0.5 * (xs[i - 1] + xs[i])
                    if thr >= xs[i]:
                        thr = xs[i - 1]
                    best_thr = thr
        if best_f < 0:
            continue

        nl = 0
        nr = 0
        for k in range(s, e):
            r = samples[k]
            if X[r, best_f] <= best_thr:
                samples[s + nl] = r
                nl += 1
            else:
                scratch[nr] = r
                nr += 1
        for k in range(nr):
            samples[s + nl + k] = scratch[k]

        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = node_off + lc
        right[node] = node_off + rc
        start[node_off + lc] = s
        end[node_off + lc] = s + nl
        start[node_off + rc] = s + nl
        end[node_off + rc] = e
        depth[node_off + lc] = depth[node] + 1
        depth[node_off + rc] = depth[node] + 1
        keys[lc] = splitmix64(keys[local] ^ _LEFT_SALT)
        keys[rc] = splitmix64(keys[local] ^ _RIGHT_SALT)
        stack[sp] = rc
        sp += 1
        stack[sp] = lc
        sp += 1
    return n_nodes


@njit(cache=True, inline="always")
def tree_stream_key(base, b):
    return splitmix64(base ^ splitmix64(np.uint64(b) * _GOLDEN))


@njit(cache=True)
def bootstrap_rows(key, n):
    """``n`` draws with replacement from ``range(n)`` on a SplitMix64 stream."""
    out = np.empty(n, dtype=np.int64)
    state = key
    for i in range(n):
        state = state + _GOLDEN
        z = state
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        out[i] = np.int64(float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0) * n)
    return out


@njit(cache=True, nogil=True)
def build_forest(X, y, first, count, boot_base, split_base, max_depth, max_features,
                 min_samples_leaf):
    """Grow trees ``first .. first + count - 1``; arrays are concatenated in tree order."""
    n = X.shape[0]
    cap = count * (2 * n + 1)
    feature = np.empty(cap, dtype=np.int64)
    threshold = np.empty(cap, dtype=np.float64)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    depth = np.empty(cap, dtype=np.int64)
    start = np.empty(cap, dtype=np.int64)
    end = np.empty(cap, dtype=np.int64)
    value = np.empty(cap, dtype=np.float64)
    samples = np.empty(count * n, dtype=np.int64)
    roots = np.empty(count, dtype=np.int64)
    off = 0
    for t in range(count):
        b = first + t
        boot = bootstrap_rows(tree_stream_key(boot_base, b), n)
        roots[t] = off
        off += grow_tree(X, y, boot, max_depth, max_features, min_samples_leaf,
                         tree_stream_key(split_base, b), feature, threshold, left, right, depth,
                         start, end, value, samples, off, t * n)
    return (feature[:off].copy(), threshold[:off].copy(), left[:off].copy(), right[:off].copy(),
            depth[:off].copy(), start[:off].copy(), end[:off].copy(), value[:off].copy(),
            samples, roots)


@njit(cache=True)
def node_values(y, samples, start, end):
    out = np.empty(start.shape[0], dtype=np.float64)
    for k in range(start.shape[0]):
        acc = 0.0
        for i in range(start[k], end[k]):
            acc += y[samples[i]]
        out[k] = acc / (end[k] - start[k])
    return out


@njit(cache=True, inline="always")
def leaf_of(row, feature, threshold, left, right, depth, root, depth_limit):
    node = root
    while left[node] >= 0 and (depth_limit < 0 or depth[node] < depth_limit):
        if row[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def apply_forest(X, feature, threshold, left, right, depth, roots, n_trees, depth_limit):
    out = np.empty((X.shape[0], n_trees), dtype=np.int64)
    for r in range(X.shape[0]):
        for t in range(n_trees):
            out[r, t] = leaf_of(X[r], feature, threshold, left, right, depth, roots[t], depth_limit)
    return out


@njit(cache=True, inline="always")
def quantile_from_weights(W, total, y_sorted, tau, interp):
    """Inverse weighted CDF over rank-ordered targets.

    ``interp == 0``: smallest target whose cumulative weight reaches tau.
    ``interp == 1``: linear interpolation between weight midpoints.
    """
    n = W.shape[0]
    if interp == 0:
        thr = (tau - TAU_SLACK) * total
        cum = np.int64(0)
        last = 0
        for k in range(n):
            w = W[k]
            if w > 0:
                cum += w
                last = k
                if cum >= thr:
                    return y_sorted[k]
        return y_sorted[last]
    cum = np.int64(0)
    prev_pos = -1.0
    prev_val = 0.0
    for k in range(n):
        w = W[k]
        if w > 0:
            pos = (cum + 0.5 * w) / total
            cum += w
            if tau <= pos:
                if prev_pos < 0:
                    return y_sorted[k]
                frac = (tau - prev_pos) / (pos - prev_pos)
                return prev_val + frac * (y_sorted[k] - prev_val)
            prev_pos = pos
            prev_val = y_sorted[k]
    return prev_val


@njit(cache=True, inline="always")
def _accumulate_leaf(W, leaf, start, end, samples, rank, sign):
    m = end[leaf] - start[leaf]
    w = QUNIT // m
    for k in range(start[leaf], end[leaf]):
        W[rank[samples[k]]] += sign * w
    return sign * w * m


@njit(cache=True, nogil=True)
def predict_quantiles(X, feature, threshold, left, right, depth, start, end, samples,
                      roots, n_trees, depth_limit, rank, y_sorted, taus, interp):
    n_rows = X.shape[0]
    out = np.empty((n_rows, taus.shape[0]), dtype=np.float64)
    W = np.zeros(y_sorted.shape[0], dtype=np.int64)
    for r in range(n_rows):
        W[:] = 0
        total = np.int64(0)
        for t in range(n_trees):
            leaf = leaf_of(X[r], feature, threshold, left, right, depth, roots[t], depth_limit)
            total += _accumulate_leaf(W, leaf, start, end, samples, rank, np.int64(1))
        for q in range(taus.shape[0]):
            out[r, q] = quantile_from_weights(W, total, y_sorted, taus[q], interp)
    return out


@njit(cache=True, nogil=True)
def predict_means(X, feature, threshold, left, right, depth, value, roots, n_trees, depth_limit):
    out = np.empty(X.shape[0], dtype=np.float64)
    for r in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            acc += value[leaf_of(X[r], feature, threshold, left, right, depth, roots[t], depth_limit)]
        out[r] = acc / n_trees
    return out


@njit(cache=True, nogil=True)
def quantile_weights(X, feature, threshold, left, right, depth, start, end, samples,
                     roots, n_trees, depth_limit, n_train):
    """Integer weights per training row (original order) and their total."""
    W = np.zeros((X.shape[0], n_train), dtype=np.int64)
    totals = np.zeros(X.shape[0], dtype=np.int64)
    ident = np.arange(n_train)
    for r in range(X.shape[0]):
        for t in range(n_trees):
            leaf = leaf_of(X[r], feature, threshold, left, right, depth, roots[t], depth_limit)
            totals[r] += _accumulate_leaf(W[r], leaf, start, end, samples, ident, np.int64(1))
    return W, totals


@njit(cache=True, inline="always")
def _separating(x, brow, tag, feature, threshold, left, right, roots, node_tree, reach, stamp, lists, cnt):
    """Fill ``lists[j, :cnt[j]]`` with the trees holding a reachable split on
    feature j that sends ``x`` and ``brow`` different ways.

    ``tag`` must differ between calls sharing ``stamp``.
    """
    cnt[:] = 0
    reach[:] = False
    for t in range(roots.shape[0]):
        reach[roots[t]] = True
    # children always follow their parent, so one forward pass marks every
    # node some mix of x and brow can reach
    for node in range(feature.shape[0]):
        if left[node] < 0 or not reach[node]:
            continue
        j = feature[node]
        xl = x[j] <= threshold[node]
        bl = brow[j] <= threshold[node]
        if xl or bl:
            reach[left[node]] = True
        if not (xl and bl):
            reach[right[node]] = True
        if xl != bl:
            t = node_tree[node]
            if stamp[j, t] != tag:
                stamp[j, t] = tag
                lists[j, cnt[j]] = t
                cnt[j] += 1


@njit(cache=True, nogil=True)
def forest_shapley(x, background, feature, threshold, left, right, depth, start, end,
                   samples, value, roots, node_tree, rank, y_sorted, tau, interp, use_mean,
                   weights, popcount):
    """Interventional Shapley values of one row against a background set.

    The game is averaged over background rows.  For a single background row
    ``b`` only features that some split separates (``x_j`` and ``b_j`` on
    opposite sides) can change a prediction; the rest are dummy players with
    zero value, so each per-row game is enumerated over those features alone
    in Gray-code order, re-traversing only trees holding a separating split.

    ``weights[d, s]`` is the Shapley weight ``s!(d-s-1)!/d!`` and
    ``popcount[m]`` the number of set bits of ``m``.  Returns
    ``(phi, base, full)`` with ``full`` the mean value of the grand coalition.
    """
    p = x.shape[0]
    n_trees = roots.shape[0]
    n_nodes = feature.shape[0]
    nb = background.shape[0]
    phi = np.zeros(p)
    acc = np.zeros(p)
    base = 0.0
    full = 0.0
    vb = np.empty(np.int64(1) << np.int64(p), dtype=np.float64)
    W = np.zeros(y_sorted.shape[0], dtype=np.int64)
    cur = np.empty(n_trees, dtype=np.int64)
    z = np.empty(p, dtype=np.float64)
    stamp = np.zeros((p, n_trees), dtype=np.int64)
    lists = np.empty((p, n_trees), dtype=np.int64)
    cnt = np.zeros(p, dtype=np.int64)
    active = np.empty(p, dtype=np.int64)
    reach = np.zeros(n_nodes, dtype=np.bool_)
    for b in range(nb):
        _separating(x, background[b], b + 1, feature, threshold, left, right, roots, node_tree,
                    reach, stamp, lists, cnt)
        d = 0
        for j in range(p):
            z[j] = background[b, j]
            if cnt[j] > 0:
                active[d] = j
                d += 1
        # Gray-code bit k flips 2^(d-1-k) times: give the busiest features the high bits
        for a in range(1, d):
            j = active[a]
            k = a - 1
            while k >= 0 and cnt[active[k]] > cnt[j]:
                active[k + 1] = active[k]
                k -= 1
            active[k + 1] = j
        W[:] = 0
        total = np.int64(0)
        for t in range(n_trees):
            leaf = leaf_of(z, feature, threshold, left, right, depth, roots[t], -1)
            cur[t] = leaf
            if not use_mean:
                total += _accumulate_leaf(W, leaf, start, end, samples, rank, np.int64(1))
        f = _evaluate(W, total, y_sorted, tau, interp, use_mean, value, cur)
        vb[0] = f
        N = np.int64(1) << np.int64(d)
        mask = np.int64(0)
        for i in range(1, N):
            k = 0
            while ((i >> k) & 1) == 0:
                k += 1
            mask ^= np.int64(1) << k
            j = active[k]
            z[j] = x[j] if (mask >> k) & 1 else background[b, j]
            changed = False
            for u in range(cnt[j]):
                t = lists[j, u]
                leaf = leaf_of(z, feature, threshold, left, right, depth, roots[t], -1)
                if leaf != cur[t]:
                    if not use_mean:
                        total += _accumulate_leaf(W, cur[t], start, end, samples, rank, np.int64(-1))
                        total += _accumulate_leaf(W, leaf, start, end, samples, rank, np.int64(1))
                    cur[t] = leaf
                    changed = True
            if changed:
                f = _evaluate(W, total, y_sorted, tau, interp, use_mean, value, cur)
            vb[mask] = f
        base += vb[0]
        full += vb[N - 1]
        if d == 0:
            continue
        # phi_k = sum_{S contains k} v(S)(w(|S|-1) + w(|S|)) - sum_S v(S) w(|S|),
        # with w(d) taken as 0; v is shifted by v(empty) to keep sums small
        tail = 0.0
        v0 = vb[0]
        for m in range(N):
            s = popcount[m]
            wa = weights[d, s - 1] if s > 0 else 0.0
            wb = weights[d, s] if s < d else 0.0
            dv = vb[m] - v0
            tail += dv * wb
            vb[m] = dv * (wa + wb)
        for k in range(d):
            half = np.int64(1) << np.int64(k)
            tot = 0.0
            for lo in range(half, N, 2 * half):
                for m in range(lo, lo + half):
                    tot += vb[m]
            acc[k] = tot
        for k in range(d):
            phi[active[k]] += acc[k] - tail
    for j in range(p):
        phi[j] /= nb
    return phi, base / nb, full / nb


@njit(cache=True, nogil=True)
def forest_shapley_sampled(x, background, orders, feature, threshold, left, right, depth, start, end,
                           samples, value, roots, node_tree, rank, y_sorted, tau, interp, use_mean):
    """Permutation estimate of the interventional Shapley values of one row.

    Walks every ordering in ``orders`` once per background row, moving one
    feature at a time from the background value to ``x`` and crediting the
    change in prediction to it.  Only trees with a separating split on the
    moved feature are re-traversed.  Returns ``(phi, base)``.
    """
    p = x.shape[0]
    n_trees = roots.shape[0]
    nb = background.shape[0]
    n_orders = orders.shape[0]
    phi = np.zeros(p)
    base = 0.0
    W0 = np.zeros(y_sorted.shape[0], dtype=np.int64)
    W = np.zeros(y_sorted.shape[0], dtype=np.int64)
    cur0 = np.empty(n_trees, dtype=np.int64)
    cur = np.empty(n_trees, dtype=np.int64)
    z = np.empty(p, dtype=np.float64)
    stamp = np.zeros((p, n_trees), dtype=np.int64)
    lists = np.empty((p, n_trees), dtype=np.int64)
    cnt = np.zeros(p, dtype=np.int64)
    reach = np.zeros(feature.shape[0], dtype=np.bool_)
    for b in range(nb):
        _separating(x, background[b], b + 1, feature, threshold, left, right, roots, node_tree,
                    reach, stamp, lists, cnt)
        W0[:] = 0
        total0 = np.int64(0)
        for t in range(n_trees):
            leaf = leaf_of(background[b], feature, threshold, left, right, depth, roots[t], -1)
            cur0[t] = leaf
            if not use_mean:
                total0 += _accumulate_leaf(W0, leaf, start, end, samples, rank, np.int64(1))
        f0 = _evaluate(W0, total0, y_sorted, tau, interp, use_mean, value, cur0)
        base += f0
        for o in range(n_orders):
            W[:] = W0
            cur[:] = cur0
            total = total0
            prev = f0
            for j in range(p):
                z[j] = background[b, j]
            for k in range(p):
                j = orders[o, k]
                if cnt[j] == 0:
                    continue
                z[j] = x[j]
                changed = False
                for u in range(cnt[j]):
                    t = lists[j, u]
                    leaf = leaf_of(z, feature, threshold, left, right, depth, roots[t], -1)
                    if leaf != cur[t]:
                        if not use_mean:
                            total += _accumulate_leaf(W, cur[t], start, end, samples, rank, np.int64(-1))
                            total += _accumulate_leaf(W, leaf, start, end, samples, rank, np.int64(1))
                        cur[t] = leaf
                        changed = True
                if changed:
                    f = _evaluate(W, total, y_sorted, tau, interp, use_mean, value, cur)
                    phi[j] += f - prev
                    prev = f
    for j in range(p):
        phi[j] /= nb * n_orders
    return phi, base / nb


@njit(cache=True, inline="always")
def _evaluate(W, total, y_sorted, tau, interp, use_mean, value, cur):
    if use_mean:
        acc = 0.0
        for t in range(cur.shape[0]):
            acc += value[cur[t]]
        return acc / cur.shape[0]
    return quantile_from_weights(W, total, y_sorted, tau, interp)

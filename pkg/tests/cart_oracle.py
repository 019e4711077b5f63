"""Independent brute-force CART reference for small instances.

Everything here is deliberately naive: plain Python loops, direct sums over
explicit subsets, exhaustive enumeration of every (feature, midpoint)
candidate. Shares nothing with the library implementation beyond the
documented conventions (left iff value <= threshold; strict impurity
reduction; ties to lowest impurity, then feature index, then threshold).
"""


def gini_from_counts(sums):
    total = sum(sums)
    return 1.0 - sum((s / total) ** 2 for s in sums)


def class_sums(rows, y, w, n_classes):
    sums = [0.0] * n_classes
    for i in rows:
        sums[y[i]] += w[i]
    return sums


def enumerate_splits(rows, X, y, w, features, n_classes, min_leaf):
    """Every admissible (impurity, feature, threshold, left, right) candidate."""
    out = []
    for f in sorted(features):
        values = sorted(set(X[i][f] for i in rows))
        for a, b in zip(values, values[1:]):
            thr = (a + b) / 2.0
            left = [i for i in rows if X[i][f] <= thr]
            right = [i for i in rows if X[i][f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            ls = class_sums(left, y, w, n_classes)
            rs = class_sums(right, y, w, n_classes)
            wl, wr = sum(ls), sum(rs)
            impurity = (wl * gini_from_counts(ls) + wr * gini_from_counts(rs)) / (wl + wr)
            out.append((impurity, f, thr, left, right))
    return out


def oracle_best_split(rows, X, y, w, features, n_classes, min_leaf=1):
    candidates = enumerate_splits(rows, X, y, w, features, n_classes, min_leaf)
    if not candidates:
        return None
    parent = gini_from_counts(class_sums(rows, y, w, n_classes))
    best = min(candidates, key=lambda c: (c[0], c[1], c[2]))
    if best[0] >= parent:
        return None
    return best


def oracle_tree(rows, X, y, w, depth, max_depth, n_classes, min_leaf=1):
    """Nested-dict CART tree grown by exhaustive search."""
    sums = class_sums(rows, y, w, n_classes)
    labels = set(y[i] for i in rows)
    if depth >= max_depth or len(labels) <= 1 or len(rows) < 2:
        return {"leaf": sums}
    found = oracle_best_split(rows, X, y, w, range(len(X[0])), n_classes, min_leaf)
    if found is None:
        return {"leaf": sums}
    _, f, thr, left, right = found
    return {
        "f": f,
        "t": thr,
        "l": oracle_tree(left, X, y, w, depth + 1, max_depth, n_classes, min_leaf),
        "r": oracle_tree(right, X, y, w, depth + 1, max_depth, n_classes, min_leaf),
    }

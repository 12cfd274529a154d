"""Naive reference implementations used as independent test oracles.

Everything here is written with explicit loops over Python floats so that it
shares no code path with the vectorised library.
"""

import math


def cos_dist(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return 1.0 - dot / (nu * nv)


def softmax(row, tau=1.0):
    m = max(row)
    e = [math.exp((x - m) / tau) for x in row]
    z = sum(e)
    return [x / z for x in e]


def soa(S, T, labels):
    b = len(S)
    total, count = 0.0, 0
    for i in range(b):
        for j in range(b):
            if labels[i] != labels[j]:
                total += cos_dist(S[i], T[j])
                count += 1
    return 0.0 if count == 0 else -total / count


def column(M, j):
    return [row[j] for row in M]


def coa(S, T):
    c = len(S[0])
    total = 0.0
    for j in range(c):
        for k in range(c):
            if j != k:
                total += cos_dist(column(S, j), column(T, k))
    return -total / (c * (c - 1))


def ca(S, T):
    b, c = len(S), len(S[0])
    total = 0.0
    for j in range(c):
        for i in range(b):
            total += abs(S[i][j] - T[i][j])
    return total / c


def kl(S, T):
    b = len(S)
    total = 0.0
    for i in range(b):
        for s, t in zip(S[i], T[i]):
            total += s * math.log(s / t)
    return total / b


def ce(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(x - m) for x in row))
        total += lse - row[y]
    return total / len(logits)


def class_mean_offdiag(P, labels, num_classes):
    means = []
    for c in range(num_classes):
        rows = [p for p, y in zip(P, labels) if y == c]
        if rows:
            means.append([sum(col) / len(rows) for col in zip(*rows)])
    sims = []
    for a in range(len(means)):
        for b in range(len(means)):
            if a != b:
                sims.append(1.0 - cos_dist(means[a], means[b]))
    return sum(sims) / len(sims)

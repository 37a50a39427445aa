"""Plain-Python loop re-implementation of the GAR terms, used as a test oracle."""


def gram(b, cols):
    m = len(b)
    return [[sum(b[r][i] * b[r][j] for r in range(m)) for j in cols] for i in cols]


def affinity_ratio(n_mat, eps):
    n = len(n_mat)
    off = 0.0
    diag = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                diag += n_mat[i][j]
            else:
                off += n_mat[i][j]
    return off / ((n - 1) * diag + eps)


def balance_ratio(v, eps):
    n = len(v)
    off = 0.0
    diag = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                diag += v[i] * v[j]
            else:
                off += v[i] * v[j]
    return off / ((n - 1) * diag + eps)


def affinity(b, n_p, k_s, eps=1e-8):
    total = 0.0
    for p in range(n_p):
        total += affinity_ratio(gram(b, range(p * k_s, (p + 1) * k_s)), eps)
    return total / n_p


def balance(b, n_p, k_s, eps=1e-8):
    total = 0.0
    for p in range(n_p):
        g = gram(b, range(p * k_s, (p + 1) * k_s))
        total += balance_ratio([g[i][i] for i in range(k_s)], eps)
    return total / n_p


def frobenius_sq(b):
    return sum(x * x for row in b for x in row) / len(b)


def total(b, n_p, k_s, c_alpha, c_beta, c_F, eps=1e-8):
    return c_alpha * affinity(b, n_p, k_s, eps) + c_beta * (1.0 - balance(b, n_p, k_s, eps)) + c_F * frobenius_sq(b)

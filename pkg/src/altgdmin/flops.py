"""Closed-form flop counts for the kernels (one multiply-add = 2 flops)."""


def gemm(a: int, b: int, c: int) -> int:
    return 2 * a * b * c


def qr(n: int, r: int) -> int:
    return max(0, 2 * n * r * r - (2 * r**3) // 3)


def ls(m: int, r: int) -> int:
    """Householder least squares: QR, Q^T y and back substitution."""
    return qr(m, r) + 2 * m * r + r * r


def subspace_change(n: int, r: int) -> int:
    return 2 * gemm(n, r, r) + 2 * n * r * r

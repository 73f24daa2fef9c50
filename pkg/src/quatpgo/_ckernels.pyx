# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-iteration kernels (see ``_pykernels`` for the numpy reference).

Every loop runs over vertices; each vertex reads only its own incident edges
in CSR order and writes only its own output row, so results are identical for
any thread count.
"""
import numpy as np
cimport cython
from cython.parallel cimport prange
from libc.math cimport sqrt, isnan


cdef inline void qmul4(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


cdef inline void conj4(const double* a, double* out) noexcept nogil:
    out[0] = a[0]
    out[1] = -a[1]
    out[2] = -a[2]
    out[3] = -a[3]


cdef inline void matvec4(const double* S, const double* x, double* out) noexcept nogil:
    cdef int r
    for r in range(4):
        out[r] = S[4 * r] * x[0] + S[4 * r + 1] * x[1] + S[4 * r + 2] * x[2] + S[4 * r + 3] * x[3]


cdef inline double dot4(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]


cdef inline void right_mat(const double* a, double* W) noexcept nogil:
    # W(a): W(a) x = x a
    W[0] = a[0];  W[1] = -a[1]; W[2] = -a[2];  W[3] = -a[3]
    W[4] = a[1];  W[5] = a[0];  W[6] = a[3];   W[7] = -a[2]
    W[8] = a[2];  W[9] = -a[3]; W[10] = a[0];  W[11] = a[1]
    W[12] = a[3]; W[13] = a[2]; W[14] = -a[1]; W[15] = a[0]


cdef inline void left_mat_t(const double* a, double* Mt) noexcept nogil:
    # M(a)^T = M(a*)
    Mt[0] = a[0];   Mt[1] = a[1];  Mt[2] = a[2];   Mt[3] = a[3]
    Mt[4] = -a[1];  Mt[5] = a[0];  Mt[6] = a[3];   Mt[7] = -a[2]
    Mt[8] = -a[2];  Mt[9] = -a[3]; Mt[10] = a[0];  Mt[11] = a[1]
    Mt[12] = -a[3]; Mt[13] = a[2]; Mt[14] = -a[1]; Mt[15] = a[0]


cdef inline void matmul4(const double* A, const double* B, double* C) noexcept nogil:
    cdef int r, c
    for r in range(4):
        for c in range(4):
            C[4 * r + c] = (A[4 * r] * B[c] + A[4 * r + 1] * B[4 + c]
                            + A[4 * r + 2] * B[8 + c] + A[4 * r + 3] * B[12 + c])


cdef inline void f_residual(const double* qi, const double* pi, const double* a,
                            const double* ti, const double* tj, double* r) noexcept nogil:
    # r = [0, t_j - t_i] - q_i a p_i*
    cdef double tmp[4]
    cdef double pc[4]
    cdef double u[4]
    qmul4(qi, a, tmp)
    conj4(pi, pc)
    qmul4(tmp, pc, u)
    r[0] = -u[0]
    r[1] = tj[0] - ti[0] - u[1]
    r[2] = tj[1] - ti[1] - u[2]
    r[3] = tj[2] - ti[2] - u[3]


cdef inline void g_residual(const double* pj, const double* qi, const double* qm, double* rho) noexcept nogil:
    # rho = p_j* q_i q_ij - 1
    cdef double pc[4]
    cdef double tmp[4]
    conj4(pj, pc)
    qmul4(pc, qi, tmp)
    qmul4(tmp, qm, rho)
    rho[0] -= 1.0


cdef void _objective_vertex(Py_ssize_t v, const double[:, ::1] p, const double[:, ::1] q,
                            const double[:, ::1] t, const long[::1] J,
                            const double[:, ::1] a, const double[:, ::1] qm,
                            const double[:, :, ::1] S1, const double[:, :, ::1] S2,
                            const long[::1] out_ptr, const long[::1] out_idx,
                            double* fv, double* gv) noexcept nogil:
    cdef Py_ssize_t k, e, j
    cdef double r[4]
    cdef double y[4]
    cdef double fs = 0.0, gs = 0.0
    for k in range(out_ptr[v], out_ptr[v + 1]):
        e = out_idx[k]
        j = J[e]
        f_residual(&q[v, 0], &p[v, 0], &a[e, 0], &t[v, 0], &t[j, 0], r)
        matvec4(&S1[e, 0, 0], r, y)
        fs += dot4(r, y)
        g_residual(&p[j, 0], &q[v, 0], &qm[e, 0], r)
        matvec4(&S2[e, 0, 0], r, y)
        gs += dot4(r, y)
    fv[0] = fs
    gv[0] = gs


def objective(P, p, q, t, int nthreads=1):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const long[::1] J = P.J
    cdef const double[:, ::1] a = P.a
    cdef const double[:, ::1] qm = P.qm
    cdef const double[:, :, ::1] S1 = P.S1
    cdef const double[:, :, ::1] S2 = P.S2
    cdef const long[::1] out_ptr = P.out_ptr
    cdef const long[::1] out_idx = P.out_idx
    cdef Py_ssize_t n = P.n, v
    fa = np.zeros(n)
    ga = np.zeros(n)
    cdef double[::1] fv = fa
    cdef double[::1] gv = ga
    for v in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _objective_vertex(v, pv, qv, tv, J, a, qm, S1, S2, out_ptr, out_idx, &fv[v], &gv[v])
    return float(fa.sum()), float(ga.sum())


cdef void _grad_p_vertex(Py_ssize_t v, const double[:, ::1] p, const double[:, ::1] q,
                         const double[:, ::1] t, const long[::1] I, const long[::1] J,
                         const double[:, ::1] a, const double[:, ::1] qm,
                         const double[:, :, ::1] S1, const double[:, :, ::1] S2,
                         const long[::1] out_ptr, const long[::1] out_idx,
                         const long[::1] in_ptr, const long[::1] in_idx,
                         double* gf, double* gg) noexcept nogil:
    cdef Py_ssize_t k, e, i, j, c
    cdef double r[4]
    cdef double y[4]
    cdef double yc[4]
    cdef double qa[4]
    cdef double tmp[4]
    for c in range(4):
        gf[c] = 0.0
        gg[c] = 0.0
    for k in range(out_ptr[v], out_ptr[v + 1]):
        e = out_idx[k]
        j = J[e]
        f_residual(&q[v, 0], &p[v, 0], &a[e, 0], &t[v, 0], &t[j, 0], r)
        matvec4(&S1[e, 0, 0], r, y)
        conj4(y, yc)
        qmul4(&q[v, 0], &a[e, 0], qa)
        qmul4(yc, qa, tmp)
        for c in range(4):
            gf[c] -= 2.0 * tmp[c]
    for k in range(in_ptr[v], in_ptr[v + 1]):
        e = in_idx[k]
        i = I[e]
        g_residual(&p[v, 0], &q[i, 0], &qm[e, 0], r)
        matvec4(&S2[e, 0, 0], r, y)
        conj4(y, yc)
        qmul4(&q[i, 0], &qm[e, 0], qa)
        qmul4(qa, yc, tmp)
        for c in range(4):
            gg[c] += 2.0 * tmp[c]


def grad_p(P, p, q, t, int nthreads=1):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const long[::1] I = P.I
    cdef const long[::1] J = P.J
    cdef const double[:, ::1] a = P.a
    cdef const double[:, ::1] qm = P.qm
    cdef const double[:, :, ::1] S1 = P.S1
    cdef const double[:, :, ::1] S2 = P.S2
    cdef const long[::1] out_ptr = P.out_ptr
    cdef const long[::1] out_idx = P.out_idx
    cdef const long[::1] in_ptr = P.in_ptr
    cdef const long[::1] in_idx = P.in_idx
    cdef Py_ssize_t n = P.n, v
    gfa = np.zeros((n, 4))
    gga = np.zeros((n, 4))
    cdef double[:, ::1] gf = gfa
    cdef double[:, ::1] gg = gga
    for v in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _grad_p_vertex(v, pv, qv, tv, I, J, a, qm, S1, S2, out_ptr, out_idx, in_ptr, in_idx,
                       &gf[v, 0], &gg[v, 0])
    return gfa, gga


cdef void _grad_q_vertex(Py_ssize_t v, const double[:, ::1] p, const double[:, ::1] q,
                         const double[:, ::1] t, const long[::1] J,
                         const double[:, ::1] a, const double[:, ::1] qm,
                         const double[:, :, ::1] S1, const double[:, :, ::1] S2,
                         const long[::1] out_ptr, const long[::1] out_idx,
                         double* gf, double* gg) noexcept nogil:
    cdef Py_ssize_t k, e, j, c
    cdef double r[4]
    cdef double y[4]
    cdef double ac[4]
    cdef double tmp[4]
    cdef double tmp2[4]
    for c in range(4):
        gf[c] = 0.0
        gg[c] = 0.0
    for k in range(out_ptr[v], out_ptr[v + 1]):
        e = out_idx[k]
        j = J[e]
        f_residual(&q[v, 0], &p[v, 0], &a[e, 0], &t[v, 0], &t[j, 0], r)
        matvec4(&S1[e, 0, 0], r, y)
        conj4(&a[e, 0], ac)
        qmul4(y, &p[v, 0], tmp)
        qmul4(tmp, ac, tmp2)
        for c in range(4):
            gf[c] -= 2.0 * tmp2[c]
        g_residual(&p[j, 0], &q[v, 0], &qm[e, 0], r)
        matvec4(&S2[e, 0, 0], r, y)
        conj4(&qm[e, 0], ac)
        qmul4(&p[j, 0], y, tmp)
        qmul4(tmp, ac, tmp2)
        for c in range(4):
            gg[c] += 2.0 * tmp2[c]


def grad_q(P, p, q, t, int nthreads=1):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const long[::1] J = P.J
    cdef const double[:, ::1] a = P.a
    cdef const double[:, ::1] qm = P.qm
    cdef const double[:, :, ::1] S1 = P.S1
    cdef const double[:, :, ::1] S2 = P.S2
    cdef const long[::1] out_ptr = P.out_ptr
    cdef const long[::1] out_idx = P.out_idx
    cdef Py_ssize_t n = P.n, v
    gfa = np.zeros((n, 4))
    gga = np.zeros((n, 4))
    cdef double[:, ::1] gf = gfa
    cdef double[:, ::1] gg = gga
    for v in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _grad_q_vertex(v, pv, qv, tv, J, a, qm, S1, S2, out_ptr, out_idx, &gf[v, 0], &gg[v, 0])
    return gfa, gga


def p_step(P, p, q, t, lam, double beta, double tau1, int nthreads=1):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, ::1] lv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef const long[::1] I = P.I
    cdef const long[::1] J = P.J
    cdef const double[:, ::1] a = P.a
    cdef const double[:, ::1] qm = P.qm
    cdef const double[:, :, ::1] S1 = P.S1
    cdef const double[:, :, ::1] S2 = P.S2
    cdef const long[::1] out_ptr = P.out_ptr
    cdef const long[::1] out_idx = P.out_idx
    cdef const long[::1] in_ptr = P.in_ptr
    cdef const long[::1] in_idx = P.in_idx
    cdef Py_ssize_t n = P.n, v
    outa = np.empty((n, 4))
    bada = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] out = outa
    cdef unsigned char[::1] bad = bada
    for v in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _p_vertex(v, pv, qv, tv, lv, I, J, a, qm, S1, S2, out_ptr, out_idx, in_ptr, in_idx,
                  beta, tau1, &out[v, 0], &bad[v])
    return outa, int(bada.sum())


cdef void _p_vertex(Py_ssize_t v, const double[:, ::1] p, const double[:, ::1] q,
                    const double[:, ::1] t, const double[:, ::1] lam,
                    const long[::1] I, const long[::1] J,
                    const double[:, ::1] a, const double[:, ::1] qm,
                    const double[:, :, ::1] S1, const double[:, :, ::1] S2,
                    const long[::1] out_ptr, const long[::1] out_idx,
                    const long[::1] in_ptr, const long[::1] in_idx,
                    double beta, double tau1, double* out, unsigned char* bad) noexcept nogil:
    cdef double gf[4]
    cdef double gg[4]
    cdef double x[4]
    cdef double nrm
    cdef int c
    _grad_p_vertex(v, p, q, t, I, J, a, qm, S1, S2, out_ptr, out_idx, in_ptr, in_idx, gf, gg)
    for c in range(4):
        x[c] = (beta * q[v, c] + lam[v, c] + tau1 * p[v, c] - gf[c] - gg[c]) / (beta + tau1)
    nrm = sqrt(dot4(x, x))
    if not (nrm >= 1e-15):
        bad[0] = 1
        for c in range(4):
            out[c] = p[v, c]
    else:
        for c in range(4):
            out[c] = x[c] / nrm


cdef int chol_solve4(double* A, double* b) noexcept nogil:
    # in-place Cholesky of SPD 4x4 A (row-major, lower used) then solve A x = b into b
    cdef int r, c, k
    cdef double s
    for r in range(4):
        for c in range(r + 1):
            s = A[4 * r + c]
            for k in range(c):
                s -= A[4 * r + k] * A[4 * c + k]
            if r == c:
                if s <= 0.0:
                    return -1
                A[4 * r + r] = sqrt(s)
            else:
                A[4 * r + c] = s / A[4 * c + c]
    for r in range(4):
        s = b[r]
        for k in range(r):
            s -= A[4 * r + k] * b[k]
        b[r] = s / A[4 * r + r]
    for r in range(3, -1, -1):
        s = b[r]
        for k in range(r + 1, 4):
            s -= A[4 * k + r] * b[k]
        b[r] = s / A[4 * r + r]
    return 0


cdef void _q_vertex(Py_ssize_t v, const double[:, ::1] p, const double[:, ::1] q,
                    const double[:, ::1] t, const double[:, ::1] lam, const long[::1] J,
                    const double[:, ::1] a, const double[:, ::1] qm,
                    const double[:, :, ::1] S1, const double[:, :, ::1] S2,
                    const double[:, ::1] s1d, const double[::1] s2i,
                    const long[::1] out_ptr, const long[::1] out_idx,
                    double beta, double tau2, double* out, unsigned char* bad) noexcept nogil:
    cdef double A[16]
    cdef double b[4]
    cdef double G1[16]
    cdef double G2[16]
    cdef double Wq[16]
    cdef double Mt[16]
    cdef double SG[16]
    cdef double pc[4]
    cdef double ap[4]
    cdef double dt[4]
    cdef double sd[4]
    cdef Py_ssize_t k, e, j
    cdef int r, c, l
    cdef double s, s0, s1, a2
    for r in range(16):
        A[r] = 0.0
    for r in range(4):
        b[r] = 0.0
    conj4(&p[v, 0], pc)
    for k in range(out_ptr[v], out_ptr[v + 1]):
        e = out_idx[k]
        j = J[e]
        # G1 = W(a p_v*)
        qmul4(&a[e, 0], pc, ap)
        right_mat(ap, G1)
        # G2 = M(p_j)^T W(q_ij)
        left_mat_t(&p[j, 0], Mt)
        right_mat(&qm[e, 0], Wq)
        matmul4(Mt, Wq, G2)
        dt[0] = 0.0
        dt[1] = t[j, 0] - t[v, 0]
        dt[2] = t[j, 1] - t[v, 1]
        dt[3] = t[j, 2] - t[v, 2]
        if not isnan(s1d[e, 0]):
            # S1 = diag(s0, s1 I3): G1^T S1 G1 = s1 |a p*|^2 I + (s0 - s1) g g^T, g = G1^T e0
            s0 = s1d[e, 0]
            s1 = s1d[e, 1]
            a2 = dot4(ap, ap)
            for r in range(4):
                A[5 * r] += s1 * a2
                for c in range(4):
                    A[4 * r + c] += (s0 - s1) * G1[r] * G1[c]
                b[r] += s1 * (G1[4 + r] * dt[1] + G1[8 + r] * dt[2] + G1[12 + r] * dt[3])
        else:
            matmul4(&S1[e, 0, 0], G1, SG)
            for r in range(4):
                for c in range(4):
                    s = 0.0
                    for l in range(4):
                        s += G1[4 * l + r] * SG[4 * l + c]
                    A[4 * r + c] += s
            matvec4(&S1[e, 0, 0], dt, sd)
            for r in range(4):
                b[r] += G1[r] * sd[0] + G1[4 + r] * sd[1] + G1[8 + r] * sd[2] + G1[12 + r] * sd[3]
        if not isnan(s2i[e]):
            # S2 = s I4 and G2 is orthogonal up to |p_j| |q_ij|
            s = s2i[e] * dot4(&p[j, 0], &p[j, 0]) * dot4(&qm[e, 0], &qm[e, 0])
            for r in range(4):
                A[5 * r] += s
                b[r] += s2i[e] * G2[r]
        else:
            matmul4(&S2[e, 0, 0], G2, SG)
            for r in range(4):
                for c in range(4):
                    s = 0.0
                    for l in range(4):
                        s += G2[4 * l + r] * SG[4 * l + c]
                    A[4 * r + c] += s
            # S2 e0 is the first column of S2
            for r in range(4):
                b[r] += (G2[r] * S2[e, 0, 0] + G2[4 + r] * S2[e, 1, 0]
                         + G2[8 + r] * S2[e, 2, 0] + G2[12 + r] * S2[e, 3, 0])
    for r in range(16):
        A[r] *= 2.0
    for r in range(4):
        A[5 * r] += beta + tau2
        b[r] = 2.0 * b[r] + beta * p[v, r] - lam[v, r] + tau2 * q[v, r]
    if chol_solve4(A, b) != 0:
        bad[0] = 1
    for r in range(4):
        out[r] = b[r]


def q_step(P, p, q, t, lam, double beta, double tau2, int nthreads=1):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, ::1] lv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef const long[::1] J = P.J
    cdef const double[:, ::1] a = P.a
    cdef const double[:, ::1] qm = P.qm
    cdef const double[:, :, ::1] S1 = P.S1
    cdef const double[:, :, ::1] S2 = P.S2
    cdef const double[:, ::1] s1d = P.s1_diag
    cdef const double[::1] s2i = P.s2_iso
    cdef const long[::1] out_ptr = P.out_ptr
    cdef const long[::1] out_idx = P.out_idx
    cdef Py_ssize_t n = P.n, v
    outa = np.empty((n, 4))
    bada = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] out = outa
    cdef unsigned char[::1] bad = bada
    for v in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _q_vertex(v, pv, qv, tv, lv, J, a, qm, S1, S2, s1d, s2i, out_ptr, out_idx, beta, tau2,
                  &out[v, 0], &bad[v])
    if bada.any():
        raise np.linalg.LinAlgError("q-subproblem system is not positive definite")
    return outa


cdef inline void _edge_w(Py_ssize_t e, const double[:, ::1] p, const double[:, ::1] q,
                         const long[::1] I, const double[:, ::1] a,
                         const double[:, :, ::1] S1, double* w) noexcept nogil:
    # w = S1_hat u_vec + u0 sigma12 with u = q_i a p_i*
    cdef Py_ssize_t i = I[e]
    cdef double tmp[4]
    cdef double pc[4]
    cdef double u[4]
    cdef int r
    qmul4(&q[i, 0], &a[e, 0], tmp)
    conj4(&p[i, 0], pc)
    qmul4(tmp, pc, u)
    for r in range(3):
        w[r] = (S1[e, r + 1, 1] * u[1] + S1[e, r + 1, 2] * u[2] + S1[e, r + 1, 3] * u[3]
                + S1[e, 0, r + 1] * u[0])


cdef void _t_rhs_vertex(Py_ssize_t v, const double[:, ::1] p, const double[:, ::1] q,
                        const double[:, ::1] t, const long[::1] I,
                        const double[:, ::1] a, const double[:, :, ::1] S1,
                        const long[::1] out_ptr, const long[::1] out_idx,
                        const long[::1] in_ptr, const long[::1] in_idx,
                        double tau3, double* out) noexcept nogil:
    cdef Py_ssize_t k
    cdef int r
    cdef double w[3]
    cdef double acc[3]
    for r in range(3):
        acc[r] = 0.0
    for k in range(in_ptr[v], in_ptr[v + 1]):
        _edge_w(in_idx[k], p, q, I, a, S1, w)
        for r in range(3):
            acc[r] += w[r]
    for k in range(out_ptr[v], out_ptr[v + 1]):
        _edge_w(out_idx[k], p, q, I, a, S1, w)
        for r in range(3):
            acc[r] -= w[r]
    for r in range(3):
        out[r] = tau3 * t[v, r] + 2.0 * acc[r]


def t_rhs(P, p, q, t, double tau3, int nthreads=1):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const long[::1] I = P.I
    cdef const double[:, ::1] a = P.a
    cdef const double[:, :, ::1] S1 = P.S1
    cdef const long[::1] out_ptr = P.out_ptr
    cdef const long[::1] out_idx = P.out_idx
    cdef const long[::1] in_ptr = P.in_ptr
    cdef const long[::1] in_idx = P.in_idx
    cdef Py_ssize_t n = P.n, v
    outa = np.empty((n, 3))
    cdef double[:, ::1] out = outa
    for v in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        _t_rhs_vertex(v, pv, qv, tv, I, a, S1, out_ptr, out_idx, in_ptr, in_idx, tau3, &out[v, 0])
    return outa

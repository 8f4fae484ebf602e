"""Numba kernels for the CPU rasterizer.

All kernels are sequential and float64, so renders and gradients are
bit-reproducible. The rasterization coverage radius extends past the 3-sigma
field radius until the blending coefficient falls below alpha_min, keeping
truncation jumps far below gradient-check tolerances.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def project_kernel(means, quats, log_scales, logits, colors,
                   rcw, campos, fx, fy, cx, cy, width, height,
                   lowpass, alpha_min, near):
    n = means.shape[0]
    valid = np.zeros(n, np.bool_)
    degenerate = np.zeros(n, np.bool_)
    mean2d = np.zeros((n, 2))
    conic = np.zeros((n, 3))
    rad3 = np.zeros(n)
    covrad = np.zeros(n)
    zs = np.zeros(n)
    ncam = np.zeros((n, 3))
    opa = np.zeros(n)
    col = np.zeros((n, 3))

    for i in range(n):
        dx0 = means[i, 0] - campos[0]
        dx1 = means[i, 1] - campos[1]
        dx2 = means[i, 2] - campos[2]
        x = rcw[0, 0] * dx0 + rcw[0, 1] * dx1 + rcw[0, 2] * dx2
        y = rcw[1, 0] * dx0 + rcw[1, 1] * dx1 + rcw[1, 2] * dx2
        z = rcw[2, 0] * dx0 + rcw[2, 1] * dx1 + rcw[2, 2] * dx2
        if z <= near:
            continue
        o = 1.0 / (1.0 + math.exp(-logits[i]))
        if o <= alpha_min:
            continue

        qw = quats[i, 0]
        qx = quats[i, 1]
        qy = quats[i, 2]
        qz = quats[i, 3]
        qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if qn < 1e-12:
            continue
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
        r01 = 2.0 * (qx * qy - qw * qz)
        r02 = 2.0 * (qx * qz + qw * qy)
        r10 = 2.0 * (qx * qy + qw * qz)
        r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
        r12 = 2.0 * (qy * qz - qw * qx)
        r20 = 2.0 * (qx * qz - qw * qy)
        r21 = 2.0 * (qy * qz + qw * qx)
        r22 = 1.0 - 2.0 * (qx * qx + qy * qy)

        s0 = math.exp(log_scales[i, 0])
        s1 = math.exp(log_scales[i, 1])
        s2 = math.exp(log_scales[i, 2])

        # WR = world->camera rotation times Gaussian rotation
        wr00 = rcw[0, 0] * r00 + rcw[0, 1] * r10 + rcw[0, 2] * r20
        wr01 = rcw[0, 0] * r01 + rcw[0, 1] * r11 + rcw[0, 2] * r21
        wr02 = rcw[0, 0] * r02 + rcw[0, 1] * r12 + rcw[0, 2] * r22
        wr10 = rcw[1, 0] * r00 + rcw[1, 1] * r10 + rcw[1, 2] * r20
        wr11 = rcw[1, 0] * r01 + rcw[1, 1] * r11 + rcw[1, 2] * r21
        wr12 = rcw[1, 0] * r02 + rcw[1, 1] * r12 + rcw[1, 2] * r22
        wr20 = rcw[2, 0] * r00 + rcw[2, 1] * r10 + rcw[2, 2] * r20
        wr21 = rcw[2, 0] * r01 + rcw[2, 1] * r11 + rcw[2, 2] * r21
        wr22 = rcw[2, 0] * r02 + rcw[2, 1] * r12 + rcw[2, 2] * r22

        # B = WR * diag(s); JB = J * B with the EWA projection Jacobian J
        b00 = wr00 * s0
        b01 = wr01 * s1
        b02 = wr02 * s2
        b10 = wr10 * s0
        b11 = wr11 * s1
        b12 = wr12 * s2
        b20 = wr20 * s0
        b21 = wr21 * s1
        b22 = wr22 * s2

        j00 = fx / z
        j02 = -fx * x / (z * z)
        j11 = fy / z
        j12 = -fy * y / (z * z)
        jb00 = j00 * b00 + j02 * b20
        jb01 = j00 * b01 + j02 * b21
        jb02 = j00 * b02 + j02 * b22
        jb10 = j11 * b10 + j12 * b20
        jb11 = j11 * b11 + j12 * b21
        jb12 = j11 * b12 + j12 * b22

        va = jb00 * jb00 + jb01 * jb01 + jb02 * jb02 + lowpass
        vb = jb00 * jb10 + jb01 * jb11 + jb02 * jb12
        vc = jb10 * jb10 + jb11 * jb11 + jb12 * jb12 + lowpass
        det = va * vc - vb * vb
        if det <= 0.0:
            degenerate[i] = True
            continue

        mid = 0.5 * (va + vc)
        disc = mid * mid - det
        if disc < 0.0:
            disc = 0.0
        lam = mid + math.sqrt(disc)
        r3 = 3.0 * math.sqrt(lam)

        u = fx * x / z + cx
        v = fy * y / z + cy
        if (u + r3 < 0.0 or u - r3 > width - 1.0 or
                v + r3 < 0.0 or v - r3 > height - 1.0):
            continue

        tail = 2.0 * (math.log(o) - math.log(alpha_min))
        covrad[i] = math.sqrt(tail * lam)
        rad3[i] = r3
        mean2d[i, 0] = u
        mean2d[i, 1] = v
        conic[i, 0] = vc / det
        conic[i, 1] = -vb / det
        conic[i, 2] = va / det
        zs[i] = z
        opa[i] = o

        # normal = rotated axis of the smallest scale, flipped toward camera
        k = 0
        smin = s0
        if s1 < smin:
            k = 1
            smin = s1
        if s2 < smin:
            k = 2
        if k == 0:
            nwx, nwy, nwz = r00, r10, r20
        elif k == 1:
            nwx, nwy, nwz = r01, r11, r21
        else:
            nwx, nwy, nwz = r02, r12, r22
        dotv = -(nwx * dx0 + nwy * dx1 + nwz * dx2)
        flip = 1.0 if dotv >= 0.0 else -1.0
        ncam[i, 0] = flip * (rcw[0, 0] * nwx + rcw[0, 1] * nwy + rcw[0, 2] * nwz)
        ncam[i, 1] = flip * (rcw[1, 0] * nwx + rcw[1, 1] * nwy + rcw[1, 2] * nwz)
        ncam[i, 2] = flip * (rcw[2, 0] * nwx + rcw[2, 1] * nwy + rcw[2, 2] * nwz)

        for ch in range(3):
            cc = colors[i, ch]
            if cc < 0.0:
                cc = 0.0
            elif cc > 1.0:
                cc = 1.0
            col[i, ch] = cc
        valid[i] = True

    return valid, degenerate, mean2d, conic, rad3, covrad, zs, ncam, opa, col


@njit(cache=True)
def composite_forward(mean2d, conic, covrad, zs, ncam, opa, col,
                      height, width, alpha_clamp, t_term, alpha_min):
    nsplat = mean2d.shape[0]
    color = np.zeros((height, width, 3))
    rawd = np.zeros((height, width))
    nrm = np.zeros((height, width, 3))
    abuf = np.zeros((height, width))
    trans = np.ones((height, width))
    vis_total = np.zeros((height, width), np.int32)
    vis_contrib = np.zeros((height, width), np.int32)

    for s in range(nsplat):
        ux = mean2d[s, 0]
        uy = mean2d[s, 1]
        r = covrad[s]
        x0 = int(math.ceil(ux - r))
        x1 = int(math.floor(ux + r))
        y0 = int(math.ceil(uy - r))
        y1 = int(math.floor(uy + r))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        if x1 < x0 or y1 < y0:
            continue
        ca = conic[s, 0]
        cb = conic[s, 1]
        cc = conic[s, 2]
        o = opa[s]
        for py in range(y0, y1 + 1):
            dy = py - uy
            for px in range(x0, x1 + 1):
                dx = px - ux
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                araw = o * math.exp(-0.5 * q)
                if araw < alpha_min:
                    continue
                vis_total[py, px] += 1
                tp = trans[py, px]
                if tp < t_term:
                    continue
                alpha = araw
                if alpha > alpha_clamp:
                    alpha = alpha_clamp
                w = alpha * tp
                color[py, px, 0] += col[s, 0] * w
                color[py, px, 1] += col[s, 1] * w
                color[py, px, 2] += col[s, 2] * w
                rawd[py, px] += zs[s] * w
                nrm[py, px, 0] += ncam[s, 0] * w
                nrm[py, px, 1] += ncam[s, 1] * w
                nrm[py, px, 2] += ncam[s, 2] * w
                abuf[py, px] += w
                trans[py, px] = tp * (1.0 - alpha)
                vis_contrib[py, px] += 1
    return color, rawd, nrm, abuf, trans, vis_total, vis_contrib


@njit(cache=True)
def composite_backward(mean2d, conic, covrad, zs, ncam, opa, col,
                       tfin, vis_total, vis_contrib,
                       u_c, u_r, u_n, u_a, bg,
                       alpha_clamp, t_term, alpha_min):
    nsplat = mean2d.shape[0]
    height, width = tfin.shape
    g_mean2d = np.zeros((nsplat, 2))
    g_conic = np.zeros((nsplat, 3))
    g_opa = np.zeros(nsplat)
    g_col = np.zeros((nsplat, 3))
    g_z = np.zeros(nsplat)
    g_n = np.zeros((nsplat, 3))

    trun = tfin.copy()
    seen = np.zeros((height, width), np.int32)
    # suffix accumulator, seeded with the background term of the color output
    sacc = np.empty((height, width))
    for py in range(height):
        for px in range(width):
            sacc[py, px] = (u_c[py, px, 0] * bg[0] + u_c[py, px, 1] * bg[1] +
                            u_c[py, px, 2] * bg[2]) * tfin[py, px]

    for s in range(nsplat - 1, -1, -1):
        ux = mean2d[s, 0]
        uy = mean2d[s, 1]
        r = covrad[s]
        x0 = int(math.ceil(ux - r))
        x1 = int(math.floor(ux + r))
        y0 = int(math.ceil(uy - r))
        y1 = int(math.floor(uy + r))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        if x1 < x0 or y1 < y0:
            continue
        ca = conic[s, 0]
        cb = conic[s, 1]
        cc = conic[s, 2]
        o = opa[s]
        for py in range(y0, y1 + 1):
            dy = py - uy
            for px in range(x0, x1 + 1):
                dx = px - ux
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                gauss = math.exp(-0.5 * q)
                araw = o * gauss
                if araw < alpha_min:
                    continue
                seen[py, px] += 1
                # visits past vis_contrib happened after termination
                if seen[py, px] <= vis_total[py, px] - vis_contrib[py, px]:
                    continue
                alpha = araw
                if alpha > alpha_clamp:
                    alpha = alpha_clamp
                tb = trun[py, px] / (1.0 - alpha)
                w = alpha * tb
                phi = (u_c[py, px, 0] * col[s, 0] + u_c[py, px, 1] * col[s, 1] +
                       u_c[py, px, 2] * col[s, 2] + u_r[py, px] * zs[s] +
                       u_n[py, px, 0] * ncam[s, 0] + u_n[py, px, 1] * ncam[s, 1] +
                       u_n[py, px, 2] * ncam[s, 2] + u_a[py, px])
                g_col[s, 0] += u_c[py, px, 0] * w
                g_col[s, 1] += u_c[py, px, 1] * w
                g_col[s, 2] += u_c[py, px, 2] * w
                g_z[s] += u_r[py, px] * w
                g_n[s, 0] += u_n[py, px, 0] * w
                g_n[s, 1] += u_n[py, px, 1] * w
                g_n[s, 2] += u_n[py, px, 2] * w
                dalpha = tb * phi - sacc[py, px] / (1.0 - alpha)
                sacc[py, px] += phi * w
                trun[py, px] = tb
                if araw < alpha_clamp:  # clamp kills alpha-shape gradients
                    g_opa[s] += dalpha * gauss
                    dq = dalpha * o * (-0.5 * gauss)
                    g_conic[s, 0] += dq * dx * dx
                    g_conic[s, 1] += dq * 2.0 * dx * dy
                    g_conic[s, 2] += dq * dy * dy
                    g_mean2d[s, 0] -= dq * 2.0 * (ca * dx + cb * dy)
                    g_mean2d[s, 1] -= dq * 2.0 * (cb * dx + cc * dy)
    return g_mean2d, g_conic, g_opa, g_col, g_z, g_n


@njit(cache=True)
def unproject_backward(means, quats, log_scales, logits, colors, valid,
                       g_mean2d, g_conic, g_opa, g_col, g_z, g_ncam,
                       rcw, campos, fx, fy, lowpass):
    n = means.shape[0]
    d_mean = np.zeros((n, 3))
    d_quat = np.zeros((n, 4))
    d_ls = np.zeros((n, 3))
    d_logit = np.zeros(n)
    d_color = np.zeros((n, 3))

    for i in range(n):
        if not valid[i]:
            continue
        # recompute the forward projection quantities
        dx0 = means[i, 0] - campos[0]
        dx1 = means[i, 1] - campos[1]
        dx2 = means[i, 2] - campos[2]
        x = rcw[0, 0] * dx0 + rcw[0, 1] * dx1 + rcw[0, 2] * dx2
        y = rcw[1, 0] * dx0 + rcw[1, 1] * dx1 + rcw[1, 2] * dx2
        z = rcw[2, 0] * dx0 + rcw[2, 1] * dx1 + rcw[2, 2] * dx2

        qw = quats[i, 0]
        qx = quats[i, 1]
        qy = quats[i, 2]
        qz = quats[i, 3]
        qnorm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        qw /= qnorm
        qx /= qnorm
        qy /= qnorm
        qz /= qnorm
        r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
        r01 = 2.0 * (qx * qy - qw * qz)
        r02 = 2.0 * (qx * qz + qw * qy)
        r10 = 2.0 * (qx * qy + qw * qz)
        r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
        r12 = 2.0 * (qy * qz - qw * qx)
        r20 = 2.0 * (qx * qz - qw * qy)
        r21 = 2.0 * (qy * qz + qw * qx)
        r22 = 1.0 - 2.0 * (qx * qx + qy * qy)

        s0 = math.exp(log_scales[i, 0])
        s1 = math.exp(log_scales[i, 1])
        s2 = math.exp(log_scales[i, 2])

        wr00 = rcw[0, 0] * r00 + rcw[0, 1] * r10 + rcw[0, 2] * r20
        wr01 = rcw[0, 0] * r01 + rcw[0, 1] * r11 + rcw[0, 2] * r21
        wr02 = rcw[0, 0] * r02 + rcw[0, 1] * r12 + rcw[0, 2] * r22
        wr10 = rcw[1, 0] * r00 + rcw[1, 1] * r10 + rcw[1, 2] * r20
        wr11 = rcw[1, 0] * r01 + rcw[1, 1] * r11 + rcw[1, 2] * r21
        wr12 = rcw[1, 0] * r02 + rcw[1, 1] * r12 + rcw[1, 2] * r22
        wr20 = rcw[2, 0] * r00 + rcw[2, 1] * r10 + rcw[2, 2] * r20
        wr21 = rcw[2, 0] * r01 + rcw[2, 1] * r11 + rcw[2, 2] * r21
        wr22 = rcw[2, 0] * r02 + rcw[2, 1] * r12 + rcw[2, 2] * r22

        b00 = wr00 * s0
        b01 = wr01 * s1
        b02 = wr02 * s2
        b10 = wr10 * s0
        b11 = wr11 * s1
        b12 = wr12 * s2
        b20 = wr20 * s0
        b21 = wr21 * s1
        b22 = wr22 * s2

        j00 = fx / z
        j02 = -fx * x / (z * z)
        j11 = fy / z
        j12 = -fy * y / (z * z)
        jb00 = j00 * b00 + j02 * b20
        jb01 = j00 * b01 + j02 * b21
        jb02 = j00 * b02 + j02 * b22
        jb10 = j11 * b10 + j12 * b20
        jb11 = j11 * b11 + j12 * b21
        jb12 = j11 * b12 + j12 * b22

        va = jb00 * jb00 + jb01 * jb01 + jb02 * jb02 + lowpass
        vb = jb00 * jb10 + jb01 * jb11 + jb02 * jb12
        vc = jb10 * jb10 + jb11 * jb11 + jb12 * jb12 + lowpass
        det = va * vc - vb * vb
        ka = vc / det
        kb = -vb / det
        kc = va / det

        # color: clamp subgradient
        for ch in range(3):
            cch = colors[i, ch]
            if 0.0 <= cch <= 1.0:
                d_color[i, ch] = g_col[i, ch]

        # opacity logit through the sigmoid
        o = 1.0 / (1.0 + math.exp(-logits[i]))
        d_logit[i] = g_opa[i] * o * (1.0 - o)

        # conic -> 2D covariance: dV = -K Gk K with Gk the packed gradient
        ga = g_conic[i, 0]
        gb2 = 0.5 * g_conic[i, 1]
        gc = g_conic[i, 2]
        kg00 = ka * ga + kb * gb2
        kg01 = ka * gb2 + kb * gc
        kg10 = kb * ga + kc * gb2
        kg11 = kb * gb2 + kc * gc
        m00 = -(kg00 * ka + kg01 * kb)
        m01 = -(kg00 * kb + kg01 * kc)
        m10 = -(kg10 * ka + kg11 * kb)
        m11 = -(kg10 * kb + kg11 * kc)
        gv00 = m00
        gv01 = 0.5 * (m01 + m10)
        gv11 = m11

        # cov2d = JB JB^T: dJB = 2 Gv JB
        djb00 = 2.0 * (gv00 * jb00 + gv01 * jb10)
        djb01 = 2.0 * (gv00 * jb01 + gv01 * jb11)
        djb02 = 2.0 * (gv00 * jb02 + gv01 * jb12)
        djb10 = 2.0 * (gv01 * jb00 + gv11 * jb10)
        djb11 = 2.0 * (gv01 * jb01 + gv11 * jb11)
        djb12 = 2.0 * (gv01 * jb02 + gv11 * jb12)

        # JB = J B: dJ = dJB B^T (structural zeros of J discarded), dB = J^T dJB
        dj00 = djb00 * b00 + djb01 * b01 + djb02 * b02
        dj02 = djb00 * b20 + djb01 * b21 + djb02 * b22
        dj11 = djb10 * b10 + djb11 * b11 + djb12 * b12
        dj12 = djb10 * b20 + djb11 * b21 + djb12 * b22

        db00 = j00 * djb00
        db01 = j00 * djb01
        db02 = j00 * djb02
        db10 = j11 * djb10
        db11 = j11 * djb11
        db12 = j11 * djb12
        db20 = j02 * djb00 + j12 * djb10
        db21 = j02 * djb01 + j12 * djb11
        db22 = j02 * djb02 + j12 * djb12

        # B = WR diag(s): split into scale and rotation parts
        ds0 = wr00 * db00 + wr10 * db10 + wr20 * db20
        ds1 = wr01 * db01 + wr11 * db11 + wr21 * db21
        ds2 = wr02 * db02 + wr12 * db12 + wr22 * db22
        d_ls[i, 0] = ds0 * s0
        d_ls[i, 1] = ds1 * s1
        d_ls[i, 2] = ds2 * s2

        dwr00 = db00 * s0
        dwr01 = db01 * s1
        dwr02 = db02 * s2
        dwr10 = db10 * s0
        dwr11 = db11 * s1
        dwr12 = db12 * s2
        dwr20 = db20 * s0
        dwr21 = db21 * s1
        dwr22 = db22 * s2

        # WR = rcw Rq: dRq = rcw^T dWR
        dr00 = rcw[0, 0] * dwr00 + rcw[1, 0] * dwr10 + rcw[2, 0] * dwr20
        dr01 = rcw[0, 0] * dwr01 + rcw[1, 0] * dwr11 + rcw[2, 0] * dwr21
        dr02 = rcw[0, 0] * dwr02 + rcw[1, 0] * dwr12 + rcw[2, 0] * dwr22
        dr10 = rcw[0, 1] * dwr00 + rcw[1, 1] * dwr10 + rcw[2, 1] * dwr20
        dr11 = rcw[0, 1] * dwr01 + rcw[1, 1] * dwr11 + rcw[2, 1] * dwr21
        dr12 = rcw[0, 1] * dwr02 + rcw[1, 1] * dwr12 + rcw[2, 1] * dwr22
        dr20 = rcw[0, 2] * dwr00 + rcw[1, 2] * dwr10 + rcw[2, 2] * dwr20
        dr21 = rcw[0, 2] * dwr01 + rcw[1, 2] * dwr11 + rcw[2, 2] * dwr21
        dr22 = rcw[0, 2] * dwr02 + rcw[1, 2] * dwr12 + rcw[2, 2] * dwr22

        # normal channel: ncam = flip * rcw Rq[:, k] with k the argmin axis
        k = 0
        smin = s0
        if s1 < smin:
            k = 1
            smin = s1
        if s2 < smin:
            k = 2
        if k == 0:
            nwx, nwy, nwz = r00, r10, r20
        elif k == 1:
            nwx, nwy, nwz = r01, r11, r21
        else:
            nwx, nwy, nwz = r02, r12, r22
        dotv = -(nwx * dx0 + nwy * dx1 + nwz * dx2)
        flip = 1.0 if dotv >= 0.0 else -1.0
        gnx = g_ncam[i, 0]
        gny = g_ncam[i, 1]
        gnz = g_ncam[i, 2]
        dnwx = flip * (rcw[0, 0] * gnx + rcw[1, 0] * gny + rcw[2, 0] * gnz)
        dnwy = flip * (rcw[0, 1] * gnx + rcw[1, 1] * gny + rcw[2, 1] * gnz)
        dnwz = flip * (rcw[0, 2] * gnx + rcw[1, 2] * gny + rcw[2, 2] * gnz)
        if k == 0:
            dr00 += dnwx
            dr10 += dnwy
            dr20 += dnwz
        elif k == 1:
            dr01 += dnwx
            dr11 += dnwy
            dr21 += dnwz
        else:
            dr02 += dnwx
            dr12 += dnwy
            dr22 += dnwz

        # rotation -> normalized quaternion
        dqw = 2.0 * (-dr01 * qz + dr02 * qy + dr10 * qz - dr12 * qx -
                     dr20 * qy + dr21 * qx)
        dqx = 2.0 * (dr01 * qy + dr02 * qz + dr10 * qy - 2.0 * dr11 * qx -
                     dr12 * qw + dr20 * qz + dr21 * qw - 2.0 * dr22 * qx)
        dqy = 2.0 * (-2.0 * dr00 * qy + dr01 * qx + dr02 * qw + dr10 * qx +
                     dr12 * qz - dr20 * qw + dr21 * qz - 2.0 * dr22 * qy)
        dqz = 2.0 * (-2.0 * dr00 * qz - dr01 * qw + dr02 * qx + dr10 * qw -
                     2.0 * dr11 * qz + dr12 * qy + dr20 * qx + dr21 * qy)

        # through quaternion normalization
        dot = dqw * qw + dqx * qx + dqy * qy + dqz * qz
        d_quat[i, 0] = (dqw - dot * qw) / qnorm
        d_quat[i, 1] = (dqx - dot * qx) / qnorm
        d_quat[i, 2] = (dqy - dot * qy) / qnorm
        d_quat[i, 3] = (dqz - dot * qz) / qnorm

        # Jacobian entries -> camera-space position
        dcx = dj02 * (-fx / (z * z))
        dcy = dj12 * (-fy / (z * z))
        dcz = (dj00 * (-fx / (z * z)) + dj11 * (-fy / (z * z)) +
               dj02 * (2.0 * fx * x / (z * z * z)) +
               dj12 * (2.0 * fy * y / (z * z * z)))

        # screen-space mean and composited z-depth
        gu = g_mean2d[i, 0]
        gv = g_mean2d[i, 1]
        dcx += gu * fx / z
        dcy += gv * fy / z
        dcz += -gu * fx * x / (z * z) - gv * fy * y / (z * z) + g_z[i]

        # camera-space -> world mean
        d_mean[i, 0] = rcw[0, 0] * dcx + rcw[1, 0] * dcy + rcw[2, 0] * dcz
        d_mean[i, 1] = rcw[0, 1] * dcx + rcw[1, 1] * dcy + rcw[2, 1] * dcz
        d_mean[i, 2] = rcw[0, 2] * dcx + rcw[1, 2] * dcy + rcw[2, 2] * dcz

    return d_mean, d_quat, d_ls, d_logit, d_color

"""Numba kernels for the simulator hot path.

Everything here is pure-array, nopython, nogil, and cached to disk, so worker
processes pay the compile cost once per machine.  Grid convention: cell
(row, col) covers x in [col*res, (col+1)*res), y in [row*res, (row+1)*res);
`blocked` is uint8 with 0 = free, nonzero = wall or furniture.
"""

import math

import numba as nb
import numpy as np

U64 = np.uint64
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_GAMMA = U64(0x9E3779B97F4A7C15)


@nb.njit(cache=True, nogil=True, inline="always")
def splitmix64(z):
    z = (z + _GAMMA) & U64(0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


# ------------------------------------------------------------- distance field


@nb.njit(cache=True, nogil=True)
def dijkstra_field(blocked, src_r, src_c, res):
    """Exact 8-connected geodesic distances from one source cell.

    Step costs are res (axis) and sqrt(2)*res (diagonal), accumulated in
    float64 as d[v] = d[u] + cost; the fixed point of that relaxation is
    unique, so results are bit-identical to any correct Dijkstra using the
    same accumulation.  Unreachable cells stay +inf.
    """
    H, W = blocked.shape
    n = H * W
    dist = np.full(n, np.inf, np.float64)
    if blocked[src_r, src_c]:
        return dist.reshape(H, W)
    # binary min-heap with lazy duplicates; each edge pushes at most once
    cap = 8 * n + 8
    hkey = np.empty(cap, np.float64)
    hval = np.empty(cap, np.int64)
    settled = np.zeros(n, np.uint8)
    diag = res * math.sqrt(2.0)
    src = src_r * W + src_c
    dist[src] = 0.0
    hkey[0] = 0.0
    hval[0] = src
    size = 1
    while size > 0:
        v = hval[0]
        size -= 1
        hkey[0] = hkey[size]
        hval[0] = hval[size]
        i = 0
        while True:
            left = 2 * i + 1
            right = left + 1
            m = i
            if left < size and hkey[left] < hkey[m]:
                m = left
            if right < size and hkey[right] < hkey[m]:
                m = right
            if m == i:
                break
            hkey[i], hkey[m] = hkey[m], hkey[i]
            hval[i], hval[m] = hval[m], hval[i]
            i = m
        if settled[v]:
            continue
        settled[v] = 1
        r = v // W
        c = v % W
        d0 = dist[v]
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                rr = r + dr
                cc = c + dc
                if rr < 0 or rr >= H or cc < 0 or cc >= W:
                    continue
                if blocked[rr, cc]:
                    continue
                nd = d0 + (diag if dr != 0 and dc != 0 else res)
                u = rr * W + cc
                if nd < dist[u]:
                    dist[u] = nd
                    j = size
                    hkey[j] = nd
                    hval[j] = u
                    size += 1
                    while j > 0:
                        parent = (j - 1) // 2
                        if hkey[parent] <= hkey[j]:
                            break
                        hkey[parent], hkey[j] = hkey[j], hkey[parent]
                        hval[parent], hval[j] = hval[j], hval[parent]
                        j = parent
    return dist.reshape(H, W)


@nb.njit(cache=True, nogil=True)
def interp_field(values, res, x, y):
    """Bilinear interpolation over cell centers; +inf cells drop out of the
    stencil (weights renormalized); all four unreachable -> +inf."""
    H, W = values.shape
    u = x / res - 0.5
    v = y / res - 0.5
    j0 = int(math.floor(u))
    i0 = int(math.floor(v))
    fu = u - j0
    fv = v - i0
    acc = 0.0
    wsum = 0.0
    for di in range(2):
        wi = fv if di == 1 else 1.0 - fv
        for dj in range(2):
            w = wi * (fu if dj == 1 else 1.0 - fu)
            if w <= 0.0:
                continue
            i = i0 + di
            j = j0 + dj
            if i < 0 or i >= H or j < 0 or j >= W:
                continue
            val = values[i, j]
            if val == np.inf:
                continue
            acc += w * val
            wsum += w
    if wsum == 0.0:
        return np.inf
    return acc / wsum


@nb.njit(cache=True, nogil=True)
def segment_min_interp(values, res, x0, y0, x1, y1):
    """Minimum of interp_field sampled every res/2 along a segment."""
    length = math.hypot(x1 - x0, y1 - y0)
    n = max(1, int(length / (0.5 * res)))
    best = np.inf
    for i in range(n + 1):
        t = i / n
        val = interp_field(values, res, x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        if val < best:
            best = val
    return best


# ------------------------------------------------------------------ collision


@nb.njit(cache=True, nogil=True, inline="always")
def _axis_gap(lo, hi, p):
    if p < lo:
        return lo - p
    if p > hi:
        return p - hi
    return 0.0


@nb.njit(cache=True, nogil=True)
def disc_hits_blocked(blocked, res, x, y, rad):
    """True iff the open disc overlaps any blocked cell square."""
    H, W = blocked.shape
    c0 = max(0, int((x - rad) / res))
    c1 = min(W - 1, int((x + rad) / res))
    r0 = max(0, int((y - rad) / res))
    r1 = min(H - 1, int((y + rad) / res))
    r2 = rad * rad
    for r in range(r0, r1 + 1):
        gy = _axis_gap(r * res, (r + 1) * res, y)
        for c in range(c0, c1 + 1):
            if not blocked[r, c]:
                continue
            gx = _axis_gap(c * res, (c + 1) * res, x)
            if gx * gx + gy * gy < r2:
                return True
    return False


@nb.njit(cache=True, nogil=True)
def box_hits_blocked(blocked, res, cx, cy, hx, hy):
    """True iff the open axis-aligned box overlaps any blocked cell square."""
    H, W = blocked.shape
    c0 = max(0, int((cx - hx) / res))
    c1 = min(W - 1, int((cx + hx) / res))
    r0 = max(0, int((cy - hy) / res))
    r1 = min(H - 1, int((cy + hy) / res))
    for r in range(r0, r1 + 1):
        if r * res >= cy + hy or (r + 1) * res <= cy - hy:
            continue
        for c in range(c0, c1 + 1):
            if not blocked[r, c]:
                continue
            if c * res < cx + hx and (c + 1) * res > cx - hx:
                return True
    return False


@nb.njit(cache=True, nogil=True)
def _free_fraction_disc(blocked, res, x, y, rad, dx, dy):
    """Largest t in [0,1] keeping the disc wall-free along (dx,dy); t=0 assumed free."""
    if not disc_hits_blocked(blocked, res, x + dx, y + dy, rad):
        return 1.0
    lo = 0.0
    hi = 1.0
    for _ in range(22):
        mid = 0.5 * (lo + hi)
        if disc_hits_blocked(blocked, res, x + mid * dx, y + mid * dy, rad):
            hi = mid
        else:
            lo = mid
    return lo


@nb.njit(cache=True, nogil=True)
def _free_fraction_box(blocked, res, cx, cy, hx, hy, dx, dy):
    if not box_hits_blocked(blocked, res, cx + dx, cy + dy, hx, hy):
        return 1.0
    lo = 0.0
    hi = 1.0
    for _ in range(22):
        mid = 0.5 * (lo + hi)
        if box_hits_blocked(blocked, res, cx + mid * dx, cy + mid * dy, hx, hy):
            hi = mid
        else:
            lo = mid
    return lo


@nb.njit(cache=True, nogil=True)
def agent_move(blocked, res, x, y, rad, dx, dy,
               obj_xy, obj_half, obj_mass, obj_step_disp, obj_push_events,
               pushable):
    """Axis-separated slide against walls, with quasi-static box pushing.

    Per axis: tentative move, push any overlapped movable box along the motion
    axis by penetration/(1+mass) (clipped so the box never enters a wall),
    roll the agent back to contact, then resolve walls by bisection.  Agent
    treated as its bounding square for box contact (disc-exact for walls).
    Returns (nx, ny, collided).
    """
    collided = False
    nobj = obj_xy.shape[0]
    nx = x + dx
    ny = y
    if pushable and dx != 0.0:
        sgn = 1.0 if dx > 0 else -1.0
        for i in range(nobj):
            hx = obj_half[i]
            pen_x = (rad + hx) - abs(nx - obj_xy[i, 0])
            pen_y = (rad + hx) - abs(ny - obj_xy[i, 1])
            if pen_x <= 0.0 or pen_y <= 0.0:
                continue
            collided = True
            obj_push_events[i] += 1
            want = sgn * pen_x / (1.0 + obj_mass[i])
            frac = _free_fraction_box(blocked, res, obj_xy[i, 0], obj_xy[i, 1],
                                      hx, hx, want, 0.0)
            applied = want * frac
            obj_xy[i, 0] += applied
            obj_step_disp[i, 0] += applied
            # residual overlap stops the agent at the box face
            if (rad + hx) - abs(nx - obj_xy[i, 0]) > 0.0:
                face = obj_xy[i, 0] - sgn * (rad + hx)
                if sgn > 0:
                    nx = min(nx, face)
                else:
                    nx = max(nx, face)
    if dx != 0.0:
        frac = _free_fraction_disc(blocked, res, x, y, rad, nx - x, 0.0)
        if frac < 1.0:
            collided = True
        nx = x + (nx - x) * frac
    ny = y + dy
    if pushable and dy != 0.0:
        sgn = 1.0 if dy > 0 else -1.0
        for i in range(nobj):
            hx = obj_half[i]
            pen_x = (rad + hx) - abs(nx - obj_xy[i, 0])
            pen_y = (rad + hx) - abs(ny - obj_xy[i, 1])
            if pen_x <= 0.0 or pen_y <= 0.0:
                continue
            collided = True
            obj_push_events[i] += 1
            want = sgn * pen_y / (1.0 + obj_mass[i])
            frac = _free_fraction_box(blocked, res, obj_xy[i, 0], obj_xy[i, 1],
                                      hx, hx, 0.0, want)
            applied = want * frac
            obj_xy[i, 1] += applied
            obj_step_disp[i, 1] += applied
            if (rad + hx) - abs(ny - obj_xy[i, 1]) > 0.0:
                face = obj_xy[i, 1] - sgn * (rad + hx)
                if sgn > 0:
                    ny = min(ny, face)
                else:
                    ny = max(ny, face)
    if dy != 0.0:
        frac = _free_fraction_disc(blocked, res, nx, y, rad, 0.0, ny - y)
        if frac < 1.0:
            collided = True
        ny = y + (ny - y) * frac
    return nx, ny, collided


# ---------------------------------------------------------------- pedestrians


@nb.njit(cache=True, nogil=True)
def step_peds(arc, direction, speed, length, dt,
              pts, cum, offset, count, out_xy):
    """Advance patrol arcs with exact endpoint reflection, then evaluate
    polyline positions.  Operates in place on arc/direction."""
    n = arc.shape[0]
    for i in range(n):
        L = length[i]
        o = offset[i]
        m = count[i]
        if L <= 0.0 or m < 2:
            out_xy[i, 0] = pts[o, 0]
            out_xy[i, 1] = pts[o, 1]
            continue
        a = arc[i] + direction[i] * speed[i] * dt
        while a < 0.0 or a > L:
            if a > L:
                a = 2.0 * L - a
                direction[i] = -1.0
            else:
                a = -a
                direction[i] = 1.0
        if a == L:
            direction[i] = -1.0
        elif a == 0.0:
            direction[i] = 1.0
        arc[i] = a
        # locate the segment containing arc a (cum[o] == 0, cum[o+m-1] == L)
        lo = o
        hi = o + m - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if cum[mid] <= a:
                lo = mid
            else:
                hi = mid
        seg = cum[lo + 1] - cum[lo]
        t = 0.0 if seg <= 0.0 else (a - cum[lo]) / seg
        out_xy[i, 0] = pts[lo, 0] + t * (pts[lo + 1, 0] - pts[lo, 0])
        out_xy[i, 1] = pts[lo, 1] + t * (pts[lo + 1, 1] - pts[lo, 1])


@nb.njit(cache=True, nogil=True)
def eval_polyline(pts, cum, offset, count, idx, a):
    o = offset[idx]
    m = count[idx]
    if m < 2:
        return pts[o, 0], pts[o, 1]
    lo = o
    hi = o + m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cum[mid] <= a:
            lo = mid
        else:
            hi = mid
    seg = cum[lo + 1] - cum[lo]
    t = 0.0 if seg <= 0.0 else (a - cum[lo]) / seg
    return (pts[lo, 0] + t * (pts[lo + 1, 0] - pts[lo, 0]),
            pts[lo, 1] + t * (pts[lo + 1, 1] - pts[lo, 1]))


# ------------------------------------------------------------------ rendering


@nb.njit(cache=True, nogil=True)
def _raycast_grid(blocked, res, ox, oy, dx, dy, tmax):
    """Distance along the ray to the first blocked cell boundary (DDA)."""
    H, W = blocked.shape
    c = int(ox / res)
    r = int(oy / res)
    if r < 0 or r >= H or c < 0 or c >= W:
        return 0.0
    if blocked[r, c]:
        return 0.0
    if dx > 0.0:
        step_c = 1
        tmax_x = ((c + 1) * res - ox) / dx
        tdx = res / dx
    elif dx < 0.0:
        step_c = -1
        tmax_x = (c * res - ox) / dx
        tdx = -res / dx
    else:
        step_c = 0
        tmax_x = np.inf
        tdx = np.inf
    if dy > 0.0:
        step_r = 1
        tmax_y = ((r + 1) * res - oy) / dy
        tdy = res / dy
    elif dy < 0.0:
        step_r = -1
        tmax_y = (r * res - oy) / dy
        tdy = -res / dy
    else:
        step_r = 0
        tmax_y = np.inf
        tdy = np.inf
    while True:
        if tmax_x < tmax_y:
            t = tmax_x
            c += step_c
            tmax_x += tdx
        else:
            t = tmax_y
            r += step_r
            tmax_y += tdy
        if t >= tmax:
            return tmax
        if r < 0 or r >= H or c < 0 or c >= W:
            return tmax
        if blocked[r, c]:
            return t


@nb.njit(cache=True, nogil=True)
def render_depth(blocked, res, px, py, heading,
                 ped_xy, ped_rad, ped_height,
                 obj_xy, obj_half, obj_height,
                 hfov, vfov, max_range, cam_height,
                 out, scan, sigma, dropout, noise_key):
    """One-ray-per-column 2.5D depth render into out (H, W) float32.

    Walls and furniture fill the full column at their planar z-distance;
    pedestrians (cylinders) and movable boxes fill rows given by the pinhole
    projection of their height span [0, h] at that distance.  Values are
    z/max_range clamped to [0, 1]; no hit = 1.0.  Scan flavor applies
    zero-mean unit-variance triangular multiplicative noise (scaled by sigma)
    and dropout holes, keyed per pixel by noise_key.
    """
    H = out.shape[0]
    W = out.shape[1]
    npeds = ped_xy.shape[0]
    nobj = obj_xy.shape[0]
    nent = npeds + nobj
    ent_z = np.empty(nent, np.float64)
    ent_h = np.empty(nent, np.float64)
    fv = (H * 0.5) / math.tan(vfov * 0.5)
    for k in range(W):
        rel = hfov * 0.5 - (k + 0.5) * hfov / W
        ca = math.cos(rel)
        ang = heading + rel
        dx = math.cos(ang)
        dy = math.sin(ang)
        tcap = max_range / ca
        tw = _raycast_grid(blocked, res, px, py, dx, dy, tcap)
        zw = tw * ca
        vw = zw / max_range
        if vw > 1.0:
            vw = 1.0
        col_val = np.float32(vw)
        for r in range(H):
            out[r, k] = col_val
        # entity hits strictly nearer than the wall
        nhit = 0
        for i in range(npeds):
            ocx = ped_xy[i, 0] - px
            ocy = ped_xy[i, 1] - py
            b = ocx * dx + ocy * dy
            c0 = ocx * ocx + ocy * ocy - ped_rad[i] * ped_rad[i]
            disc = b * b - c0
            if disc <= 0.0:
                continue
            s = math.sqrt(disc)
            if b + s <= 0.0:
                continue
            t = b - s
            if t < 0.0:
                t = 0.0
            z = t * ca
            if z < zw:
                ent_z[nhit] = z
                ent_h[nhit] = ped_height
                nhit += 1
        for i in range(nobj):
            hx = obj_half[i]
            if dx != 0.0:
                tx1 = (obj_xy[i, 0] - hx - px) / dx
                tx2 = (obj_xy[i, 0] + hx - px) / dx
                if tx1 > tx2:
                    tx1, tx2 = tx2, tx1
            else:
                if abs(obj_xy[i, 0] - px) >= hx:
                    continue
                tx1 = -np.inf
                tx2 = np.inf
            if dy != 0.0:
                ty1 = (obj_xy[i, 1] - hx - py) / dy
                ty2 = (obj_xy[i, 1] + hx - py) / dy
                if ty1 > ty2:
                    ty1, ty2 = ty2, ty1
            else:
                if abs(obj_xy[i, 1] - py) >= hx:
                    continue
                ty1 = -np.inf
                ty2 = np.inf
            tnear = max(tx1, ty1)
            tfar = min(tx2, ty2)
            if tnear > tfar or tfar <= 0.0:
                continue
            t = tnear if tnear > 0.0 else 0.0
            z = t * ca
            if z < zw:
                ent_z[nhit] = z
                ent_h[nhit] = obj_height
                nhit += 1
        # painter's order: far to near
        for i in range(1, nhit):
            kz = ent_z[i]
            kh = ent_h[i]
            j = i - 1
            while j >= 0 and ent_z[j] < kz:
                ent_z[j + 1] = ent_z[j]
                ent_h[j + 1] = ent_h[j]
                j -= 1
            ent_z[j + 1] = kz
            ent_h[j + 1] = kh
        for i in range(nhit):
            z = ent_z[i]
            if z < 1e-6:
                z = 1e-6
            u_top = H * 0.5 - fv * (ent_h[i] - cam_height) / z
            u_bot = H * 0.5 + fv * cam_height / z
            r0 = int(math.ceil(u_top - 0.5))
            r1 = int(math.floor(u_bot - 0.5))
            if r0 < 0:
                r0 = 0
            if r1 > H - 1:
                r1 = H - 1
            val = np.float32(min(z / max_range, 1.0))
            for r in range(r0, r1 + 1):
                out[r, k] = val
    if scan:
        inv53 = 1.0 / 9007199254740992.0
        scale = sigma * 2.449489742783178  # unit-variance triangular
        for r in range(H):
            for k in range(W):
                base = noise_key ^ (U64(r * W + k + 1) * _MIX2)
                r1 = splitmix64(base)
                r2 = splitmix64(base + _GAMMA)
                r3 = splitmix64(base + U64(2) * _GAMMA)
                u1 = (r1 >> U64(11)) * inv53
                u2 = (r2 >> U64(11)) * inv53
                v = out[r, k] * (1.0 + scale * (u1 + u2 - 1.0))
                if (r3 >> U64(11)) * inv53 < dropout:
                    v = 1.0
                elif v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                out[r, k] = np.float32(v)


def pose_noise_key(noise_seed: int, px: float, py: float, heading: float) -> np.uint64:
    """Deterministic per-render noise key from the sensor seed and exact pose bits."""
    import struct

    key = U64(noise_seed & 0xFFFFFFFFFFFFFFFF)
    for val in (px, py, heading):
        bits = U64(struct.unpack("<Q", struct.pack("<d", float(val)))[0])
        key = splitmix64(key ^ bits)
    return U64(key)

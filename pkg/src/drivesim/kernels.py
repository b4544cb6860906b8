"""Numeric kernels for the simulator's hot loops.

Plain scalar/loop math, compiled with numba when available (see accel.py).
Conventions: x right, y up, headings in radians CCW from +x and normalized
to (-pi, pi]; positive steering angle turns left. Segments are rows of
(x1, y1, x2, y2). Vehicle parameter arrays are laid out as
(wheelbase, max_speed, max_steer, accel_rate, brake_rate, steer_rate,
body_length, body_width).
"""
import math

import numpy as np

from .accel import maybe_njit

TWO_PI = 2.0 * math.pi

# control codes (mirrored by vehicle.SteerCmd / vehicle.AccelCmd)
STEER_NONE = 0
STEER_LEFT = 1
STEER_RIGHT = 2
ACCEL_COAST = 0
ACCEL_ACCELERATE = 1
ACCEL_BRAKE = 2

# episode terminal codes
TERM_RUNNING = 0
TERM_COLLISION = 1
TERM_FINISHED = 2
TERM_TICK_CAP = 3
TERM_NAN = 4

# vehicle param array indices
VP_WHEELBASE = 0
VP_MAX_SPEED = 1
VP_MAX_STEER = 2
VP_ACCEL = 3
VP_BRAKE = 4
VP_STEER_RATE = 5
VP_BODY_LEN = 6
VP_BODY_WID = 7

# pure-pursuit constants for traffic cars
TRAFFIC_LOOKAHEAD = 8.0
TRAFFIC_CAPTURE_RADIUS = 2.0

# dead-zone for mapping continuous policy outputs onto discrete commands
DEAD_ZONE = 0.1


@maybe_njit()
def normalize_heading(h):
    # maps any angle into (-pi, pi]; exact identity on in-range values
    if -math.pi < h <= math.pi:
        return h
    h = math.pi - (math.pi - h) % TWO_PI
    if h <= -math.pi:  # float modulo can land exactly on 2*pi
        h = math.pi
    return h


@maybe_njit()
def apply_control_kernel(v, delta, steer_code, accel_code, max_speed, max_steer,
                         accel_rate, brake_rate, steer_rate, dt):
    if accel_code == ACCEL_ACCELERATE:
        v = v + accel_rate * dt
    elif accel_code == ACCEL_BRAKE:
        v = v - brake_rate * dt
    if v < 0.0:
        v = 0.0
    elif v > max_speed:
        v = max_speed
    if steer_code == STEER_LEFT:
        delta = delta + steer_rate * dt
    elif steer_code == STEER_RIGHT:
        delta = delta - steer_rate * dt
    else:
        # decay toward center without overshooting
        if delta > 0.0:
            delta = max(0.0, delta - steer_rate * dt)
        elif delta < 0.0:
            delta = min(0.0, delta + steer_rate * dt)
    if delta > max_steer:
        delta = max_steer
    elif delta < -max_steer:
        delta = -max_steer
    return v, delta


@maybe_njit()
def bicycle_step_kernel(x, y, heading, v, delta, wheelbase, dt):
    x = x + v * math.cos(heading) * dt
    y = y + v * math.sin(heading) * dt
    heading = normalize_heading(heading + (v / wheelbase) * math.tan(delta) * dt)
    return x, y, heading


@maybe_njit()
def ray_segment_distance(ox, oy, dx, dy, x1, y1, x2, y2, limit):
    """Distance along the unit ray (ox,oy)+(dx,dy)t to segment, or limit."""
    ex = x2 - x1
    ey = y2 - y1
    px = x1 - ox
    py = y1 - oy
    denom = dx * ey - dy * ex
    if denom == 0.0:
        # parallel; only a collinear overlap can be hit
        if px * dy - py * dx != 0.0:
            return limit
        t1 = px * dx + py * dy
        t2 = (x2 - ox) * dx + (y2 - oy) * dy
        hi = max(t1, t2)
        if hi < 0.0:
            return limit
        lo = min(t1, t2)
        t = lo if lo > 0.0 else 0.0
        return t if t < limit else limit
    t = (px * ey - py * ex) / denom
    u = (px * dy - py * dx) / denom
    if t >= 0.0 and 0.0 <= u <= 1.0 and t < limit:
        return t
    return limit


@maybe_njit()
def cast_rays_kernel(ox, oy, heading, fov, max_range, n_rays, segs, n_segs):
    out = np.empty(n_rays, np.float64)
    for i in range(n_rays):
        bearing = heading - 0.5 * fov + fov * i / (n_rays - 1)
        dx = math.cos(bearing)
        dy = math.sin(bearing)
        best = max_range
        for j in range(n_segs):
            t = ray_segment_distance(ox, oy, dx, dy,
                                     segs[j, 0], segs[j, 1], segs[j, 2], segs[j, 3],
                                     best)
            if t < best:
                best = t
        out[i] = best
    return out


@maybe_njit()
def body_corners(x, y, heading, wheelbase, body_length, body_width):
    """Oriented body rectangle, centered on the wheelbase midpoint.

    (x, y) is the rear-axle reference point. Corner order: front-left,
    front-right, rear-right, rear-left (clockwise).
    """
    ca = math.cos(heading)
    sa = math.sin(heading)
    cx = x + 0.5 * wheelbase * ca
    cy = y + 0.5 * wheelbase * sa
    hl = 0.5 * body_length
    hw = 0.5 * body_width
    out = np.empty((4, 2), np.float64)
    out[0, 0] = cx + hl * ca - hw * sa
    out[0, 1] = cy + hl * sa + hw * ca
    out[1, 0] = cx + hl * ca + hw * sa
    out[1, 1] = cy + hl * sa - hw * ca
    out[2, 0] = cx - hl * ca + hw * sa
    out[2, 1] = cy - hl * sa - hw * ca
    out[3, 0] = cx - hl * ca - hw * sa
    out[3, 1] = cy - hl * sa + hw * ca
    return out


@maybe_njit()
def sensor_origin(x, y, heading, wheelbase, body_length):
    # midpoint of the front body edge
    off = 0.5 * wheelbase + 0.5 * body_length
    return x + off * math.cos(heading), y + off * math.sin(heading)


@maybe_njit()
def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@maybe_njit()
def _within_bbox(ax, ay, bx, by, px, py):
    return (min(ax, bx) <= px <= max(ax, bx)) and (min(ay, by) <= py <= max(ay, by))


@maybe_njit()
def segments_intersect(p1x, p1y, p2x, p2y, q1x, q1y, q2x, q2y):
    """Closed-set segment intersection (touching counts)."""
    d1 = _orient(q1x, q1y, q2x, q2y, p1x, p1y)
    d2 = _orient(q1x, q1y, q2x, q2y, p2x, p2y)
    d3 = _orient(p1x, p1y, p2x, p2y, q1x, q1y)
    d4 = _orient(p1x, p1y, p2x, p2y, q2x, q2y)
    if ((d1 > 0.0 and d2 < 0.0) or (d1 < 0.0 and d2 > 0.0)) and \
       ((d3 > 0.0 and d4 < 0.0) or (d3 < 0.0 and d4 > 0.0)):
        return True
    if d1 == 0.0 and _within_bbox(q1x, q1y, q2x, q2y, p1x, p1y):
        return True
    if d2 == 0.0 and _within_bbox(q1x, q1y, q2x, q2y, p2x, p2y):
        return True
    if d3 == 0.0 and _within_bbox(p1x, p1y, p2x, p2y, q1x, q1y):
        return True
    if d4 == 0.0 and _within_bbox(p1x, p1y, p2x, p2y, q2x, q2y):
        return True
    return False


@maybe_njit()
def point_in_rect(px, py, corners):
    # corners are clockwise, so interior points have non-positive cross products
    for i in range(4):
        j = (i + 1) % 4
        ax = corners[i, 0]
        ay = corners[i, 1]
        if (corners[j, 0] - ax) * (py - ay) - (corners[j, 1] - ay) * (px - ax) > 0.0:
            return False
    return True


@maybe_njit()
def rect_hits_segments(corners, segs, n_segs):
    for j in range(n_segs):
        x1 = segs[j, 0]
        y1 = segs[j, 1]
        x2 = segs[j, 2]
        y2 = segs[j, 3]
        if point_in_rect(x1, y1, corners):
            return True
        for i in range(4):
            k = (i + 1) % 4
            if segments_intersect(corners[i, 0], corners[i, 1],
                                  corners[k, 0], corners[k, 1],
                                  x1, y1, x2, y2):
                return True
    return False


@maybe_njit()
def _sat_separated(a, b):
    for i in range(4):
        j = (i + 1) % 4
        nx = -(a[j, 1] - a[i, 1])
        ny = a[j, 0] - a[i, 0]
        amin = 1e300
        amax = -1e300
        bmin = 1e300
        bmax = -1e300
        for k in range(4):
            pa = nx * a[k, 0] + ny * a[k, 1]
            pb = nx * b[k, 0] + ny * b[k, 1]
            if pa < amin:
                amin = pa
            if pa > amax:
                amax = pa
            if pb < bmin:
                bmin = pb
            if pb > bmax:
                bmax = pb
        if amax < bmin or bmax < amin:
            return True
    return False


@maybe_njit()
def rects_overlap(a, b):
    """Closed-set oriented rectangle overlap via separating axes."""
    return not (_sat_separated(a, b) or _sat_separated(b, a))


@maybe_njit()
def ego_collision(corners, wall_segs, n_walls, traffic_states, wheelbase,
                  body_length, body_width):
    if rect_hits_segments(corners, wall_segs, n_walls):
        return True
    for c in range(traffic_states.shape[0]):
        tc = body_corners(traffic_states[c, 0], traffic_states[c, 1],
                          traffic_states[c, 2], wheelbase, body_length, body_width)
        if rects_overlap(corners, tc):
            return True
    return False


@maybe_njit()
def project_station(px, py, line, cum):
    """Arc-length station of the closest point on the polyline."""
    best_d2 = 1e300
    best_s = 0.0
    for i in range(line.shape[0] - 1):
        ax = line[i, 0]
        ay = line[i, 1]
        ex = line[i + 1, 0] - ax
        ey = line[i + 1, 1] - ay
        seg2 = ex * ex + ey * ey
        if seg2 == 0.0:
            t = 0.0
        else:
            t = ((px - ax) * ex + (py - ay) * ey) / seg2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        qx = ax + t * ex
        qy = ay + t * ey
        d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy)
        if d2 < best_d2:
            best_d2 = d2
            best_s = cum[i] + t * math.sqrt(seg2)
    return best_s


@maybe_njit()
def mlp_forward_kernel(theta, sizes, x):
    """Forward pass of a tanh MLP stored as a flat parameter vector.

    Layout per layer: weight matrix (out, in) row-major, then biases.
    Hidden activations tanh, identity output.
    """
    cur = x.copy()
    off = 0
    n_layers = sizes.shape[0]
    for l in range(n_layers - 1):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        nxt = np.empty(n_out, np.float64)
        for o in range(n_out):
            acc = 0.0
            base = off + o * n_in
            for i in range(n_in):
                acc += theta[base + i] * cur[i]
            nxt[o] = acc
        off += n_in * n_out
        for o in range(n_out):
            nxt[o] += theta[off + o]
        off += n_out
        if l < n_layers - 2:
            for o in range(n_out):
                nxt[o] = math.tanh(nxt[o])
        cur = nxt
    return cur


@maybe_njit()
def decode_continuous(out0, out1, dead_zone):
    # positive steering output means a right command
    if out0 > dead_zone:
        steer = STEER_RIGHT
    elif out0 < -dead_zone:
        steer = STEER_LEFT
    else:
        steer = STEER_NONE
    if out1 > dead_zone:
        accel = ACCEL_ACCELERATE
    elif out1 < -dead_zone:
        accel = ACCEL_BRAKE
    else:
        accel = ACCEL_COAST
    return steer, accel


@maybe_njit()
def write_traffic_segments(segs, base, states, wheelbase, body_length, body_width):
    for c in range(states.shape[0]):
        corners = body_corners(states[c, 0], states[c, 1], states[c, 2],
                               wheelbase, body_length, body_width)
        for i in range(4):
            j = (i + 1) % 4
            r = base + 4 * c + i
            segs[r, 0] = corners[i, 0]
            segs[r, 1] = corners[i, 1]
            segs[r, 2] = corners[j, 0]
            segs[r, 3] = corners[j, 1]


@maybe_njit()
def traffic_advance_kernel(states, speeds, waypoints, wp_counts, wp_index,
                           wheelbase, max_steer, dt):
    """One pure-pursuit tick for every traffic car (constant speed, looping)."""
    for c in range(states.shape[0]):
        x = states[c, 0]
        y = states[c, 1]
        h = states[c, 2]
        ti = wp_index[c]
        tx = waypoints[c, ti, 0]
        ty = waypoints[c, ti, 1]
        ddx = tx - x
        ddy = ty - y
        if ddx * ddx + ddy * ddy < TRAFFIC_CAPTURE_RADIUS * TRAFFIC_CAPTURE_RADIUS:
            ti = (ti + 1) % wp_counts[c]
            wp_index[c] = ti
            tx = waypoints[c, ti, 0]
            ty = waypoints[c, ti, 1]
            ddx = tx - x
            ddy = ty - y
        alpha = normalize_heading(math.atan2(ddy, ddx) - h)
        delta = math.atan2(2.0 * wheelbase * math.sin(alpha), TRAFFIC_LOOKAHEAD)
        if delta > max_steer:
            delta = max_steer
        elif delta < -max_steer:
            delta = -max_steer
        v = speeds[c]
        x, y, h = bicycle_step_kernel(x, y, h, v, delta, wheelbase, dt)
        states[c, 0] = x
        states[c, 1] = y
        states[c, 2] = h
        states[c, 3] = v
        states[c, 4] = delta


@maybe_njit()
def rollout_policy_episode(theta, sizes, wall_segs, centerline, cum_len,
                           start_station, finish_arc, start_pose,
                           traffic_states, traffic_speeds, traffic_wps,
                           traffic_wp_counts, traffic_wp_index,
                           vp, fov, max_range, n_rays, dt, max_ticks, record):
    """Closed-loop episode for a continuous-output policy network.

    Per tick: sense -> forward pass -> dead-zone decode -> actuate ->
    integrate -> advance traffic -> collision/finish check. Mirrors
    world.World.step exactly (same kernels, same order), so traces agree
    bit for bit with the interpreted path.

    Returns (ticks, terminal_code, progress, v_sum, trajectory) where
    trajectory rows are (x, y, heading, v, delta, steer, accel,
    progress_delta, progress) for each executed tick when record is true.
    """
    n_walls = wall_segs.shape[0]
    n_traffic = traffic_states.shape[0]
    segs = np.empty((n_walls + 4 * n_traffic, 4), np.float64)
    for i in range(n_walls):
        for j in range(4):
            segs[i, j] = wall_segs[i, j]

    x = start_pose[0]
    y = start_pose[1]
    heading = start_pose[2]
    v = start_pose[3]
    delta = start_pose[4]

    wheelbase = vp[VP_WHEELBASE]
    max_speed = vp[VP_MAX_SPEED]
    max_steer = vp[VP_MAX_STEER]
    accel_rate = vp[VP_ACCEL]
    brake_rate = vp[VP_BRAKE]
    steer_rate = vp[VP_STEER_RATE]
    body_len = vp[VP_BODY_LEN]
    body_wid = vp[VP_BODY_WID]

    n_rows = max_ticks if record else 0
    traj = np.empty((n_rows, 9), np.float64)

    obs = np.empty(n_rays + 2, np.float64)
    progress = 0.0
    v_sum = 0.0
    term = TERM_TICK_CAP
    ticks = 0

    for t in range(max_ticks):
        write_traffic_segments(segs, n_walls, traffic_states,
                               wheelbase, body_len, body_wid)
        ox, oy = sensor_origin(x, y, heading, wheelbase, body_len)
        dist = cast_rays_kernel(ox, oy, heading, fov, max_range, n_rays,
                                segs, segs.shape[0])
        for i in range(n_rays):
            obs[i] = dist[i] / max_range
        obs[n_rays] = v / max_speed
        obs[n_rays + 1] = delta / max_steer

        out = mlp_forward_kernel(theta, sizes, obs)
        if not (math.isfinite(out[0]) and math.isfinite(out[1])):
            term = TERM_NAN
            break

        steer, accel = decode_continuous(out[0], out[1], DEAD_ZONE)
        v, delta = apply_control_kernel(v, delta, steer, accel, max_speed,
                                        max_steer, accel_rate, brake_rate,
                                        steer_rate, dt)
        x, y, heading = bicycle_step_kernel(x, y, heading, v, delta, wheelbase, dt)
        traffic_advance_kernel(traffic_states, traffic_speeds, traffic_wps,
                               traffic_wp_counts, traffic_wp_index,
                               wheelbase, max_steer, dt)
        corners = body_corners(x, y, heading, wheelbase, body_len, body_wid)
        collided = ego_collision(corners, segs, n_walls, traffic_states,
                                 wheelbase, body_len, body_wid)
        station = project_station(x, y, centerline, cum_len)
        rel = station - start_station
        delta_p = rel - progress
        if rel > progress:
            progress = rel
        else:
            delta_p = 0.0
        v_sum += v
        ticks = t + 1

        if record:
            traj[t, 0] = x
            traj[t, 1] = y
            traj[t, 2] = heading
            traj[t, 3] = v
            traj[t, 4] = delta
            traj[t, 5] = steer
            traj[t, 6] = accel
            traj[t, 7] = delta_p
            traj[t, 8] = progress

        if collided:
            term = TERM_COLLISION
            break
        if progress >= finish_arc:
            term = TERM_FINISHED
            break

    return ticks, term, progress, v_sum, traj[:ticks]

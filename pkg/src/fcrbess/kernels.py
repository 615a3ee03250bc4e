"""Hot loops: BESS time stepping, FCR controller, rainflow, emergency detection.

Everything here works on plain floats and float64 arrays so it compiles
under numba.  Parameters travel as packed float64 vectors; the index
constants below define the layouts and the ``pack_*`` helpers in the
model modules build them.
"""

import math

import numpy as np

from ._jit import njit

# cell pack
CAP_AH, R0, R1, C1, ETA_C, V_CH, V_DIS, CP = range(8)
CELL_SIZE = 8

# plant pack
N_CELLS, DT, COP, T_REF, HVAC_LIMIT, HVAC_GAIN, INV_RATED = range(7)
PLANT_SIZE = 7

# market-rules pack
FCR_R, DF_MAX, DF_DEADBAND, STEPS_PER_BLOCK, LEAD_STEPS, GRANULARITY, P_RECH_MAX, P_MAX = range(8)
RULES_SIZE = 8

# controller pack
K_P, SOC_0, O_D, DB_P = range(4)

# step flags
CLIP_NONE = 0
CLIP_POWER = 1


@njit
def interp(x, xp, fp):
    """Piecewise-linear interpolation, clamped to the end values."""
    n = xp.shape[0]
    if x <= xp[0]:
        return fp[0]
    if x >= xp[n - 1]:
        return fp[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xp[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - xp[lo]) / (xp[hi] - xp[lo])
    return fp[lo] + w * (fp[hi] - fp[lo])


@njit
def fcr_power(delta_f, r, delta_f_max, deadband):
    if abs(delta_f) <= deadband:
        return 0.0
    x = delta_f / delta_f_max
    if x > 1.0:
        x = 1.0
    elif x < -1.0:
        x = -1.0
    return r * x


@njit
def recharge_setpoint(soc, k_p, soc_0, db_p, p_max, granularity, p_rech_max):
    half = 0.5 * db_p
    dev = soc - soc_0
    if dev > half:
        raw = -k_p * (dev - half)
    elif dev < -half:
        raw = -k_p * (dev + half)
    else:
        return 0.0
    p = raw * p_max
    # floor toward zero onto the granularity grid; 1e-9 absorbs representation error
    mag = math.floor(abs(p) / granularity + 1e-9) * granularity
    cap = math.floor(p_rech_max / granularity + 1e-9) * granularity
    if mag > cap:
        mag = cap
    if mag == 0.0:
        return 0.0
    return mag if p > 0.0 else -mag


@njit
def overdelivery_power(p_fcr, soc, soc_0, o_d):
    if o_d == 0.0 or p_fcr == 0.0:
        return 0.0
    dev = soc - soc_0
    if dev == 0.0:
        return 0.0
    # p_fcr carries the sign of delta_f; overdeliver only when it pushes SoC toward soc_0
    if (dev > 0.0 and p_fcr < 0.0) or (dev < 0.0 and p_fcr > 0.0):
        return o_d * p_fcr
    return 0.0


@njit
def combine_grid_power(p_fcr, p_rech, p_od, p_max):
    """Sum the three terms under |p| <= p_max; FCR keeps priority.

    Returns (p_grid, p_rech_used, p_od_used).
    """
    total = p_fcr + p_rech + p_od
    if total > p_max:
        excess = total - p_max
    elif total < -p_max:
        excess = total + p_max
    else:
        return total, p_rech, p_od
    if p_od * excess > 0.0:
        take = min(abs(p_od), abs(excess))
        take = take if excess > 0.0 else -take
        p_od -= take
        excess -= take
    if p_rech * excess > 0.0:
        take = min(abs(p_rech), abs(excess))
        take = take if excess > 0.0 else -take
        p_rech -= take
        excess -= take
    total = p_fcr + p_rech + p_od
    if total > p_max:
        total = p_max
    elif total < -p_max:
        total = -p_max
    return total, p_rech, p_od


@njit
def solve_current(v_open, r0, p_cell):
    """Root of r0*I^2 + v_open*I - p_cell = 0 with sign(I) = sign(p_cell).

    Returns nan when the discriminant is negative.
    """
    disc = v_open * v_open + 4.0 * r0 * p_cell
    if disc < 0.0:
        return np.nan
    den = v_open + math.sqrt(disc)
    if den == 0.0:
        return 0.0
    return 2.0 * p_cell / den


@njit
def rc_decay(dt, r1, c1):
    tau = r1 * c1
    if tau <= 0.0:
        return 0.0
    return math.exp(-dt / tau)


@njit
def hvac_power(temp, plant):
    p = plant[HVAC_GAIN] * (temp - plant[T_REF])
    if p < 0.0:
        return 0.0
    if p > plant[HVAC_LIMIT]:
        return plant[HVAC_LIMIT]
    return p


@njit
def bess_step(p_req, soc, vc1, temp, cell, plant, ocv_x, ocv_y, inv_x, inv_y):
    """Advance the assembled BESS by one step at requested grid power ``p_req`` (W).

    Returns (soc, vc1, temp, p_grid, p_bat, p_hvac, i_cell, v_bat, flag).
    """
    n = plant[N_CELLS]
    dt = plant[DT]
    r0 = cell[R0]
    r1 = cell[R1]
    eta_c = cell[ETA_C]
    cap_as = cell[CAP_AH] * 3600.0

    p_hvac = hvac_power(temp, plant)
    if p_req != 0.0:
        eta = interp(abs(p_req) / plant[INV_RATED], inv_x, inv_y)
    else:
        eta = 1.0
    if p_req > 0.0:
        p_bat = eta * p_req - p_hvac
    else:
        p_bat = p_req / eta - p_hvac
    p_cell = p_bat / n

    v_open = interp(soc, ocv_x, ocv_y) + vc1
    flag = CLIP_NONE
    i = solve_current(v_open, r0, p_cell)
    if np.isnan(i):
        i = -v_open / (2.0 * r0)
        flag = CLIP_POWER

    if i > 0.0 and v_open + r0 * i > cell[V_CH]:
        if r0 > 0.0:
            i = max((cell[V_CH] - v_open) / r0, 0.0)
        else:
            i = 0.0
        flag = CLIP_POWER
    elif i < 0.0 and v_open + r0 * i < cell[V_DIS]:
        if r0 > 0.0:
            i = min((cell[V_DIS] - v_open) / r0, 0.0)
        else:
            i = 0.0
        flag = CLIP_POWER

    i_hi = (1.0 - soc) * cap_as / (eta_c * dt)
    i_lo = -soc * cap_as * eta_c / dt
    if i > i_hi:
        i = i_hi
        flag = CLIP_POWER
    elif i < i_lo:
        i = i_lo
        flag = CLIP_POWER

    v_bat = v_open + r0 * i
    p_grid = p_req
    if flag != CLIP_NONE:
        p_cell = v_bat * i
        p_bat = p_cell * n
        x = p_bat + p_hvac
        p_grid = x / eta if x > 0.0 else x * eta

    if i > 0.0:
        soc_next = soc + eta_c * i * dt / cap_as
    else:
        soc_next = soc + i * dt / (eta_c * cap_as)
    if soc_next > 1.0:
        soc_next = 1.0
    elif soc_next < 0.0:
        soc_next = 0.0

    a = rc_decay(dt, r1, cell[C1])
    vc1_next = vc1 * a + (1.0 - a) * r1 * i
    temp_next = temp + ((r0 + r1) * i * i * n - plant[COP] * p_hvac) / (cell[CP] * n) * dt
    return soc_next, vc1_next, temp_next, p_grid, p_bat, p_hvac, i, v_bat, flag


@njit(nogil=True)
def simulate_trace(delta_f, ctrl, rules, cell, plant, ocv_x, ocv_y, inv_x, inv_y, soc0, vc10, temp0):
    """Run the FCR controller and BESS model over a frequency-deviation trace (Hz).

    The trace must start on a recharge-block boundary.  ``soc`` and
    ``temp`` have length n+1 (state at the start of every step plus the
    final state); the power series have length n.
    """
    n = delta_f.shape[0]
    soc = np.empty(n + 1)
    temp = np.empty(n + 1)
    p_grid = np.empty(n)
    p_rech = np.empty(n)
    p_od = np.empty(n)
    p_hvac = np.empty(n)
    i_cell = np.empty(n)
    v_bat = np.empty(n)
    flags = np.zeros(n, dtype=np.int8)

    r = rules[FCR_R]
    df_max = rules[DF_MAX]
    db = rules[DF_DEADBAND]
    spb = int(rules[STEPS_PER_BLOCK])
    lead = int(rules[LEAD_STEPS])
    gran = rules[GRANULARITY]
    p_rech_max = rules[P_RECH_MAX]
    p_max = rules[P_MAX]
    k_p = ctrl[K_P]
    soc_set = ctrl[SOC_0]
    o_d = ctrl[O_D]
    db_p = ctrl[DB_P]

    soc[0] = soc0
    temp[0] = temp0
    vc1 = vc10
    pending = recharge_setpoint(soc0, k_p, soc_set, db_p, p_max, gran, p_rech_max)
    block = pending
    for j in range(n):
        if (j + lead) % spb == 0:
            pending = recharge_setpoint(soc[j], k_p, soc_set, db_p, p_max, gran, p_rech_max)
        if j % spb == 0:
            block = pending
        pf = fcr_power(delta_f[j], r, df_max, db)
        po = overdelivery_power(pf, soc[j], soc_set, o_d)
        pg, _, po_used = combine_grid_power(pf, block, po, p_max)
        s, vc1, t, pg_done, _, ph, i, vb, fl = bess_step(
            pg, soc[j], vc1, temp[j], cell, plant, ocv_x, ocv_y, inv_x, inv_y
        )
        soc[j + 1] = s
        temp[j + 1] = t
        p_grid[j] = pg_done
        p_rech[j] = block
        p_od[j] = po_used
        p_hvac[j] = ph
        i_cell[j] = i
        v_bat[j] = vb
        flags[j] = fl
    return soc, temp, p_grid, p_rech, p_od, p_hvac, i_cell, v_bat, flags, vc1


@njit(nogil=True)
def run_power_profile(p_profile, stop_on_clip, cell, plant, ocv_x, ocv_y, inv_x, inv_y, soc0, vc10, temp0):
    """Apply a grid-power profile step by step; optionally stop after the first clipped step.

    Returns (n_done, soc[n_done+1], p_grid[n_done], v_bat[n_done], flags[n_done], vc1, temp).
    """
    n = p_profile.shape[0]
    soc = np.empty(n + 1)
    p_grid = np.empty(n)
    v_bat = np.empty(n)
    flags = np.zeros(n, dtype=np.int8)
    soc[0] = soc0
    vc1 = vc10
    temp = temp0
    done = n
    for j in range(n):
        s, vc1, temp, pg, _, _, _, vb, fl = bess_step(
            p_profile[j], soc[j], vc1, temp, cell, plant, ocv_x, ocv_y, inv_x, inv_y
        )
        soc[j + 1] = s
        p_grid[j] = pg
        v_bat[j] = vb
        flags[j] = fl
        if stop_on_clip and fl != CLIP_NONE:
            done = j + 1
            break
    return done, soc[: done + 1], p_grid[:done], v_bat[:done], flags[:done], vc1, temp


@njit
def turning_points(x):
    """Local extrema of ``x`` including both end points; plateaus collapse to one point."""
    n = x.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    out[0] = x[0]
    k = 1
    direction = 0
    for j in range(1, n):
        d = x[j] - out[k - 1]
        if d == 0.0:
            continue
        s = 1 if d > 0.0 else -1
        if k > 1 and s == direction:
            out[k - 1] = x[j]
        else:
            out[k] = x[j]
            k += 1
            direction = s
    return out[:k]


@njit
def rainflow_extrema(ext, capacity):
    """Rainflow count over a sequence of turning points.

    Returns (soc_av, dod_percent, q_cum, weight) with weight 0.5 for half
    cycles and 1.0 for full cycles, in emission order.
    """
    n = ext.shape[0]
    soc_av = np.empty(max(n, 1))
    dod = np.empty(max(n, 1))
    q = np.empty(max(n, 1))
    w = np.empty(max(n, 1))
    stack = np.empty(max(n, 1))
    top = 0
    m = 0
    q_acc = 0.0
    for j in range(n):
        stack[top] = ext[j]
        top += 1
        while top >= 3:
            d1 = abs(stack[top - 3] - stack[top - 2])
            d2 = abs(stack[top - 2] - stack[top - 1])
            if d2 < d1:
                break
            mid = 0.5 * (stack[top - 3] + stack[top - 2])
            if top == 3:
                # range touches the starting point: half cycle, drop the start
                q_acc += d1 * capacity * 0.5
                soc_av[m] = mid
                dod[m] = d1 * 100.0
                q[m] = q_acc
                w[m] = 0.5
                m += 1
                stack[0] = stack[1]
                stack[1] = stack[2]
                top = 2
            else:
                q_acc += d1 * capacity
                soc_av[m] = mid
                dod[m] = d1 * 100.0
                q[m] = q_acc
                w[m] = 1.0
                m += 1
                stack[top - 3] = stack[top - 1]
                top -= 2
    for j in range(top - 1):
        d = abs(stack[j] - stack[j + 1])
        q_acc += d * capacity * 0.5
        soc_av[m] = 0.5 * (stack[j] + stack[j + 1])
        dod[m] = d * 100.0
        q[m] = q_acc
        w[m] = 0.5
        m += 1
    return soc_av[:m], dod[:m], q[:m], w[:m]


@njit
def emergency_flags(delta_f, dt, lim_inst, lim_5, dur_5, lim_15, dur_15):
    """True where the grid is in an emergency state (run-length thresholds)."""
    n = delta_f.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    run_5 = 0
    run_15 = 0
    for j in range(n):
        a = abs(delta_f[j])
        run_5 = run_5 + 1 if a > lim_5 else 0
        run_15 = run_15 + 1 if a > lim_15 else 0
        out[j] = a > lim_inst or run_5 * dt > dur_5 or run_15 * dt > dur_15
    return out


@njit
def ou_process(noise, a, scale, x0):
    """x[t+1] = a*x[t] + scale*noise[t]."""
    n = noise.shape[0]
    out = np.empty(n)
    x = x0
    for j in range(n):
        out[j] = x
        x = a * x + scale * noise[j]
    return out

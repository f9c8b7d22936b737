"""Counter-based normal variates (Philox4x32-10).

Every draw is a pure function of ``(seed, stream, trajectory, step)``, so a
trajectory's noise does not depend on how many other trajectories exist or
on the order in which they are generated.  One Philox block yields two
uniforms, turned into two independent standard normals by Box-Muller; the
two outputs are the two noise channels of a step (state and observation).
"""

import numpy as np
from numba import njit

STREAM_TRUTH = 0
STREAM_PARTICLES = 1


@njit(cache=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    mask = np.uint64(0xFFFFFFFF)
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    w0 = np.uint64(0x9E3779B9)
    w1 = np.uint64(0xBB67AE85)
    s32 = np.uint64(32)
    for r in range(10):
        if r > 0:
            k0 = (k0 + w0) & mask
            k1 = (k1 + w1) & mask
        p0 = m0 * c0
        p1 = m1 * c2
        hi0 = p0 >> s32
        lo0 = p0 & mask
        hi1 = p1 >> s32
        lo1 = p1 & mask
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
    return c0, c1, c2, c3


def philox4x32(counter, key):
    """Raw Philox4x32-10 block for a 4-word counter and 2-word key."""
    c = [np.uint64(v) for v in counter]
    k = [np.uint64(v) for v in key]
    return tuple(int(v) for v in _philox_block(c[0], c[1], c[2], c[3], k[0], k[1]))


@njit(cache=True)
def _normals(seed, stream, traj, step, out):
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    k0 = np.uint64(seed) & mask
    k1 = (np.uint64(seed) >> s32) & mask
    st = np.uint64(stream) & mask
    for n in range(traj.shape[0]):
        stp = np.uint64(step[n])
        r0, r1, r2, r3 = _philox_block(
            stp & mask, (stp >> s32) & mask, np.uint64(traj[n]) & mask, st, k0, k1
        )
        # 53-bit uniforms; u1 in (0, 1] for the logarithm
        a = ((r0 >> np.uint64(5)) << np.uint64(26)) | (r1 >> np.uint64(6))
        b = ((r2 >> np.uint64(5)) << np.uint64(26)) | (r3 >> np.uint64(6))
        u1 = 1.0 - np.float64(a) * 1.1102230246251565e-16
        u2 = np.float64(b) * 1.1102230246251565e-16
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 6.283185307179586 * u2
        out[n, 0] = rad * np.cos(ang)
        out[n, 1] = rad * np.sin(ang)


def keyed_normals(seed, stream, traj, step):
    """Standard normals of shape ``broadcast(traj, step).shape + (2,)``.

    Channel 0 drives the state noise, channel 1 the observation noise.
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    traj, step = np.broadcast_arrays(np.asarray(traj, dtype=np.int64),
                                     np.asarray(step, dtype=np.int64))
    shape = traj.shape
    out = np.empty((traj.size, 2))
    _normals(np.uint64(seed), np.uint64(stream), traj.ravel(), step.ravel(), out)
    return out.reshape(shape + (2,))

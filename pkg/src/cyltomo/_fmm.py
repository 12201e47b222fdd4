"""Numba kernel for first-order fast marching on a uniform Cartesian grid.

Upwind Godunov discretization of |grad tau| = n with a heap-ordered narrow
band.  The heap uses lazy deletion: stale entries are skipped when popped, so
no decrease-key is needed.  States: 0 = far, 1 = trial, 2 = accepted.
"""

from __future__ import annotations

import numpy as np
from numba import njit

FAR = np.uint8(0)
TRIAL = np.uint8(1)
ACCEPTED = np.uint8(2)


@njit(cache=True, nogil=True, inline="always")
def _heap_push(keys, idxs, size, key, idx):
    i = size
    keys[i] = key
    idxs[i] = idx
    while i > 0:
        parent = (i - 1) // 2
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        idxs[parent], idxs[i] = idxs[i], idxs[parent]
        i = parent
    return size + 1


@njit(cache=True, nogil=True, inline="always")
def _heap_pop(keys, idxs, size):
    key = keys[0]
    idx = idxs[0]
    size -= 1
    keys[0] = keys[size]
    idxs[0] = idxs[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and keys[right] < keys[left]:
            child = right
        if keys[i] <= keys[child]:
            break
        keys[i], keys[child] = keys[child], keys[i]
        idxs[i], idxs[child] = idxs[child], idxs[i]
        i = child
    return key, idx, size


@njit(cache=True, nogil=True, inline="always")
def _upwind_value(tau, state, ix, iy, iz, nx, ny, nz, h, slowness):
    """Solve the Godunov upwind quadratic at one node from accepted neighbors."""
    big = 1e300
    a0 = big
    a1 = big
    a2 = big
    # axis minima over accepted neighbors
    base = (ix * ny + iy) * nz + iz
    if ix > 0 and state[base - ny * nz] == ACCEPTED:
        a0 = tau[base - ny * nz]
    if ix < nx - 1 and state[base + ny * nz] == ACCEPTED and tau[base + ny * nz] < a0:
        a0 = tau[base + ny * nz]
    if iy > 0 and state[base - nz] == ACCEPTED:
        a1 = tau[base - nz]
    if iy < ny - 1 and state[base + nz] == ACCEPTED and tau[base + nz] < a1:
        a1 = tau[base + nz]
    if iz > 0 and state[base - 1] == ACCEPTED:
        a2 = tau[base - 1]
    if iz < nz - 1 and state[base + 1] == ACCEPTED and tau[base + 1] < a2:
        a2 = tau[base + 1]

    # sort the three axis values ascending
    if a0 > a1:
        a0, a1 = a1, a0
    if a1 > a2:
        a1, a2 = a2, a1
    if a0 > a1:
        a0, a1 = a1, a0
    if a0 >= big:
        return big

    rhs = slowness * h
    # one-sided
    t = a0 + rhs
    if t <= a1:
        return t
    # two-term quadratic
    disc2 = 2.0 * rhs * rhs - (a0 - a1) * (a0 - a1)
    if disc2 > 0.0:
        t = 0.5 * (a0 + a1 + np.sqrt(disc2))
        if t <= a2:
            return t
    else:
        return t
    # three-term quadratic
    s = a0 + a1 + a2
    q = a0 * a0 + a1 * a1 + a2 * a2 - rhs * rhs
    disc3 = s * s - 3.0 * q
    if disc3 > 0.0:
        t3 = (s + np.sqrt(disc3)) / 3.0
        if t3 >= a2:
            return t3
    return t


@njit(cache=True, nogil=True)
def march(tau, state, index_field, nx, ny, nz, h, heap_keys, heap_idxs, heap_size, order):
    """Run fast marching to completion from the pre-seeded trial set.

    ``tau``/``state`` are flat arrays of length nx*ny*nz; ``index_field`` holds
    the refractive index per node; ``order`` receives the acceptance rank.
    """
    n_accepted = 0
    size = heap_size
    while size > 0:
        key, idx, size = _heap_pop(heap_keys, heap_idxs, size)
        if state[idx] == ACCEPTED:
            continue  # stale entry
        if key > tau[idx] + 1e-14 * (1.0 + key):
            continue  # superseded entry
        state[idx] = ACCEPTED
        order[idx] = n_accepted
        n_accepted += 1

        iz = idx % nz
        iy = (idx // nz) % ny
        ix = idx // (ny * nz)
        for d in range(6):
            jx, jy, jz = ix, iy, iz
            if d == 0:
                jx -= 1
            elif d == 1:
                jx += 1
            elif d == 2:
                jy -= 1
            elif d == 3:
                jy += 1
            elif d == 4:
                jz -= 1
            else:
                jz += 1
            if jx < 0 or jx >= nx or jy < 0 or jy >= ny or jz < 0 or jz >= nz:
                continue
            j = (jx * ny + jy) * nz + jz
            if state[j] == ACCEPTED:
                continue
            t = _upwind_value(tau, state, jx, jy, jz, nx, ny, nz, h, index_field[j])
            if t < tau[j]:
                tau[j] = t
                state[j] = TRIAL
                size = _heap_push(heap_keys, heap_idxs, size, t, j)
    return n_accepted


def run_fast_marching(
    index_field: np.ndarray, src: tuple[int, int, int], h: float, init_cells: int = 1
):
    """Fast marching from a point source at grid index ``src``.

    Nodes within ``init_cells`` cells of the source are seeded with exact
    distances scaled by the index value at the source; the caller guarantees
    the medium is uniform on that ball.  Seeding at least the 26-neighborhood
    removes the O(1) point-source error of the plain scheme; a ball of fixed
    physical radius also removes the residual h*log(h) term.  Returns
    ``(tau, order)`` shaped like ``index_field``.
    """
    nx, ny, nz = index_field.shape
    n_nodes = nx * ny * nz
    tau = np.full(n_nodes, np.inf)
    state = np.zeros(n_nodes, dtype=np.uint8)
    order = np.full(n_nodes, -1, dtype=np.int64)
    flat_index = np.ascontiguousarray(index_field, dtype=np.float64).ravel()

    cap = 8 * n_nodes + 32
    heap_keys = np.empty(cap)
    heap_idxs = np.empty(cap, dtype=np.int64)
    size = 0

    sx, sy, sz = src
    n_src = float(index_field[sx, sy, sz])
    k = max(1, int(init_cells))
    for dx in range(-k, k + 1):
        for dy in range(-k, k + 1):
            for dz in range(-k, k + 1):
                if dx * dx + dy * dy + dz * dz > k * k and max(abs(dx), abs(dy), abs(dz)) > 1:
                    continue  # keep the full 26-neighborhood plus the k-ball
                jx, jy, jz = sx + dx, sy + dy, sz + dz
                if not (0 <= jx < nx and 0 <= jy < ny and 0 <= jz < nz):
                    continue
                j = (jx * ny + jy) * nz + jz
                t = n_src * h * np.sqrt(float(dx * dx + dy * dy + dz * dz))
                tau[j] = t
                state[j] = TRIAL
                heap_keys[size] = t
                heap_idxs[size] = j
                size += 1
    # heapify the few seed entries
    keys0 = heap_keys[:size].copy()
    idxs0 = heap_idxs[:size].copy()
    ord_seed = np.argsort(keys0)
    heap_keys[:size] = keys0[ord_seed]
    heap_idxs[:size] = idxs0[ord_seed]

    march(tau, state, flat_index, nx, ny, nz, h, heap_keys, heap_idxs, size, order)
    return tau.reshape(index_field.shape), order.reshape(index_field.shape)

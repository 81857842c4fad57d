"""Pure-NumPy step kernel (fallback when the compiled extension is absent).

One step advances every particle from t0 to t1 with exact branch handling:
a particle whose exponential clock rings inside the step is moved to its
branch time and replaced by two children with fresh clocks, recursively,
and finally everyone diffuses to t1.  Branch times are never discretized;
only barrier interaction (handled by the caller) is step-resolved.

Draw-order contract (the compiled kernel consumes identically, which makes
the two bit-identical given one RngStream):

  1. one exponential per unset clock, in array order
  2. per cascade round: one normal per brancher, then two exponentials per
     brancher; survivors keep their relative order, children are appended
     after them in brancher order
  3. one normal per particle for the final move, in array order

The kernel consumes its input arrays (they may be mutated or dropped); the
public ``advance`` wrapper is what provides value semantics.  Two lineage
outputs accompany the new arrays: ``prev`` holds each output particle's
ancestor position at t0 (barrier corrections treat (prev, pos) as the
endpoints of one Brownian segment of duration t1 - t0) and ``src`` holds
the ancestor's index in the input arrays (used for genealogy snapshots and
for propagating coupling membership through branchings).
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError


def advance_step(pos, clock, ids, parent, t0, t1, rate, drift, diffusion,
                 next_id, cap, rng):
    """Advance the flat population arrays from t0 to t1.

    Returns (pos, clock, ids, parent, prev, src, next_id).
    """
    inv_rate = 1.0 / rate
    unset = np.isnan(clock)
    k0 = int(unset.sum())
    if k0:
        clock[unset] = t0 + inv_rate * rng.exponentials(k0)

    prev = pos.copy()
    src = np.arange(pos.shape[0], dtype=np.int64)
    stime = np.full(pos.shape[0], t0)

    while True:
        br = clock <= t1
        nb = int(br.sum())
        if nb == 0:
            break
        tb = clock[br]
        dtb = tb - stime[br]
        z = rng.normals(nb)
        born = pos[br] + (drift * dtb + np.sqrt(diffusion * dtb) * z)
        e = inv_rate * rng.exponentials(2 * nb)

        keep = ~br
        child_ids = next_id + np.arange(2 * nb, dtype=np.int64)
        next_id += 2 * nb
        parent = np.concatenate([parent[keep], np.repeat(ids[br], 2)])
        ids = np.concatenate([ids[keep], child_ids])
        pos = np.concatenate([pos[keep], np.repeat(born, 2)])
        clock = np.concatenate([clock[keep], np.repeat(tb, 2) + e])
        stime = np.concatenate([stime[keep], np.repeat(tb, 2)])
        prev = np.concatenate([prev[keep], np.repeat(prev[br], 2)])
        src = np.concatenate([src[keep], np.repeat(src[br], 2)])
        if pos.shape[0] > cap:
            raise CapacityError(
                f"population cap {cap} breached at t={t1}", time=t1)

    n = pos.shape[0]
    dtf = t1 - stime
    z = rng.normals(n)
    pos += drift * dtf + np.sqrt(diffusion * dtf) * z
    return pos, clock, ids, parent, prev, src, next_id

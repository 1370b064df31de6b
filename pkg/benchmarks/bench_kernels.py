"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends get identical inputs; the script also checks that they agree.
"""

import argparse
import time

import numpy as np

from riftlab import _pycore
from riftlab.experiments import PACKAGE_DATA
from riftlab.mdp import GridworldSpec, build_gridworld, random_mdp, random_policy
from riftlab.rng import generator

try:
    from riftlab import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases():
    grid = build_gridworld(GridworldSpec.from_file(PACKAGE_DATA / "maze.txt", slip_prob=0.1))
    rng = generator(0)
    big = random_mdp(rng, 400, 4, 0.95)
    for name, mdp in (("maze 60x4", grid), ("random 400x4", big)):
        S, A = mdp.num_states, mdp.num_actions
        pi = random_policy(rng, S, A)
        cum_pi = np.cumsum(pi, axis=1)
        cum_T = np.cumsum(mdp.transition, axis=2)
        cum_d = np.cumsum(mdp.initial)
        R = np.ascontiguousarray(mdp.transition_reward)
        phi = np.full((S, A), 0.02)
        term = mdp.terminal.astype(np.uint8)
        H = 100
        u_roll = rng.random((2000, 1 + 3 * H))
        u_occ = rng.random((2000, 1 + 2 * H))
        zero = np.zeros((S, A))
        yield (f"soft_bellman      {name}",
               lambda k: k.soft_bellman(mdp.transition, mdp.reward, zero, mdp.discount, 0.1, zero, 1e-10, 100000))
        yield (f"rollout_batch     {name}",
               lambda k: k.rollout_batch(cum_pi, cum_T, R, phi, term, cum_d, u_roll))
        yield (f"mc_occupancy      {name}",
               lambda k: k.mc_occupancy(cum_pi, cum_T, cum_d, mdp.discount, u_occ))


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray) and a.dtype.kind in "iu":
        return np.array_equal(a, b)
    return np.allclose(a, b, rtol=1e-9, atol=1e-9)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<32}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}  agree")
    for name, run in cases():
        t_py, out_py = best_of(lambda: run(_pycore), args.repeat)
        if _core is None:
            print(f"{name:<32}{t_py * 1e3:12.2f}{'-':>13}{'-':>9}")
            continue
        t_cy, out_cy = best_of(lambda: run(_core), args.repeat)
        print(f"{name:<32}{t_py * 1e3:12.2f}{t_cy * 1e3:13.2f}{t_py / t_cy:8.1f}x  {agree(out_py, out_cy)}")


if __name__ == "__main__":
    main()

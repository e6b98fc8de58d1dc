"""Compiled vs numpy kernels: wall-clock per call and agreement.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]
"""
import argparse
import json
import timeit

import numpy as np

from midigap import kernels
from midigap.manifold import ManifoldSpec
from midigap.vapor import load_chain


def _quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def cases(rng):
    a, b = _quats(rng, 20000), _quats(rng, 20000)
    v = rng.normal(scale=0.5, size=(20000, 3))
    spec = ManifoldSpec.pose().power(20)
    X = np.concatenate([np.concatenate([rng.normal(size=(100, 3)), _quats(rng, 100)], 1) for _ in range(20)], 1)
    e_idx = spec.euclid_ambient
    q_off = spec.quat_offsets
    chain = load_chain("franka7")
    Q = rng.uniform(chain.lower, chain.upper, size=(400, chain.n))
    return {
        "quat_log 20k": ("quat_log", (a, b)),
        "quat_exp 20k": ("quat_exp", (a, v)),
        "quat_angle 20k": ("quat_angle", (a, b)),
        "sq_dist_matrix 100x(pose^20)": ("sq_dist_matrix", (X, e_idx, q_off)),
        "sq_dist_to 100x100": ("sq_dist_to", (X, X, e_idx, q_off)),
        "chain_fk franka7 T=400": ("chain_fk", (chain.axes, chain.origins, chain.ee, Q)),
    }


def _close(x, y):
    if isinstance(x, tuple):
        return all(_close(a, b) for a, b in zip(x, y))
    return float(np.max(np.abs(np.asarray(x) - np.asarray(y))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    rows = []
    for label, (fn, a) in cases(rng).items():
        row = {"kernel": label}
        outs = {}
        for be in backends:
            f = getattr(kernels.get_backend(be), fn)
            outs[be] = f(*a)
            t = min(timeit.repeat(lambda: f(*a), number=1, repeat=args.repeat))
            row[f"{be}_ms"] = 1e3 * t
        if "cython" in outs:
            diff = outs["numpy"], outs["cython"]
            row["max_abs_diff"] = max(_close(x, y) for x, y in zip(*diff)) if isinstance(diff[0], tuple) \
                else _close(*diff)
            row["speedup"] = row["numpy_ms"] / row["cython_ms"]
        rows.append(row)
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  " + "  ".join(f"{b + ' ms':>11}" for b in backends)
          + ("   speedup  max|diff|" if "cython" in backends else ""))
    for r in rows:
        line = f"{r['kernel']:<{width}}  " + "  ".join(f"{r[b + '_ms']:>11.3f}" for b in backends)
        if "speedup" in r:
            line += f"  {r['speedup']:>7.1f}x  {r['max_abs_diff']:.1e}"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)
    return rows


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python CSR kernels on Cora-sized SBM graphs.

    python benchmarks/bench_kernels.py [--nodes 2708] [--features 1433] [--hops 10] [--repeat 3]

Reports the best-of-N wall time of a full diffusion for each available
backend and checks that both backends produce bit-identical output.
"""

import argparse
import time

import numpy as np

from iceberg import kernels
from iceberg.graph import generate_sbm, normalize_adjacency
from iceberg.propagation import PropagationConfig, diffuse


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        tic = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - tic)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=2708)
    parser.add_argument("--classes", type=int, default=7)
    parser.add_argument("--features", type=int, default=1433)
    parser.add_argument("--degree", type=float, default=4.0, help="expected intra-class degree")
    parser.add_argument("--hops", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    sizes = [args.nodes // args.classes] * args.classes
    sizes[0] += args.nodes - sum(sizes)
    p_in = args.degree / max(sizes)
    graph = generate_sbm(args.nodes, sizes, p_in, p_in / 20, max(args.classes, 8), 1.0, seed=0)
    x = np.random.default_rng(0).random((args.nodes, args.features))
    adj = normalize_adjacency(graph)
    config = PropagationConfig(0.1, args.hops)
    print(f"graph: {graph.num_nodes} nodes, {graph.num_edges} edges, {args.features} features, "
          f"{args.hops} hops, threads={kernels.num_threads()}")

    results = {}
    for backend in kernels.available_backends():
        seconds, out = best_of(lambda: diffuse(x, adj, config, backend=backend).matrix, args.repeat)
        results[backend] = (seconds, out)
        print(f"{backend:>7}: {seconds * 1000:9.1f} ms")
    if len(results) == 2:
        (c_time, c_out), (p_time, p_out) = results["cython"], results["python"]
        print(f"speedup: {p_time / c_time:.1f}x   bit-identical: {np.array_equal(c_out, p_out)}")
    else:
        print("compiled kernels not built; only the pure-Python backend ran")


if __name__ == "__main__":
    main()

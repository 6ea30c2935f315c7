"""Why more wires are not always better.

Exhaustively adds every combination of new links to the 5-bus ring and
tracks the best achievable robustness per link count.  The curve rises,
peaks, then falls: past a point, extra links homogenize the flow pattern
and reduce the entropy balance the metric rewards.

Run:  python demos/link_saturation_study.py
"""

from importlib import resources

from ecogrid import explore_topologies, parse_case


def main() -> None:
    text = resources.files("ecogrid.data").joinpath("case5_ring.m").read_text()
    net = parse_case(text)

    samples = explore_topologies(net, k_links=5, sample_budget=1000)
    best = {}
    for s in samples:
        if s.k_links not in best or s.r_eco > best[s.k_links].r_eco:
            best[s.k_links] = s

    print("added links | best robustness | added pairs")
    for k in sorted(best):
        s = best[k]
        pairs = ", ".join(f"{a}-{b}" for a, b in s.added_pairs) or "(base case)"
        bar = "#" * round(120 * s.r_eco)
        print(f"{k:11d} | {s.r_eco:.4f} {bar:44s} | {pairs}")

    peak = max(best.values(), key=lambda s: s.r_eco)
    print(f"\npeak at {peak.k_links} added links, not at the fully "
          f"connected {max(best)}: unnecessary links can hurt robustness")


if __name__ == "__main__":
    main()

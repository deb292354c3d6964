"""Recompute the expert-comparison table: brackets, back-solved C, feasibility and MAPE."""
from scenetext.complexity import complexity_bracket, scenario_complexity
from scenetext.metrics import mape

S = (1, 3, 4, 5)
NAMES = ("FreeDriving", "Following", "CutIn", "EmergencyAvoidance")
# d_model, d_expert, top class, top probability, ttc [s], n/n_max, m [%]
ROWS = [
    (8.7, 8.5, 3, 0.865, 1.54, 0.867, 52.1),
    (1.2, 1.3, 0, 0.802, 6.47, 0.400, 77.6),
    (3.3, 3.5, 0, 0.894, 5.31, 0.333, 65.9),
    (7.3, 7.5, 2, 0.474, 1.12, 0.750, 54.5),
]


def main():
    print(f"{'row':>3} {'bracket':>8} {'C*':>7} {'C range':>15} {'d(C*)':>7} {'d range':>15} feasible")
    for i, (d, _, top, p, ttc, ratio, m) in enumerate(ROWS, start=1):
        b = complexity_bracket(m, ratio, 1.0, ttc)
        c = d / b
        others = [S[j] for j in range(4) if j != top]
        lo, hi = S[top] * p + (1 - p) * min(others), S[top] * p + (1 - p) * max(others)
        d_lo, d_hi = scenario_complexity(lo, m, ratio, 1.0, ttc), scenario_complexity(hi, m, ratio, 1.0, ttc)
        ok = lo <= c <= hi
        print(f"{i:>3} {b:8.4f} {c:7.4f} [{lo:5.3f}, {hi:5.3f}] {scenario_complexity(c, m, ratio, 1.0, ttc):7.3f} "
              f"[{d_lo:5.2f}, {d_hi:5.2f}] {'yes' if ok else 'no'}  ({NAMES[top]} {p:.1%})")
    model = [r[0] for r in ROWS]
    expert = [r[1] for r in ROWS]
    print(f"MAPE vs expert: {mape(model, expert, 'reference'):.3f}% (expert denominator), "
          f"{mape(model, expert, 'model'):.3f}% (model denominator)")


if __name__ == "__main__":
    main()

"""Regenerate the bundled seed store.

Each entry is re-solved by shooting from published starting values and only
stored after the verification integration confirms the transfer.

    python3 tools/build_seed_store.py [OUT]
"""

import sys
from pathlib import Path

from brachistochrone.chain import ChainSpec
from brachistochrone.io import SeedStore
from brachistochrone.solver import ShootingParams, solve_shooting

# tau * J0 and lambda_{1,3}(0) .. lambda_{1,N}(0), J0 = 1
STARTS = {
    3: (2.7207, [-0.816497]),
    4: (3.85444, [-0.869945, 0.743041]),
    5: (4.98542, [-0.879405, 0.800224, -0.727694]),
    6: (6.11586, [-0.881276, 0.810655, -0.785265, 0.724395]),
    7: (7.2462, [-0.881655, 0.812732, -0.795828, 0.782011, -0.723702]),
    8: (8.37651, [-0.881733, 0.813154, -0.797934, 0.792594, -0.781325, 0.723559]),
    9: (9.50682, [-0.881749, 0.81324, -0.798363, 0.794705, -0.791911, 0.781183, -0.723529]),
    10: (10.6371, [-0.881752, 0.813258, -0.79845, 0.795135, -0.794023, 0.79177, -0.781153,
                   0.723523]),
}


def main(out):
    store = SeedStore()
    for n, (tau_j0, lam) in STARTS.items():
        guess = ShootingParams.from_normalized(tau_j0, lam)
        sol = solve_shooting(ChainSpec(n), guess, expected_tau=tau_j0)
        if not store.put(sol):
            raise SystemExit(f"N={n}: fidelity {sol.fidelity} below the store threshold")
        print(f"N={n} tau={sol.tau:.7f} fidelity={sol.fidelity:.13f}")
    store.save(out)


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src/brachistochrone/data/seeds.json"
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else default)

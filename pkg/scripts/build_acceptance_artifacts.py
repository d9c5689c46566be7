"""Build the trained desk network and the Monte Carlo reference used by the acceptance suite.

    python scripts/build_acceptance_artifacts.py [--skip-train] [--skip-mc]

Writes ``artifacts/svsdu_desk.npz`` (+ ``.meta`` and a loss history) and
``artifacts/mc_reference.npz``. Both are deterministic given the seeds.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from stickyvol.dgm import save_network
from stickyvol.pde import preset, train
from stickyvol.validation import mc_reference, validation_inputs

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--skip-train", action="store_true")
    ap.add_argument("--skip-mc", action="store_true")
    ap.add_argument("--out-dir", type=Path, default=ARTIFACTS)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    log = logging.getLogger("artifacts")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if not args.skip_train:
        cfg = preset("desk")
        net, hist = train(cfg, history_path=args.out_dir / "svsdu_desk_history.csv")
        save_network(net, args.out_dir / "svsdu_desk.npz")
        (args.out_dir / "svsdu_desk.meta").write_text(
            f"preset = desk\nseed = {cfg.seed}\ntrain_seconds = {hist.seconds!r}\n")
        log.info("trained in %.0f s", hist.seconds)
    if not args.skip_mc:
        ref = mc_reference(validation_inputs(50), n_paths=10_000, h=0.01, log=log.info)
        ref.save(args.out_dir / "mc_reference.npz")
        log.info("Monte Carlo reference in %.0f s", ref.seconds.sum())


if __name__ == "__main__":
    main()

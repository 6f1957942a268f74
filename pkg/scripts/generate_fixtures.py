"""Regenerate the bundled deterministic fixtures.

Produces the uncorrelated Poisson tag-stream pair and the coarse golden PL
maps. Outputs are committed; rerun only when the formats change.
"""

import pathlib
import subprocess
import sys

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "src" / "spinsim" / "fixtures"


def make_poisson_pair(path, rate_hz=10_000.0, duration_s=2.0, seed=20240214):
    from spinsim.photonstats import TagStream

    rng = np.random.default_rng(seed)
    streams = []
    for _ in range(2):
        n = rng.poisson(rate_hz * duration_s * 1.2)
        gaps = rng.exponential(1.0 / rate_hz, n)
        t = np.cumsum(gaps)
        streams.append(t[t < duration_s])
    ch = np.concatenate([np.zeros(len(streams[0]), dtype=np.uint8), np.ones(len(streams[1]), dtype=np.uint8)])
    ts = np.concatenate([np.round(s * 1e12).astype(np.int64) for s in streams])
    order = np.argsort(ts, kind="stable")
    TagStream(channels=ch[order], timestamps_ps=ts[order]).write_binary(path)
    print(f"wrote {path} ({len(ts)} tags)")


def make_golden_maps():
    for name in ("singlet_b", "triplet_e"):
        out = FIXTURES / "golden" / f"pl_map_{name}_21.csv"
        cmd = [
            sys.executable,
            "-m",
            "spinsim.cli",
            "pl-map",
            "--config",
            str(FIXTURES / f"{name}.json"),
            "--mode",
            "in_plane_map",
            "--b-max",
            "2.0",
            "--grid-n",
            "21",
            "--output",
            str(out),
        ]
        subprocess.run(cmd, check=True)
        (out.parent / (out.name + ".manifest.json")).unlink(missing_ok=True)
        print(f"wrote {out}")


if __name__ == "__main__":
    make_poisson_pair(FIXTURES / "poisson_pair.bin")
    make_golden_maps()

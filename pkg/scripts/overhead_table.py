"""Communication overhead in blocks of 1000 symbols versus the number of passive clients.

Defaults are the full-scale reference setting: P = 4352, K = 10, T = 98 and
60,000 MNIST inputs of 28 x 28 pixels split evenly across clients.
"""

import argparse

from hfcl import accounting as acc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--P", type=int, default=4352)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--T", type=int, default=98)
    ap.add_argument("--samples", type=int, default=60000)
    ap.add_argument("--symbols-per-sample", type=int, default=28 * 28, help="784 counts inputs only; 794 adds labels")
    args = ap.parse_args()

    total = args.samples * args.symbols_per_sample
    shard = total // args.K
    print(f"CL   {acc.to_blocks(acc.overhead_cl(total)):12.2f} blocks")
    print(f"FL   {acc.to_blocks(acc.overhead_fl(args.T, args.P, args.K)):12.2f} blocks")
    for L in range(args.K + 1):
        value = acc.overhead_hfcl(args.T, args.P, args.K, L, shard)
        print(f"HFCL L={L:<3d}{acc.to_blocks(value):12.2f} blocks")


if __name__ == "__main__":
    main()

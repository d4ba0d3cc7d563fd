#!/usr/bin/env python3
"""Regenerates data/toy/: a small synthetic paired repertoire.

Full chains are V framework + CDR3 + J framework, so every record is
internally consistent. Fixed seed; rerunning gives identical files.
"""
import argparse
import csv
import pathlib
import random

AA = "ACDEFGHIKLMNPQRSTVWY"
# Approximate UniProtKB residue composition (%), same order as AA.
BACKGROUND = [8.25, 1.37, 5.45, 6.75, 3.86, 7.07, 2.27, 5.96, 5.84, 9.66,
              2.42, 4.06, 4.70, 3.93, 5.53, 6.56, 5.34, 6.87, 1.08, 2.92]

V_BETA = ["TRBV5-1", "TRBV6-5", "TRBV7-9", "TRBV19", "TRBV20-1", "TRBV28"]
J_BETA = ["TRBJ1-1", "TRBJ1-2", "TRBJ2-1", "TRBJ2-3", "TRBJ2-7"]
V_ALPHA = ["TRAV1-2", "TRAV12-1", "TRAV12-2", "TRAV21", "TRAV26-1", "TRAV38-2"]
J_ALPHA = ["TRAJ20", "TRAJ31", "TRAJ33", "TRAJ42", "TRAJ52"]


def rand_seq(rng, n):
    return "".join(rng.choices(AA, weights=BACKGROUND, k=n))


def a2_epitope(rng):
    # HLA-A*02-style 9-mer: hydrophobic anchors at P2 and the C terminus.
    s = list(rand_seq(rng, 9))
    s[1] = rng.choice("LLLMI")
    s[8] = rng.choice("VVLI")
    return "".join(s)


def frames(rng, names, lo, hi):
    return {n: rand_seq(rng, rng.randint(lo, hi)) for n in names}


def unique(rng, make, count, taken):
    out = []
    while len(out) < count:
        s = make()
        if s not in taken:
            taken.add(s)
            out.append(s)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "toy"))
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--records", type=int, default=32)
    ap.add_argument("--corpus", type=int, default=64)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # V frames end in the conserved Cys region, J frames start after the Phe.
    vb, jb = frames(rng, V_BETA, 10, 14), frames(rng, J_BETA, 5, 7)
    va, ja = frames(rng, V_ALPHA, 10, 14), frames(rng, J_ALPHA, 5, 7)

    seen = set()
    beta = unique(rng, lambda: "CAS" + rand_seq(rng, rng.randint(6, 10)) + "F", args.corpus, seen)
    alpha = unique(rng, lambda: "CA" + rand_seq(rng, rng.randint(6, 10)) + "F", args.corpus, seen)
    epitopes = unique(rng, lambda: a2_epitope(rng), args.records, set())

    rows = []
    for i in range(args.records):
        v_b, j_b = rng.choice(V_BETA), rng.choice(J_BETA)
        v_a, j_a = rng.choice(V_ALPHA), rng.choice(J_ALPHA)
        rows.append([epitopes[i], alpha[i], beta[i], v_a, j_a, v_b, j_b,
                     va[v_a] + alpha[i] + ja[j_a], vb[v_b] + beta[i] + jb[j_b]])

    with open(out / "pairs.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epitope", "cdr3_alpha", "cdr3_beta", "v_alpha", "j_alpha",
                    "v_beta", "j_beta", "full_alpha", "full_beta"])
        w.writerows(rows)
    (out / "epitopes.txt").write_text("\n".join(epitopes) + "\n")
    (out / "cdr3_beta.txt").write_text("\n".join(beta) + "\n")
    (out / "cdr3_alpha.txt").write_text("\n".join(alpha) + "\n")


if __name__ == "__main__":
    main()

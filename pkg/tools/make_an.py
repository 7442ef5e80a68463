"""Write src/polybell/data/an.json, the two-observer all-versus-nothing expression.

Each party holds two qubits.  Alice measures one row of the square of
commuting observables

    z1      z2      z1 z2
    x2      x1      x1 x2
    z1 x2   x1 z2   y1 y2

and Bob one column.  A row (column) measurement has four outcomes, the
sign triples compatible with the row product +1 (column products +1, +1,
-1).  Setting pair (row i, column j) contributes the correlator of the
shared entry, Alice's j-th sign times Bob's i-th sign.  Local models reach
7, quantum theory 9 on two maximally entangled pairs.
"""
import itertools
import json
import pathlib

import numpy as np


def triples(product):
    return [t for t in itertools.product((1, -1), repeat=3) if np.prod(t) == product]


def main():
    rows = [triples(1)] * 3
    cols = [triples(1), triples(1), triples(-1)]
    joint = []
    for i in range(3):
        for j in range(3):
            for k, a in enumerate(rows[i]):
                for l, b in enumerate(cols[j]):
                    joint.append({"a_set": i + 1, "b_set": j + 1, "a_out": k + 1, "b_out": l + 1,
                                  "coeff": float(a[j] * b[i])})
    expr = {"name": "AN", "scenario": {"a_outcomes": [4, 4, 4], "b_outcomes": [4, 4, 4]},
            "constant": 0.0, "joint": joint, "a_marginal": [], "b_marginal": []}
    out = pathlib.Path(__file__).resolve().parents[1] / "src" / "polybell" / "data" / "an.json"
    out.write_text(json.dumps(expr, indent=1) + "\n")
    print(f"wrote {out} ({len(joint)} terms)")


if __name__ == "__main__":
    main()

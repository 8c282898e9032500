#!/usr/bin/env python3
"""Exact-rational table of predicted learning-rate exponents for the power-density model.

Usage: ``python3 scripts/rate_table.py``
"""
import math
from fractions import Fraction

from qtube.analysis import RateParams, rate_exponent


def main():
    print("q,phi,alpha,lambda_exp")
    for q in (Fraction(3, 2), Fraction(2), Fraction(3)):
        for phi in (Fraction(1, 2), Fraction(1), Fraction(2)):
            a = (q + phi + 1) / (2 * (q + phi))
            res = rate_exponent(RateParams(q=q, w=phi + 1, p=math.inf, alpha=a, eta=a,
                                           beta=Fraction(1), k=Fraction(0),
                                           xi=Fraction(1, 1000)))
            print(f"{q},{phi},{a},{res.lambda_exp}")


if __name__ == "__main__":
    main()

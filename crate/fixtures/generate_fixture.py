#!/usr/bin/env python3
"""Generate the synthetic TEDS-layout fixture used by the tests and examples.

The output is fully determined by SEED. Column codes follow the public TEDS-D
codebook so the shipped config's dichotomization maps apply unchanged.
Completion probability carries a planted GENDER x AGE interaction so the
chi-squared reweighting stage has a known significant tuple to find.

    python3 fixtures/generate_fixture.py > fixtures/teds_synthetic.csv
"""
import csv
import random
import sys

SEED = 20240611
ROWS = 200
COLUMNS = [
    "SERVICES", "REASON", "NOPRIOR", "GENDER", "RACE", "AGE", "ETHNIC",
    "VET", "EDUC", "MARSTAT", "EMPLOY", "PREG",
]


def pick(rng, weighted):
    values, weights = zip(*weighted)
    return rng.choices(values, weights=weights, k=1)[0]


def main():
    rng = random.Random(SEED)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(COLUMNS)
    for _ in range(ROWS):
        gender = pick(rng, [("1", 0.6), ("2", 0.4)])
        age = str(rng.randint(3, 12))
        older = int(age) >= 8
        race = pick(rng, [("5", 0.7), ("4", 0.2), ("2", 0.1)])
        ethnic = pick(rng, [("4", 0.85), ("1", 0.05), ("5", 0.1)])
        vet = pick(rng, [("2", 0.9), ("1", 0.1)])
        educ = pick(rng, [("1", 0.1), ("2", 0.2), ("3", 0.4), ("4", 0.2), ("5", 0.1)])
        marstat = pick(rng, [("1", 0.5), ("2", 0.2), ("3", 0.1), ("4", 0.2)])
        employ = pick(rng, [("1", 0.3), ("2", 0.1), ("3", 0.35), ("4", 0.25)])
        preg = "2" if gender == "1" else pick(rng, [("1", 0.1), ("2", 0.9)])
        services = pick(rng, [("4", 0.6), ("5", 0.25), ("7", 0.15)])
        noprior = pick(rng, [("0", 0.55), ("1", 0.3), ("2", 0.1), ("3", 0.05)])

        # planted interaction: older women and younger men complete far more often
        if (gender == "2") == older:
            p_complete = 0.75
        else:
            p_complete = 0.2
        if services == "4":
            p_complete += 0.1
        reason = "1" if rng.random() < p_complete else pick(rng, [("2", 0.5), ("3", 0.3), ("5", 0.2)])

        row = [services, reason, noprior, gender, race, age, ethnic, vet, educ, marstat, employ, preg]
        # sprinkle missing cells in non-target columns
        for idx in (4, 7, 8, 10):
            if rng.random() < 0.03:
                row[idx] = ""
        out.writerow(row)


if __name__ == "__main__":
    main()

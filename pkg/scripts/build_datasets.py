"""Rebuild the bundled CSVs under data/ from the ``responsibly`` wheel.

The wheel ships the UCI Statlog German Credit file and ProPublica's
two-year COMPAS extract; this script only renames columns and drops rows
that lack a jail record or charge description (COMPAS).

    pip download --no-deps responsibly==0.1.2 -d /tmp/wheels
    python scripts/build_datasets.py /tmp/wheels/responsibly-0.1.2-py3-none-any.whl
"""
import io
import sys
import zipfile
from pathlib import Path

import pandas as pd

GERMAN_COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment_since", "installment_rate", "personal_status",
    "other_debtors", "residence_since", "property", "age",
    "installment_plans", "housing", "existing_credits", "job",
    "people_liable", "telephone", "foreign_worker", "credit",
]

COMPAS_COLUMNS = [
    "sex", "age", "race", "juv_fel_count", "priors_count",
    "c_charge_degree", "c_charge_desc", "two_year_recid",
]


def main(wheel: str, out: Path) -> None:
    z = zipfile.ZipFile(wheel)
    raw = z.read("responsibly/dataset/german/german.data").decode()
    german = pd.read_csv(io.StringIO(raw), sep=" ", names=GERMAN_COLUMNS, index_col=False)
    # 1 = good, 2 = bad in the source file
    german["credit"] = (german["credit"] == 1).astype(int)
    german.to_csv(out / "german_credit.csv", index=False)

    raw = z.read("responsibly/dataset/compas/compas-scores-two-years.csv").decode()
    compas = pd.read_csv(io.StringIO(raw))
    compas = compas[compas["c_jail_in"].notna() & compas["c_charge_desc"].notna()]
    compas[COMPAS_COLUMNS].to_csv(out / "compas.csv", index=False)
    print(f"german: {len(german)} rows, compas: {len(compas)} rows")


if __name__ == "__main__":
    main(sys.argv[1], Path(__file__).resolve().parent.parent / "data")

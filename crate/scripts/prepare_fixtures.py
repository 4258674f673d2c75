#!/usr/bin/env python3
"""Freeze the five survival fixtures under data/.

Source tables come from the `rdatasets` wheel (a snapshot of the R
`survival` package data). Each fixture is a CSV with one column per
covariate plus `time` and `status`, and a JSON sidecar describing the
covariates. Categorical covariates are stored as 0-based level codes.

    pip install rdatasets
    python3 scripts/prepare_fixtures.py
"""
import json
import pathlib

import pandas as pd
import rdatasets

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"


def cont(name):
    return {"name": name, "kind": "continuous"}


def binary(name, labels=None):
    spec = {"name": name, "kind": "binary"}
    if labels:
        spec["labels"] = labels
    return spec


def categorical(name, labels):
    return {"name": name, "kind": "categorical", "labels": labels}


def median_impute(df):
    df = df.copy()
    for c in df.columns:
        if df[c].isna().any():
            df[c] = df[c].fillna(df[c].median())
    return df


def lung():
    d = rdatasets.data("survival", "cancer").drop(columns=["rownames", "inst"]).dropna()
    out = pd.DataFrame(
        {
            "age": d.age,
            "sex": (d.sex == 2).astype(int),
            "ph.ecog": d["ph.ecog"],
            "ph.karno": d["ph.karno"],
            "pat.karno": d["pat.karno"],
            "meal.cal": d["meal.cal"],
            "wt.loss": d["wt.loss"],
            "time": d.time,
            "status": (d.status == 2).astype(int),
        }
    )
    specs = [cont("age"), binary("sex"), cont("ph.ecog"), cont("ph.karno"),
             cont("pat.karno"), cont("meal.cal"), cont("wt.loss")]
    return out, specs


def pbc():
    d = rdatasets.data("survival", "pbc").iloc[:312]
    d = median_impute(d.drop(columns=["rownames", "id"]))
    out = pd.DataFrame(
        {
            "trt": (d.trt == 2).astype(int),
            "age": d.age,
            "sex": (d.sex == "f").astype(int),
            "ascites": d.ascites.astype(int),
            "hepato": d.hepato.astype(int),
            "spiders": d.spiders.astype(int),
            "edema": d.edema,
            "bili": d.bili,
            "chol": d.chol,
            "albumin": d.albumin,
            "copper": d.copper,
            "alk.phos": d["alk.phos"],
            "ast": d.ast,
            "trig": d.trig,
            "platelet": d.platelet,
            "protime": d.protime,
            "stage": d.stage,
            "time": d.time,
            "status": (d.status == 2).astype(int),
        }
    )
    specs = [binary("trt"), cont("age"), binary("sex"), binary("ascites"),
             binary("hepato"), binary("spiders"), cont("edema"), cont("bili"),
             cont("chol"), cont("albumin"), cont("copper"), cont("alk.phos"),
             cont("ast"), cont("trig"), cont("platelet"), cont("protime"),
             cont("stage")]
    return out, specs


def colon():
    d = rdatasets.data("survival", "colon")
    d = d[d.etype == 1].drop(columns=["rownames", "id", "study", "etype"])
    d = median_impute(d)
    rx_levels = ["Obs", "Lev", "Lev+5FU"]
    out = pd.DataFrame(
        {
            "rx": d.rx.map({l: i for i, l in enumerate(rx_levels)}),
            "sex": d.sex,
            "age": d.age,
            "obstruct": d.obstruct,
            "perfor": d.perfor,
            "adhere": d.adhere,
            "nodes": d.nodes,
            "differ": d.differ,
            "extent": d.extent,
            "surg": d.surg,
            "node4": d.node4,
            "time": d.time,
            "status": d.status,
        }
    )
    specs = [categorical("rx", rx_levels), binary("sex"), cont("age"),
             binary("obstruct"), binary("perfor"), binary("adhere"),
             cont("nodes"), cont("differ"), cont("extent"), binary("surg"),
             binary("node4")]
    return out, specs


def rotterdam():
    d = rdatasets.data("survival", "rotterdam")
    size_levels = ["<=20", "20-50", ">50"]
    out = pd.DataFrame(
        {
            "age": d.age,
            "meno": d.meno,
            "size": d["size"].map({l: i for i, l in enumerate(size_levels)}),
            "grade": d.grade,
            "nodes": d.nodes,
            "pgr": d.pgr,
            "er": d.er,
            "hormon": d.hormon,
            "chemo": d.chemo,
            "time": d.rtime,
            "status": d.recur,
        }
    )
    specs = [cont("age"), binary("meno"), categorical("size", size_levels),
             cont("grade"), cont("nodes"), cont("pgr"), cont("er"),
             binary("hormon"), binary("chemo")]
    return out, specs


def flchain():
    d = rdatasets.data("survival", "flchain").dropna(subset=["creatinine"])
    time = d.futime.astype(float)
    # three subjects have zero follow-up; half a day keeps every time positive
    # without changing the ordering against the next smallest time (1 day)
    time[time == 0] = 0.5
    out = pd.DataFrame(
        {
            "age": d.age,
            "sex": (d.sex == "M").astype(int),
            "sample.yr": d["sample.yr"],
            "kappa": d.kappa,
            "lambda": d["lambda"],
            "creatinine": d.creatinine,
            "mgus": d.mgus,
            "time": time,
            "status": d.death,
        }
    )
    specs = [cont("age"), binary("sex", ["F", "M"]), cont("sample.yr"),
             cont("kappa"), cont("lambda"), cont("creatinine"), binary("mgus")]
    return out, specs


def main():
    OUT.mkdir(exist_ok=True)
    for name, build in [("lung", lung), ("pbc", pbc), ("colon", colon),
                        ("rotterdam", rotterdam), ("flchain", flchain)]:
        df, specs = build()
        assert not df.isna().any().any(), name
        df.to_csv(OUT / f"{name}.csv", index=False)
        meta = {"name": name, "time_column": "time", "status_column": "status",
                "covariates": specs}
        (OUT / f"{name}.json").write_text(json.dumps(meta, indent=2) + "\n")
        print(name, len(df), int(df.status.sum()), len(specs))


if __name__ == "__main__":
    main()

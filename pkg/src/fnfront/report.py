"""Markdown summaries and CSV plot data from sweep / free-boundary reports."""
from __future__ import annotations

import csv
import json
import os


class ReportError(ValueError):
    pass


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _table(header, rows):
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(_fmt(c) for c in row) + " |" for row in rows]
    return "\n".join(out)


def load_reports(paths):
    """Split inputs into ``(sweeps, fb_reports, skipped)``; missing files are skipped."""
    sweeps, fbs, skipped = [], [], []
    for p in paths:
        if not os.path.exists(p):
            skipped.append(p)
            continue
        try:
            with open(p, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ReportError(f"{p}: malformed JSON ({exc.msg}, line {exc.lineno})") from None
        kind = data.get("kind")
        if kind == "sweep":
            sweeps.append((p, data))
        elif kind == "free_boundary":
            fbs.append((p, data))
        else:
            raise ReportError(f"{p}: not a sweep or free-boundary report")
    return sweeps, fbs, skipped


def sweep_tables(data) -> list:
    reg = data["regularity"]
    per = reg["per_eps"]
    ups = reg["upsilon_hat"]
    out = []
    out.append(("Uniform bound", _table(
        ["eps", "min u", "sup u", "upsilon_hat"],
        [[p["eps"], p["min"], p["sup_norm"], ups] for p in per])))
    rows, prev = [], None
    for p in per:
        ratio = None if prev in (None, 0) else p["lip_space"] / prev
        rows.append([p["eps"], p["lip_space"], ratio, p["hoelder_time"]["C_hat"],
                     p["hoelder_time"]["exponent"]])
        prev = p["lip_space"]
    out.append(("Uniform Lipschitz bound", _table(
        ["eps", "lip_space", "ratio to previous", "time C_hat", "time exponent"], rows)))
    lim = reg["limit"]
    rows = [["Cauchy " + "/".join(_fmt(e) for e in c["eps_pair"]), c["sup_diff"], "decreasing"]
            for c in reg["cauchy_residuals"]]
    rows.append(["time monotonicity defect", lim["time_monotonicity_defect"], "<= 10 outer_tol"])
    rows.append(["PDE residual on {u > 2 eps_min}", lim["pde_residual_positive_set"],
                 lim.get("pde_residual_tolerance")])
    out.append(("Limit properties", _table(["quantity", "measured", "expected"], rows)))
    return out


def fb_tables(data) -> list:
    out = []
    mu = data["mu0"]
    rows = []
    for s in data["slices"]:
        nd = s.get("nondegeneracy")
        if nd:
            rows.append([s["t0"], nd["min_ratio"], mu, nd["median_exponent"], nd["skipped"]])
    out.append(("Non-degeneracy", _table(
        ["t0", "min ratio", "mu0", "median exponent", "skipped points"], rows)))
    g = data.get("growth", {})
    out.append(("Quadratic growth", _table(
        ["C0_hat (normalised)", "C0_hat (raw)", "kappa", "exponent", "sub-quadratic"],
        [[g.get("C0_hat"), g.get("C0_hat_raw"), data["kappa"], g.get("exponent"),
          g.get("subquadratic")]])))
    rows = []
    for s in data["slices"]:
        po = s.get("porosity")
        if po:
            bc = s["ball_construction"]
            rows.append([s["t0"], po["delta_hat"], data["predicted_half_delta"], po["failures"],
                         f"{bc['checked'] - bc['failed']}/{bc['checked']}"])
    out.append(("Porosity", _table(
        ["t0", "delta_hat", "predicted delta/2", "zero ratios", "ball checks passed"], rows)))
    return out


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def plot_data(sweeps, fbs, out_dir) -> list:
    """Write CSV plot-data files; returns their names."""
    written = []
    if sweeps:
        rows_sup, rows_semi = [], []
        for _, d in sweeps:
            for p in d["regularity"]["per_eps"]:
                rows_sup.append([p["eps"], p["sup_norm"], p["min"]])
                rows_semi.append([p["eps"], p["lip_space"], p["hoelder_time"]["C_hat"]])
        _write_csv(os.path.join(out_dir, "sup_vs_eps.csv"), ["eps", "sup", "min"], rows_sup)
        _write_csv(os.path.join(out_dir, "seminorms_vs_eps.csv"),
                   ["eps", "lip_space", "hoelder_C"], rows_semi)
        written += ["sup_vs_eps.csv", "seminorms_vs_eps.csv"]
    if fbs:
        rows_s, rows_p = [], []
        for _, d in fbs:
            for s in d["slices"]:
                for row in s.get("doubling_chain", {}).get("rows", []):
                    rows_s.append([s["t0"], row["r"], row["sup_over_r2"] * row["r"] ** 2])
                by_r = {}
                for row in s.get("porosity", {}).get("rows", []):
                    by_r[row["r"]] = min(by_r.get(row["r"], 1.0), row["ratio"])
                rows_p += [[s["t0"], r, v] for r, v in sorted(by_r.items())]
        _write_csv(os.path.join(out_dir, "S_vs_r.csv"), ["t0", "r", "S"], rows_s)
        _write_csv(os.path.join(out_dir, "porosity_vs_r.csv"), ["t0", "r", "delta_hat"], rows_p)
        written += ["S_vs_r.csv", "porosity_vs_r.csv"]
    return written


def render(paths, out_path) -> str:
    sweeps, fbs, skipped = load_reports(paths)
    if not sweeps and not fbs:
        raise ReportError("no readable report among inputs: " + ", ".join(map(str, paths)))
    lines = ["# Audit summary", ""]
    for p, d in sweeps:
        lines += [f"Sweep report: `{os.path.basename(p)}` (config {d['meta']['config_hash'][:12]})", ""]
        for title, tab in sweep_tables(d):
            lines += [f"## {title}", "", tab, ""]
    for p, d in fbs:
        lines += [f"Free-boundary report: `{os.path.basename(p)}` (config "
                  f"{d['meta']['config_hash'][:12]})", ""]
        for title, tab in fb_tables(d):
            lines += [f"## {title}", "", tab, ""]
    out_dir = os.path.dirname(os.path.abspath(out_path))
    files = plot_data(sweeps, fbs, out_dir)
    lines += ["## Plot data", ""] + [f"- `{f}`" for f in files] + [""]
    if skipped:
        lines += ["## Skipped inputs", ""] + [f"- `{p}` (missing)" for p in skipped] + [""]
    text = "\n".join(lines)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text

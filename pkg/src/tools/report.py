"""
Markdown summary of stored runs.

The report reads only what the runs wrote (summary.json and manifest.json
in each run directory); it never recomputes an estimate.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ..utils.logger import get_logger
from ..utils.persistence import atomic_write_text, is_complete, read_json

logger = get_logger(__name__)

Row = Tuple[str, str, str]


def _fmt(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, dict) and "value" in value:
        return f"{value['value']:.6g} ± {value.get('stderr', 0.0):.2g}"
    if isinstance(value, list):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _status(flag: Optional[bool]) -> str:
    if flag is None:
        return ""
    return "pass" if flag else "FAIL"


def _diffusion_rows(summary: Dict[str, Any]) -> List[Row]:
    rows: List[Row] = []
    diff = summary.get("diffusivity")
    if diff:
        if summary.get("stationary", True):
            rows.append(("sigma^2 per coordinate", _fmt(diff["per_coordinate"]), _status(diff["lower_bound_ok"])))
        else:
            # the lower bound is a statement about the stationary process
            rows.append(("sigma^2 per coordinate (non-stationary start)", _fmt(diff["per_coordinate"]), ""))
        rows.append(("trace", _fmt(diff["trace"]), ""))
    if "lln" in summary:
        rows.append(("LLN fraction inside", _fmt(summary["lln"]["fraction_inside"]), _status(summary["lln"]["passed"])))
    if "stationarity" in summary:
        p_min = min(s["p_value"] for s in summary["stationarity"])
        rows.append(("stationarity KS min p", _fmt(p_min), _status(p_min > 0.01)))
    return rows


def _tsaw_rows(summary: Dict[str, Any]) -> List[Row]:
    rows = [("replicas / T", f"{summary['replicas']} / {summary['horizon']:g}", "")]
    rows += _diffusion_rows(summary)
    if "compensator" in summary:
        residual = max(c["max_residual"] for c in summary["compensator"])
        rows.append(("decomposition residual", _fmt(residual), _status(residual < 1e-9)))
    if "yaglom" in summary:
        rows.append(("time-reversal max |z|", _fmt(summary["yaglom"]["max_abs_z"]), ""))
    if "exponent" in summary:
        rows.append(("d=1 exponent", _fmt(summary["exponent"]["fit"]), _status(summary["exponent"]["inside"])))
    if summary.get("wrapped"):
        rows.append(("wrapped replicas", str(summary["wrapped"]), "FAIL"))
    return rows


def _srbp_rows(summary: Dict[str, Any]) -> List[Row]:
    rows = [("replicas / T / dt", f"{summary['replicas']} / {summary['horizon']:g} / {summary['dt']:g}", "")]
    rows += _diffusion_rows(summary)
    window = summary.get("variance_window")
    if window:
        rows.append(("[1, 1 + rho^2]", f"[1, {1.0 + window['rho_squared']:.6g}]", _status(window["passed"])))
    ortho = summary.get("orthogonality")
    if ortho:
        corrs = [abs(c["corr"]) for c in ortho["per_coordinate"] if c["corr"] is not None]
        if corrs:
            worst = max(corrs)
            rows.append(("max |corr(B, int phi)|", _fmt(worst), _status(worst < ortho["corr_threshold"])))
    return rows


def _spectral_rows(summary: Dict[str, Any]) -> List[Row]:
    d = summary["d"]
    rows = [
        ("C(0)", _fmt(summary["C0"]), ""),
        ("C(0) - C(e)", _fmt(summary["C0_minus_Ce"]), _status(abs(summary["C0_minus_Ce"] - 1.0 / (2 * d)) < 1e-8)),
        ("gamma kernel average", _fmt(summary["gamma_kernel_average"]),
         _status(abs(summary["gamma_kernel_average"] - 1.0 / d) < 1e-10)),
        ("gamma kernel sup", _fmt(summary["gamma_kernel_sup"]), ""),
        ("infrared integral", _fmt(summary["infrared"]["value"]), _status(summary["infrared"]["converged"])),
    ]
    if "rho_squared" in summary:
        rows.append(("rho^2", _fmt(summary["rho_squared"]), ""))
    return rows


def _fock_rows(summary: Dict[str, Any]) -> List[Row]:
    checks = summary["checks"]
    worst = max(v for k, v in checks.items() if not k.startswith("G_"))
    scan = summary["norm_scan"]["blocks"]
    rows = [
        ("structure residual (max)", _fmt(worst), _status(worst < 1e-10)),
        ("|Delta|^{-1/2} nabla sup", _fmt(summary["halfinv_nabla_sup"]),
         _status(abs(summary["halfinv_nabla_sup"] - 1.0) < 1e-10)),
    ]
    for name in ("creation", "halfinv_creation", "A_plus"):
        fit = scan.get(name, {}).get("exponent")
        if fit:
            rows.append((f"{name} growth exponent", _fmt(fit), ""))
    kv = summary.get("kv")
    if kv:
        tilde = kv["tilde_resolvent"]
        rows.append(("lam ||u||^2 decreasing", _fmt(tilde["decreasing"]), _status(tilde["decreasing"])))
        rows.append(("2(u, phi_tilde) last-step gap", _fmt(tilde["cauchy_gap"]), _status(tilde["cauchy_gap"] < 0.02)))
        if "truncation_change" in kv:
            rows.append(("truncation change", _fmt(kv["truncation_change"]), _status(not kv["truncation_sensitive"])))
        rows.append(("sigma^2 (QV + correction)", _fmt(kv["sigma2"]), ""))
        check = kv.get("crosscheck")
        if check:
            rows.append(("sigma^2 vs Monte Carlo z", _fmt(check["z"]), _status(check["consistent"])))
    return rows


def _field_rows(summary: Dict[str, Any]) -> List[Row]:
    rows = [("kind / replicas", f"{summary['kind']} / {summary['replicas']}", "")]
    if "neighbour_variance" in summary:
        rows.append(("neighbour variance", _fmt(summary["neighbour_variance"]), ""))
        rows.append(("neighbour variance (exact)", _fmt(summary["neighbour_variance_exact"]), ""))
    if "variance" in summary:
        rows.append(("variance", _fmt(summary["variance"]), ""))
        rows.append(("variance (exact)", _fmt(summary.get("variance_exact")), ""))
    if "window_covariance" in summary:
        wc = summary["window_covariance"]
        rows.append(("Gibbs vs FFT max |z|", _fmt(wc["max_abs_z"]), _status(wc["passed"])))
    return rows


ROW_BUILDERS = {
    "tsaw": _tsaw_rows,
    "srbp": _srbp_rows,
    "spectral": _spectral_rows,
    "fock": _fock_rows,
    "field": _field_rows,
}


def summary_rows(summary: Dict[str, Any]) -> List[Row]:
    """Checked rows of one run summary; unknown models give no rows."""
    builder = ROW_BUILDERS.get(summary.get("model", ""))
    rows = builder(summary) if builder else []
    for key, err in sorted(summary.get("skipped", {}).items()):
        rows.append((f"{key} (skipped)", err["message"], ""))
    return rows


def build_report(output_dir: Path) -> str:
    """Markdown report over every run directory under output_dir/runs."""
    runs_dir = Path(output_dir) / "runs"
    lines = ["# Run report", ""]
    run_dirs = sorted(p for p in runs_dir.iterdir() if p.is_dir()) if runs_dir.exists() else []
    if not run_dirs:
        lines.append("No runs found.")
        return "\n".join(lines) + "\n"

    for run_dir in run_dirs:
        summary_path = run_dir / "summary.json"
        complete = is_complete(run_dir)
        lines.append(f"## {run_dir.name}" + ("" if complete else " (incomplete)"))
        lines.append("")
        if not summary_path.exists():
            lines.append("No summary written.")
            lines.append("")
            continue
        lines.append("| quantity | value | status |")
        lines.append("|---|---|---|")
        for quantity, value, status in summary_rows(read_json(summary_path)):
            lines.append(f"| {quantity} | {value} | {status} |")
        lines.append("")
    return "\n".join(lines)


def write_report(output_dir: Path) -> Path:
    """Write output_dir/reports/report.md."""
    path = Path(output_dir) / "reports" / "report.md"
    atomic_write_text(path, build_report(output_dir))
    logger.info(f"Report written to {path}")
    return path

"""Report rendering: summary tables (CSV) and static matplotlib figures."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_report", "load_report"]


def load_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _summary_rows(report: dict) -> list[list]:
    conservation = report.get("conservation", {})
    downlink = report.get("downlink", {})
    fronthaul = report.get("fronthaul", {})
    ns = report.get("ns", {})
    rows = [
        ["scenario", report.get("scenario", "")],
        ["mode", report.get("mode", "")],
        ["seed", report.get("seed", "")],
        ["duration_s", report.get("duration_s", "")],
        ["uplinks_transmitted", conservation.get("transmitted", 0)],
        ["uplinks_delivered", conservation.get("delivered", 0)],
        ["uplinks_collided", conservation.get("collided", 0)],
        ["uplinks_below_sensitivity", conservation.get("below_sensitivity", 0)],
        ["uplinks_crc_failed", conservation.get("crc_failed", 0)],
        ["dedup_ratio", ns.get("dedup_ratio", 0.0)],
        ["downlinks_dispatched", downlink.get("dispatched", 0)],
        ["downlinks_delivered", downlink.get("delivered_to_device", 0)],
        ["fronthaul_frames", fronthaul.get("captured", 0)],
        ["audits_ok", report.get("audits", {}).get("all_ok", "")],
    ]
    return rows


def _device_rows(report: dict) -> list[list]:
    rows = []
    for addr, d in sorted(report.get("devices", {}).items()):
        rows.append(
            [
                addr,
                d["transmitted"],
                d["delivered"],
                f"{d['pdr']:.4f}",
                d["initial_sf"],
                d["final_sf"],
                d["final_power_dbm"],
                f"{d['energy_mas']:.3f}",
                f"{d['battery_pct']:.2f}",
                d["downlinks_received"],
                d["commands_applied"],
            ]
        )
    return rows


def _plot_pdr_vs_sf(report: dict, path: Path) -> None:
    by_sf = defaultdict(list)
    for d in report.get("devices", {}).values():
        by_sf[d["final_sf"]].append(d["pdr"])
    sfs = sorted(by_sf)
    means = [sum(by_sf[sf]) / len(by_sf[sf]) for sf in sfs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([str(sf) for sf in sfs], means, color="#3b6ea5")
    ax.set_xlabel("spreading factor (final)")
    ax.set_ylabel("mean packet delivery ratio")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"PDR by spreading factor — {report.get('scenario', '')}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_energy(report: dict, path: Path) -> None:
    devices = sorted(report.get("devices", {}).items())
    fig, ax = plt.subplots(figsize=(max(6, len(devices) * 0.8), 4))
    ax.bar(
        [addr for addr, _ in devices],
        [d["energy_mas"] for _, d in devices],
        color="#a4603b",
    )
    ax.set_xlabel("device")
    ax.set_ylabel("transmit charge (mA*s)")
    ax.set_title(f"Energy per device — {report.get('scenario', '')}")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_ric_timeline(report: dict, path: Path) -> None:
    commands = (report.get("ric") or {}).get("commands", [])
    fig, ax = plt.subplots(figsize=(7, 3.5))
    colors = {"ack": "#2e7d32", "fail": "#c62828", "timeout_fail": "#ef6c00"}
    for i, cmd in enumerate(commands):
        t = cmd["issued_ns"] / 1e9
        ax.scatter(t, i, color=colors.get(cmd["result"], "#616161"), s=30)
        ax.annotate(
            cmd["path"].split("/")[-1],
            (t, i),
            textcoords="offset points",
            xytext=(6, -3),
            fontsize=7,
        )
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("command #")
    ax.set_title("RIC control timeline")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report(report: dict, out_dir) -> list[Path]:
    """Write summary/device/RIC CSV tables and the three figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    summary = out / "summary.csv"
    _write_csv(summary, ["metric", "value"], _summary_rows(report))
    written.append(summary)

    devices = out / "devices.csv"
    _write_csv(
        devices,
        [
            "dev_addr",
            "transmitted",
            "delivered",
            "pdr",
            "initial_sf",
            "final_sf",
            "final_power_dbm",
            "energy_mas",
            "battery_pct",
            "downlinks_received",
            "commands_applied",
        ],
        _device_rows(report),
    )
    written.append(devices)

    ric = report.get("ric")
    if ric is not None:
        ric_csv = out / "ric_commands.csv"
        _write_csv(
            ric_csv,
            ["transaction_id", "xapp_id", "target", "path", "issued_ns",
             "applied_ns", "caused_by_ns", "result", "reason"],
            [
                [c["transaction_id"], c["xapp_id"], c["target"], c["path"],
                 c["issued_ns"], c["applied_ns"], c["caused_by_ns"],
                 c["result"], c["reason"]]
                for c in ric.get("commands", [])
            ],
        )
        written.append(ric_csv)

    if report.get("devices"):
        pdr_png = out / "pdr_vs_sf.png"
        _plot_pdr_vs_sf(report, pdr_png)
        written.append(pdr_png)

        energy_png = out / "energy_per_device.png"
        _plot_energy(report, energy_png)
        written.append(energy_png)

    if ric is not None:
        timeline_png = out / "ric_timeline.png"
        _plot_ric_timeline(report, timeline_png)
        written.append(timeline_png)
    return written

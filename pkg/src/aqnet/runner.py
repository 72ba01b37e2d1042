"""Wire a scenario into a simulated network, run it, verify it, write artifacts."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import inet
from .border_router import BorderRouter, SerialLine
from .cloud import CloudChannel, CloudIngest, OutageSchedule
from .gateway import Gateway, Journal, buffer_capacity
from .kernel import Simulator
from .lowpan import Radio
from .mesh import DropLedger
from .mote import Mote
from .rpl import RplAgent, loop_violations
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

DRAIN_STEP_MS = 1_000

SUMMARY_FILE = "summary.txt"
MOTES_FILE = "motes.csv"
LINKS_FILE = "links.csv"
SERIES_FILE = "series.csv"
RECEIPTS_FILE = "receipts.log"
JOURNAL_FILE = "journal.bin"
ACKS_FILE = "journal.acks"
FAILURES_FILE = "failures.txt"


@dataclass
class Network:
    config: ScenarioConfig
    sim: Simulator
    radio: Radio
    ledger: DropLedger
    serial: SerialLine
    border: BorderRouter
    motes: dict[int, Mote]
    cloud: CloudIngest
    channel: CloudChannel
    gateway: Gateway
    expected: dict[int, int] = field(default_factory=dict)
    convergence_at: int | None = None
    loop_problems: list[str] = field(default_factory=list)

    @property
    def agents(self) -> dict[int, RplAgent]:
        out = {self.border.node_id: self.border.rpl}
        out.update((i, m.rpl) for i, m in self.motes.items())
        return dict(sorted(out.items()))

    def close(self) -> None:
        self.gateway.journal.close()
        if self.gateway.receipt_log is not None:
            self.gateway.receipt_log.close()


@dataclass
class RunResult:
    network: Network
    summary: dict[str, object]
    mote_rows: list[dict[str, object]]
    link_rows: list[dict[str, object]]
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures


def build(config: ScenarioConfig, out_dir: str | os.PathLike | None = None,
          record_trace: bool = False) -> Network:
    sim = Simulator(seed=config.seed, record_trace=record_trace)
    radio = Radio(sim)
    for (a, b), (pab, pba) in config.radio_links().items():
        radio.add_link(a, b, pab, config.latency_ms, config.max_retx, loss_ba=pba)
    ledger = DropLedger()
    serial = SerialLine(sim, byte_error=config.serial_error)
    reachable = set(config.nodes) - set(config.unreachable())
    net_ref: list[Network] = []

    def on_rpl_change(agent: RplAgent) -> None:
        if not net_ref or net_ref[0].convergence_at is not None:
            return
        net = net_ref[0]
        agents = net.agents
        if all(agents[n].state.joined for n in reachable):
            net.convergence_at = sim.now

    border = BorderRouter(config.border_id, sim, radio, ledger, serial, on_rpl_change)
    motes = {i: Mote(i, sim, radio, ledger, period_ms=config.period_ms,
                     on_rpl_change=on_rpl_change) for i in config.mote_ids}
    cloud = CloudIngest(OutageSchedule(config.outages))
    channel = CloudChannel(sim, cloud)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in (JOURNAL_FILE, ACKS_FILE, RECEIPTS_FILE):
            (out / name).unlink(missing_ok=True)
        journal = Journal(out / JOURNAL_FILE, out / ACKS_FILE)
        receipts = open(out / RECEIPTS_FILE, "w", encoding="utf-8")
    else:
        journal, receipts = Journal(), None
    capacity = config.capacity or buffer_capacity(len(motes), config.period_ms)
    gateway = Gateway(sim, serial, channel, config.prefix, capacity, config.batch_size,
                      journal, receipts)
    net = Network(config, sim, radio, ledger, serial, border, motes, cloud, channel, gateway)
    net_ref.append(net)
    return net


def _schedule(net: Network) -> None:
    cfg, sim = net.config, net.sim
    net.border.boot()
    for m in net.motes.values():
        m.boot()
        net.expected[m.node_id] = m.start_sampling(cfg.duration_ms)
        net.cloud.register_mote(m.node_id, m.phase_ms, m.period_ms)
    sim.schedule(cfg.gateway_boot_ms, "gateway", net.gateway.boot)
    for _, end in cfg.outages:
        sim.schedule(end, "gateway", net.gateway.on_link_up)
    for t in cfg.restarts:
        sim.schedule(t, "gateway", net.gateway.restart)
    for t, a, b in cfg.severs:
        sim.schedule(t, "radio", net.radio.set_loss, a, b, 1.0)
    for t, prefix in cfg.renumbers:
        sim.schedule(t, "gateway", net.gateway.push_prefix, prefix)


def _in_flight(net: Network) -> int:
    delivered = {m: net.cloud.received_count(m) for m in net.motes}
    return sum(net.expected[m] - delivered[m] - net.ledger.total(m) for m in net.motes)


def _settled(net: Network) -> bool:
    # samples that hit an unattributable loss (corruption) can never settle by count
    unattributed = net.ledger.total(-1) + net.gateway.stats.corrupt + net.gateway.stats.malformed
    return net.gateway.idle and _in_flight(net) <= unattributed


def simulate(config: ScenarioConfig, out_dir: str | os.PathLike | None = None,
             check_loops_until: int | None = None, record_trace: bool = False) -> Network:
    """Run sampling to completion, then drain until delivery settles or the drain budget ends."""
    net = build(config, out_dir, record_trace)
    sim = net.sim
    if check_loops_until is not None:
        agents = net.agents

        def hook(ev) -> None:
            if sim.now <= check_loops_until and not net.loop_problems:
                problems = loop_violations(agents)
                if problems:
                    net.loop_problems.extend(f"t={sim.now}: {p}" for p in problems)

        sim.add_hook(hook)
    _schedule(net)
    sampling_end = max((m.phase_ms + (net.expected[i] - 1) * m.period_ms
                        for i, m in net.motes.items() if net.expected[i]), default=0)
    sim.run_until(max(sampling_end, config.duration_ms, check_loops_until or 0))
    deadline = sim.now + config.drain_ms
    while sim.now < deadline and not _settled(net):
        sim.run_until(min(sim.now + DRAIN_STEP_MS, deadline))
    return net


def collect(net: Network) -> RunResult:
    cfg, gw, cloud, br = net.config, net.gateway, net.cloud, net.border
    report = cloud.completeness_report(net.expected)
    mote_rows = []
    for mid, m in net.motes.items():
        row = report[mid]
        drops = net.ledger.for_origin(mid)
        dropped = sum(drops.values())
        mote_rows.append({
            "mote_id": mid,
            "phase_ms": m.phase_ms,
            "generated": m.stats.generated,
            "submitted": m.stats.submitted,
            "delivered": row.received,
            "missing": len(row.missing),
            "duplicates_suppressed": row.duplicates_suppressed,
            "dropped_no_route": drops.get("no_route", 0),
            "dropped_link": drops.get("link", 0),
            "dropped_other": dropped - drops.get("no_route", 0) - drops.get("link", 0),
            "in_flight": m.stats.generated - row.received - dropped,
            "joined_at_ms": "" if m.rpl.stats.joined_at is None else m.rpl.stats.joined_at,
            "rank": m.rpl.state.rank,
            "parent": "" if m.rpl.state.preferred_parent is None else m.rpl.state.preferred_parent,
        })
    link_rows = []
    for (a, b), link in sorted(net.radio.links.items()):
        st = net.radio.stats[a, b]
        link_rows.append({"src": a, "dst": b, "loss": f"{link.loss:g}", "frames": st.frames,
                          "delivered": st.delivered, "dropped": st.dropped,
                          "attempts": st.attempts, "lost_attempts": st.lost_attempts,
                          "broadcasts": st.broadcasts, "broadcasts_lost": st.broadcasts_lost})
    generated = sum(r["generated"] for r in mote_rows)
    delivered = sum(r["delivered"] for r in mote_rows)
    stored = cloud.stored_count()
    frames = sum(r["frames"] for r in link_rows)
    frames_ok = sum(r["delivered"] for r in link_rows)
    root_init = br.rpl.stats.joined_at
    acked = len(gw.journal) - gw.journal.unacked
    summary: dict[str, object] = {
        "seed": cfg.seed,
        "duration_ms": cfg.duration_ms,
        "end_time_ms": net.sim.now,
        "events_dispatched": net.sim.dispatched,
        "nodes": len(cfg.nodes),
        "motes": len(net.motes),
        "prefix": inet.format_prefix(br.prefix) if br.prefix is not None else "",
        "dodag_version": br.rpl.state.version,
        "root_init_ms": "" if root_init is None else root_init,
        "convergence_ms": ("" if net.convergence_at is None or root_init is None
                           else net.convergence_at - root_init),
        "joined_nodes": sum(1 for a in net.agents.values() if a.state.joined),
        "samples_generated": generated,
        "samples_submitted": sum(r["submitted"] for r in mote_rows),
        "samples_delivered": delivered,
        "samples_missing": sum(r["missing"] for r in mote_rows),
        "completeness": f"{(delivered / generated if generated else 1.0):.6f}",
        "stored_records": stored,
        "stored_duplicates": stored - len({(r.mote_id, r.counter) for m in cloud.motes()
                                           for r in cloud.query_series(m)}),
        "duplicates_suppressed": cloud.duplicates_suppressed,
        "dropped_no_route": sum(r["dropped_no_route"] for r in mote_rows),
        "dropped_link": sum(r["dropped_link"] for r in mote_rows),
        "dropped_other": sum(r["dropped_other"] for r in mote_rows),
        "in_flight": sum(r["in_flight"] for r in mote_rows),
        "frames": frames,
        "frames_delivered": frames_ok,
        "frame_delivery_rate": f"{(frames_ok / frames if frames else 1.0):.6f}",
        "br_received": br.stats.received,
        "br_forwarded": br.stats.forwarded,
        "br_dropped_overflow": br.stats.dropped_overflow,
        "br_dropped_misroute": br.stats.dropped_misroute,
        "serial_malformed": gw.decoder.malformed + br.decoder.malformed,
        "gateway_received": gw.stats.received,
        "gateway_malformed": gw.stats.malformed,
        "gateway_corrupt": gw.stats.corrupt,
        "gateway_other_dst": gw.stats.other_port,
        "buffer_capacity": gw.buffer.capacity,
        "buffer_max_depth": gw.buffer.max_depth,
        "buffer_depth": len(gw.buffer),
        "shed_records": gw.stats.shed,
        "journal_entries": len(gw.journal),
        "journal_acked": acked,
        "journal_unacked": gw.journal.unacked,
        "uploads_ok": gw.stats.uploads_ok,
        "uploads_failed": gw.stats.uploads_failed,
        "replays": gw.stats.replays,
        "replay_batches": gw.stats.replay_batches,
        "cloud_refused": cloud.refused,
        "loop_violations": len(net.loop_problems),
    }
    failures = _verify(net, summary, mote_rows)
    summary["result"] = "pass" if not failures else "fail"
    return RunResult(net, summary, mote_rows, link_rows, failures)


def _verify(net: Network, summary: dict, mote_rows: list[dict]) -> list[str]:
    gw, br = net.gateway, net.border
    failures = []
    if summary["stored_duplicates"]:
        failures.append(f"exactly-once: {summary['stored_duplicates']} duplicate rows stored")
    for row in mote_rows:
        if row["in_flight"] < 0:
            failures.append(f"conservation: mote {row['mote_id']} accounts for more samples "
                            f"than it generated")
    if gw.stats.received != summary["journal_acked"] + gw.journal.unacked + gw.stats.malformed:
        failures.append("conservation: gateway received != acked + unacked + malformed")
    if br.stats.received != (br.stats.forwarded + br.stats.dropped_overflow
                             + br.stats.dropped_misroute):
        failures.append("conservation: border router received != forwarded + dropped")
    if gw.buffer.max_depth > gw.buffer.capacity:
        failures.append("bounded buffer: depth exceeded capacity")
    if gw.stats.buffered > gw.stats.journaled:
        failures.append("durability: more records buffered than journaled")
    failures += [f"loop-freedom: {p}" for p in net.loop_problems[:5]]
    for a in net.config.assertions:
        if a.metric not in summary:
            failures.append(f"line {a.line}: unknown metric {a.metric!r}")
            continue
        try:
            actual = float(summary[a.metric])
        except (TypeError, ValueError):
            failures.append(f"line {a.line}: metric {a.metric!r} has no value")
            continue
        if not a.holds(actual):
            failures.append(f"line {a.line}: assert {a} failed (actual {summary[a.metric]})")
    return failures


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        if not rows:
            return
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_artifacts(result: RunResult, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / SUMMARY_FILE, "w", encoding="utf-8") as f:
        for key in sorted(result.summary):
            f.write(f"{key}={result.summary[key]}\n")
    _write_csv(out / MOTES_FILE, result.mote_rows)
    _write_csv(out / LINKS_FILE, result.link_rows)
    with open(out / SERIES_FILE, "w", encoding="utf-8", newline="") as f:
        result.network.cloud.export_csv(f)
    with open(out / FAILURES_FILE, "w", encoding="utf-8") as f:
        f.writelines(line + "\n" for line in result.failures)


def run(config: ScenarioConfig, out_dir: str | os.PathLike | None = None,
        check_loops_until: int | None = None) -> RunResult:
    net = simulate(config, out_dir, check_loops_until)
    try:
        result = collect(net)
        if out_dir is not None:
            write_artifacts(result, out_dir)
    finally:
        net.close()
    return result


def read_summary(out_dir: str | os.PathLike) -> dict[str, str]:
    summary = {}
    with open(Path(out_dir) / SUMMARY_FILE, encoding="utf-8") as f:
        for line in f:
            key, _, value = line.rstrip("\n").partition("=")
            summary[key] = value
    return summary


def series_csv(net: Network) -> str:
    buf = io.StringIO()
    net.cloud.export_csv(buf)
    return buf.getvalue()

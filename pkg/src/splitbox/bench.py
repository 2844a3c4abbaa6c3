"""Benchmark harness for the private firewall.

Five modes, each producing a :class:`BenchReport` of CSV rows plus the
acceptance checks evaluated over them:

* ``equivalence``: random rulesets and traces through the private pipeline,
  compared verdict for verdict with the plaintext filter and traversal.
* ``throughput``: highest sustainable rate per number of traversed rules,
  against the plaintext baseline.
* ``latency``: delay percentiles as offered load rises toward the maximum.
* ``lsweep``: throughput across blind-table lengths, with counter wraps.
* ``dummyrate``: effective throughput as the real-packet probability falls.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

from splitbox.analyzer import (
    binomial_interval,
    is_non_increasing,
    relative_spread,
    summarize_delays,
)
from splitbox.audit import ProcessorSecrets, audit_processor_view
from splitbox.checks import (
    CheckManager,
    CheckResult,
    CheckRule,
    at_least,
    at_most,
    is_true,
    within,
)
from splitbox.fabric import (
    DEFAULT_TICK_NS,
    CostModel,
    TokenBucketPacer,
    run_baseline,
)
from splitbox.firewall import (
    HEADER_BITS,
    FirewallRule,
    Trace,
    TraceSpec,
    compile_rules,
    controlled_workload,
    random_ruleset,
    reference_filter,
    reorder_rules,
    trace_for_rules,
)
from splitbox.nfmodel import Packet, PolicyTree, traverse
from splitbox.protocol import (
    DEFAULT_PROCESSORS,
    DEFAULT_TABLE_LENGTH,
    DROPPED,
    ProtocolParams,
    SetupBundle,
    Verdict,
    global_setup,
)
from splitbox.randomness import SeededRandom
from splitbox.transport import CARRIERS, RunReport, Topology, run_topology

logger = logging.getLogger(__name__)

MODES = ("equivalence", "throughput", "latency", "lsweep", "dummyrate")

DEFAULT_RULE_COUNTS = (*range(1, 61, 5), 60)
DEFAULT_LATENCY_RULES = (1, 30, 60)
DEFAULT_FIXED_RULES = (10,)
DEFAULT_TABLE_LENGTHS = (64, 1024, 65536)
DEFAULT_RHOS = (1.0, 0.75, 0.5, 0.25)
DEFAULT_LOADS = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_TRIALS = 20
DEFAULT_SEARCH_STEPS = 6
DEFAULT_BENCH_PACKETS = 2_000

MAX_RULES = 60
MIN_TRIAL_PACKETS = 100
LOSS_FRACTION = 1e-5
ACHIEVED_FRACTION = 0.98
SEARCH_LOW = 0.25
SEARCH_HIGH = 1.5
NOISE_BAND = 0.10
MIN_REDUCTION = 0.30
LATENCY_BURST = 8
WRAP_TARGET = 100
DUMMY_TOLERANCE = 0.10
VARIANTS = ("plain", "rewrite", "dummies")

BASE_COLUMNS = (
    "mode",
    "carrier",
    "t",
    "l",
    "rho",
    "rules",
    "packets",
    "delivered",
    "pps",
    "bytes_per_s",
    "mean_delay_ns",
    "p50_delay_ns",
    "p99_delay_ns",
    "loss_fraction",
    "conservation",
)
MODE_COLUMNS = {
    "equivalence": ("trial", "variant", "mismatches", "audit_findings"),
    "throughput": ("workers", "offered_pps", "plaintext_pps", "ratio"),
    "latency": ("load", "offered_pps", "max_pps"),
    "lsweep": ("wraps", "mismatches", "table_bytes", "lookup_ns"),
    "dummyrate": ("real", "dummies", "real_fraction"),
}


class EquivalenceError(AssertionError):
    """Raised when the private pipeline disagrees with the plaintext filter.

    Attributes:
        seed: Root seed of the bench run.
        trial: Index of the failing trial.
        mismatches: Number of disagreeing packets.
    """

    def __init__(self, seed: int, trial: int, mismatches: int, example: str = ""):
        self.seed = seed
        self.trial = trial
        self.mismatches = mismatches
        detail = f"; first: {example}" if example else ""
        super().__init__(
            f"{mismatches} verdict mismatch(es) in trial {trial}; "
            f"reproduce with --seed {seed}{detail}"
        )


@dataclass
class BenchConfig:
    """What to run.

    Mode-specific lists left as None take that mode's defaults.

    Attributes:
        mode: One of :data:`MODES`.
        rule_counts: Traversed-rule counts (controlled workloads).
        trace: Trace size, payload and seed for generated traces.
        rules: A fixed ruleset instead of generated ones.
        trace_file: A fixed trace instead of generated ones.
        t: Number of processors.
        table_lengths: Blind-table lengths.
        rhos: Real-packet probabilities.
        loads: Offered loads as fractions of the maximum (latency mode).
        carrier: ``inproc`` or ``udp``.
        seed: Root seed.
        trials: Equivalence trials.
        processor_workers: Workers per processor.
        search_steps: Bisection steps of the rate search.
        reorder: Reorder rules by match frequency before compiling.
        allow_weak_matches: Install matches below ``delta_min``.
        cost_model: Virtual service times of the in-process carrier.
        timing: ``model`` or ``measured``.
    """

    mode: str = "equivalence"
    rule_counts: tuple[int, ...] | None = None
    trace: TraceSpec = field(default_factory=TraceSpec)
    rules: list[FirewallRule] | None = None
    trace_file: Trace | None = None
    t: int = DEFAULT_PROCESSORS
    table_lengths: tuple[int, ...] | None = None
    rhos: tuple[float, ...] | None = None
    loads: tuple[float, ...] = DEFAULT_LOADS
    carrier: str = "inproc"
    seed: int = 0
    trials: int = DEFAULT_TRIALS
    processor_workers: int = 1
    search_steps: int = DEFAULT_SEARCH_STEPS
    reorder: bool = False
    allow_weak_matches: bool = False
    cost_model: CostModel = field(default_factory=CostModel)
    timing: str = "model"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.carrier not in CARRIERS:
            raise ValueError(f"carrier must be one of {CARRIERS}, got {self.carrier!r}")
        if self.t < 2:
            raise ValueError(f"need at least 2 processors, got t={self.t}")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        for rho in self.rhos or ():
            if not 0 < rho <= 1:
                raise ValueError(f"rho must be in (0, 1], got {rho}")
        for load in self.loads:
            if not 0 < load <= 1:
                raise ValueError(f"load must be in (0, 1], got {load}")
        for l_ in self.table_lengths or ():
            if l_ < 1:
                raise ValueError(f"table length must be >= 1, got {l_}")

    def counts(self, default: tuple[int, ...]) -> tuple[int, ...]:
        if self.rules is not None:
            return (len(self.rules),)
        return self.rule_counts or default

    @property
    def table_length(self) -> int:
        return self.table_lengths[0] if self.table_lengths else DEFAULT_TABLE_LENGTH

    @property
    def rho(self) -> float:
        return self.rhos[0] if self.rhos else 1.0


@dataclass
class BenchReport:
    """Rows and check results of one bench run.

    Attributes:
        mode: The mode that produced the report.
        columns: CSV column order, fixed per mode.
        rows: One row per configuration point.
        checks: Acceptance check results.
    """

    mode: str
    columns: tuple[str, ...]
    rows: list[dict[str, object]]
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def _columns(mode: str) -> tuple[str, ...]:
    return (*BASE_COLUMNS, *MODE_COLUMNS[mode], "stats")


def _row(mode: str, cfg: BenchConfig, bundle: SetupBundle, rules: int,
         report: RunReport, pps: float | None = None, **extra) -> dict[str, object]:
    delays = summarize_delays(report.delays_ns())
    rate = report.exit_pps if pps is None else pps
    params = bundle.params
    row: dict[str, object] = {
        "mode": mode,
        "carrier": cfg.carrier,
        "t": params.t,
        "l": params.table_length,
        "rho": float(params.rho),
        "rules": rules,
        "packets": len(report.records),
        "delivered": report.delivered,
        "pps": round(rate, 3),
        "bytes_per_s": round(rate * report.mean_packet_bytes, 3),
        "mean_delay_ns": round(delays.mean, 3),
        "p50_delay_ns": round(delays.p50, 3),
        "p99_delay_ns": round(delays.p99, 3),
        "loss_fraction": round(report.loss_fraction, 9),
        "conservation": report.conservation_ok(),
        "stats": ";".join(f"{k}={report.stats[k]}" for k in sorted(report.stats)),
    }
    row.update(extra)
    return row


def _setup(cfg: BenchConfig, psi: PolicyTree, seed: int, *, t: int | None = None,
           table_length: int | None = None, rho: float | None = None) -> SetupBundle:
    params = ProtocolParams(
        n=HEADER_BITS,
        table_length=table_length or cfg.table_length,
        t=t or cfg.t,
        rho=cfg.rho if rho is None else rho,
    )
    return global_setup(params, psi, SeededRandom(seed),
                        allow_weak_matches=cfg.allow_weak_matches)


def _run(cfg: BenchConfig, bundle: SetupBundle, packets: Sequence[Packet], *,
         pacer: TokenBucketPacer | None = None, seed: int = 0,
         capture: bool = False, workers: int | None = None,
         cost_model: CostModel | None = None) -> RunReport:
    topology = Topology.local(bundle.params.t, carrier=cfg.carrier)
    options: dict[str, object] = {"pacer": pacer, "seed": seed, "capture": capture}
    if cfg.carrier == "inproc":
        options.update(
            cost_model=cost_model or cfg.cost_model,
            timing=cfg.timing,
            processor_workers=workers or cfg.processor_workers,
        )
    return run_topology(topology, bundle, packets, **options)


def _as_verdict(packet: Packet) -> Verdict:
    return DROPPED if packet.header.value == 0 else Verdict(packet)


def _workload(cfg: BenchConfig, r: int, seed: int,
              count: int | None = None) -> tuple[list[FirewallRule], Trace]:
    spec = replace(cfg.trace, seed=seed, count=count or cfg.trace.count)
    rng = SeededRandom(seed)
    if cfg.rules is not None:
        rules = list(cfg.rules)
        trace = cfg.trace_file or trace_for_rules(rules, spec, rng)
    else:
        rules, trace = controlled_workload(r, spec, rng)
        if cfg.trace_file is not None:
            trace = cfg.trace_file
    if cfg.reorder:
        rules = reorder_rules(rules, trace)
    return rules, trace


def _sustainable(report: RunReport, offered_pps: float) -> bool:
    bound = max(1.0, LOSS_FRACTION * len(report.records))
    return report.lost < bound and report.exit_pps >= ACHIEVED_FRACTION * offered_pps


def find_max_rate(
    run_at: Callable[[TokenBucketPacer | None], RunReport],
    steps: int = DEFAULT_SEARCH_STEPS,
    tick_ns: int = DEFAULT_TICK_NS,
) -> tuple[float, RunReport]:
    """Bisect for the highest offered rate that is carried without loss.

    An unpaced run gives the saturation rate; the search then covers
    ``[0.25, 1.5]`` times that rate.

    Returns:
        The highest sustainable rate found and its run; when no probed rate
        is sustainable, the saturation rate and the unpaced run.
    """
    saturated = run_at(None)
    r_sat = saturated.exit_pps
    if r_sat <= 0:
        return 0.0, saturated
    lo, hi = SEARCH_LOW * r_sat, SEARCH_HIGH * r_sat
    best: tuple[float, RunReport] | None = None
    for _ in range(steps):
        mid = (lo + hi) / 2
        report = run_at(TokenBucketPacer(mid, tick_ns))
        if _sustainable(report, mid):
            lo, best = mid, (mid, report)
        else:
            hi = mid
    if best is None:
        report = run_at(TokenBucketPacer(lo, tick_ns))
        if _sustainable(report, lo):
            best = (lo, report)
        else:
            logger.warning("No sustainable rate in [%.0f, %.0f] pps", lo, hi)
            best = (r_sat, saturated)
    logger.info("Max sustainable rate %.0f pps (saturation %.0f pps)", best[0], r_sat)
    return best


def _baseline_rate(cfg: BenchConfig, rules: Sequence[FirewallRule],
                   trace: Trace) -> float:
    results = reference_filter(rules, trace)
    service = [cfg.cost_model.filter_cost(r.attempts) for r in results]
    sizes = [HEADER_BITS // 8 + record.payload_length for record in trace]

    def run_at(pacer: TokenBucketPacer | None) -> RunReport:
        return run_baseline(service, sizes, pacer=pacer)

    rate, _ = find_max_rate(run_at, cfg.search_steps)
    return rate


def _mismatches(rules: Sequence[FirewallRule], psi: PolicyTree, trace: Trace,
                report: RunReport) -> tuple[int, str]:
    count = 0
    example = ""
    results = reference_filter(rules, trace)
    for record, result, got in zip(trace, results, report.records, strict=True):
        expected = result.to_verdict(record)
        traversed = _as_verdict(traverse(psi, record.packet))
        if got.verdict != expected or traversed != expected:
            count += 1
            if not example:
                example = f"packet {got.trace_index} ({record.five})"
    return count, example


def run_equivalence(cfg: BenchConfig) -> BenchReport:
    """Random rulesets through the pipeline, checked against both oracles.

    Trials alternate ``t`` between ``cfg.t`` and ``cfg.t + 1`` and cycle
    through plain, rewriting and dummy-injecting variants. The first trial
    uses the largest ruleset.

    Raises:
        EquivalenceError: On the first trial with any mismatch.
    """
    mode = "equivalence"
    root = SeededRandom(cfg.seed)
    per_trial = max(MIN_TRIAL_PACKETS, cfg.trace.count // cfg.trials)
    rows = []
    findings_total = dummy_leaks = 0
    for trial in range(cfg.trials):
        rng = root.derive(trial)
        variant = VARIANTS[trial % len(VARIANTS)]
        t = cfg.t + trial % 2
        rho = 0.5 if variant == "dummies" else 1.0
        spec = replace(cfg.trace, count=per_trial, seed=cfg.seed + trial)
        if cfg.rules is not None:
            rules = list(cfg.rules)
        else:
            size = MAX_RULES if trial == 0 else rng.integers(1, MAX_RULES + 1)
            share = 0.5 if variant == "rewrite" else 0.0
            rules = random_ruleset(size, rng.derive(1), rewrite_share=share)
        trace = cfg.trace_file or trace_for_rules(rules, spec, rng.derive(2))
        psi = compile_rules(rules)
        bundle = _setup(cfg, psi, rng.integers(0, 2**31), t=t, rho=rho)
        capture = cfg.carrier == "inproc"
        report = _run(cfg, bundle, trace.packets(), seed=cfg.seed + trial,
                      capture=capture)

        mismatches, example = _mismatches(rules, psi, trace, report)
        if mismatches:
            raise EquivalenceError(cfg.seed, trial, mismatches, example)

        findings = 0
        if capture:
            secrets = ProcessorSecrets.from_setup(
                bundle, psi, [record.packet.header for record in trace]
            )
            for cfg_j in bundle.processors:
                inbound = report.captured.get(f"processor-{cfg_j.processor_id}", [])
                findings += len(audit_processor_view(cfg_j, inbound, secrets))
        findings_total += findings
        stats = report.stats
        if stats.get("client.dummies_discarded", 0) != stats.get("entry.dummies", 0):
            dummy_leaks += 1
        rows.append(
            _row(mode, cfg, bundle, len(rules), report, trial=trial, variant=variant,
                 mismatches=mismatches, audit_findings=findings)
        )
        logger.info("Equivalence trial %d (%s, t=%d, %d rules): %d packets agree",
                    trial, variant, t, len(rules), len(trace))

    values = {
        "trials": len(rows),
        "mismatches": sum(row["mismatches"] for row in rows),
        "packets": sum(row["packets"] for row in rows),
        "findings": findings_total,
        "dummy_leaks": dummy_leaks,
        "conserved": all(row["conservation"] for row in rows),
    }
    manager = CheckManager()
    manager.add_rule(CheckRule("zero mismatches", at_most("mismatches", 0),
                               "{packets} packets over {trials} trials agree"))
    manager.add_rule(CheckRule("processor blindness", at_most("findings", 0),
                               "{findings} audit finding(s)"))
    manager.add_rule(CheckRule("dummies discarded", at_most("dummy_leaks", 0),
                               "{dummy_leaks} trial(s) surfaced dummies"))
    manager.add_rule(CheckRule("conservation", is_true("conserved"),
                               "every row balances"))
    return BenchReport(mode, _columns(mode), rows, manager.evaluate(values))


def run_throughput(cfg: BenchConfig) -> BenchReport:
    """Sustainable rate per traversed-rule count, private and plaintext."""
    mode = "throughput"
    count = min(cfg.trace.count, DEFAULT_BENCH_PACKETS)
    rows = []
    counts = cfg.counts(DEFAULT_RULE_COUNTS)
    for r in counts:
        rules, trace = _workload(cfg, r, cfg.seed + r, count)
        psi = compile_rules(rules)
        bundle = _setup(cfg, psi, cfg.seed + r)
        packets = trace.packets()
        plaintext = _baseline_rate(cfg, rules, trace)
        workers = [cfg.processor_workers]
        if r == counts[-1]:
            workers.append(2 * cfg.processor_workers)
        for w in workers:
            def run_at(pacer, w=w, bundle=bundle, packets=packets):
                return _run(cfg, bundle, packets, pacer=pacer, seed=cfg.seed,
                            workers=w)

            rate, report = find_max_rate(run_at, cfg.search_steps)
            rows.append(
                _row(mode, cfg, bundle, r, report, pps=rate, workers=w,
                     offered_pps=round(rate, 3), plaintext_pps=round(plaintext, 3),
                     ratio=round(rate / plaintext, 6) if plaintext else 0.0)
            )

    base = [row for row in rows if row["workers"] == cfg.processor_workers]
    series = [row["pps"] for row in base]
    doubled = [row for row in rows if row["workers"] != cfg.processor_workers]
    values = {
        "first": series[0],
        "last": series[-1],
        "reduction": 1 - series[-1] / series[0] if series[0] else 0.0,
        "non_increasing": is_non_increasing(series, NOISE_BAND),
        "slower": all(row["pps"] < row["plaintext_pps"] for row in base),
        "parallel_gain": bool(doubled) and doubled[0]["pps"] > base[-1]["pps"],
        "conserved": all(row["conservation"] for row in rows),
    }
    manager = CheckManager()
    manager.add_rule(CheckRule("non-increasing in rules", is_true("non_increasing"),
                               "series within a 10% noise band"))
    if len(series) > 1:
        manager.add_rule(CheckRule("throughput reduction", at_least("reduction",
                                                                    MIN_REDUCTION),
                                   "{first:.0f} -> {last:.0f} pps "
                                   "({reduction:.1%} lower)"))
    manager.add_rule(CheckRule("private below plaintext", is_true("slower"),
                               "private rate below plaintext at every point"))
    manager.add_rule(CheckRule("processor parallelism", is_true("parallel_gain"),
                               "doubling workers raised throughput"))
    manager.add_rule(CheckRule("conservation", is_true("conserved"),
                               "every row balances"))
    return BenchReport(mode, _columns(mode), rows, manager.evaluate(values))


def run_latency(cfg: BenchConfig) -> BenchReport:
    """Delay percentiles at each offered load, as a fraction of the maximum.

    The pacer tick is chosen so a tick at full load releases a burst of
    :data:`LATENCY_BURST` packets.
    """
    mode = "latency"
    count = min(cfg.trace.count, DEFAULT_BENCH_PACKETS)
    rows = []
    rising: list[bool] = []
    loads = sorted(cfg.loads)
    for r in cfg.counts(DEFAULT_LATENCY_RULES):
        rules, trace = _workload(cfg, r, cfg.seed + r, count)
        psi = compile_rules(rules)
        bundle = _setup(cfg, psi, cfg.seed + r)
        packets = trace.packets()

        def run_at(pacer, bundle=bundle, packets=packets):
            return _run(cfg, bundle, packets, pacer=pacer, seed=cfg.seed)

        max_rate, _ = find_max_rate(run_at, cfg.search_steps)
        tick = DEFAULT_TICK_NS
        if max_rate:
            tick = max(1, int(LATENCY_BURST * 1e9 / max_rate))
        p50s = []
        for load in loads:
            offered = load * max_rate
            report = run_at(TokenBucketPacer(offered, tick))
            row = _row(mode, cfg, bundle, r, report, load=load,
                       offered_pps=round(offered, 3), max_pps=round(max_rate, 3))
            p50s.append(row["p50_delay_ns"])
            rows.append(row)
        rising.append(len(p50s) < 2 or p50s[-1] > p50s[0])

    values = {
        "rising": all(rising),
        "low": loads[0],
        "high": loads[-1],
        "conserved": all(row["conservation"] for row in rows),
    }
    manager = CheckManager()
    manager.add_rule(CheckRule("delay grows with load", is_true("rising"),
                               "p50 at load {high} above p50 at load {low}"))
    manager.add_rule(CheckRule("conservation", is_true("conserved"),
                               "every row balances"))
    return BenchReport(mode, _columns(mode), rows, manager.evaluate(values))


def run_lsweep(cfg: BenchConfig) -> BenchReport:
    """Throughput at a fixed rule count across blind-table lengths.

    Under model timing the per-lookup cost is measured on each length's own
    blind and match tables, so a lookup that slows with ``l`` shows up in the
    rate.
    """
    mode = "lsweep"
    lengths = cfg.table_lengths or DEFAULT_TABLE_LENGTHS
    r = cfg.counts(DEFAULT_FIXED_RULES)[0]
    rules, trace = _workload(cfg, r, cfg.seed + r)
    psi = compile_rules(rules)
    packets = trace.packets()
    rows = []
    for l_ in lengths:
        bundle = _setup(cfg, psi, cfg.seed + l_, table_length=l_)
        costs = cfg.cost_model.with_lookups(bundle, seed=cfg.seed)

        def run_at(pacer, bundle=bundle, costs=costs):
            return _run(cfg, bundle, packets, pacer=pacer, seed=cfg.seed,
                        cost_model=costs)

        rate, _ = find_max_rate(run_at, cfg.search_steps)
        soak = run_at(None)
        mismatches, _ = _mismatches(rules, psi, trace, soak)
        table_bytes = (
            bundle.entry.blinds.nbytes + bundle.processors[0].match_table.nbytes
        )
        rows.append(
            _row(mode, cfg, bundle, r, soak, pps=rate,
                 wraps=soak.stats.get("entry.wraps", 0), mismatches=mismatches,
                 table_bytes=table_bytes, lookup_ns=costs.lookup_ns)
        )

    per_l = [row["table_bytes"] / row["l"] for row in rows]
    shortest = min(rows, key=lambda row: row["l"])
    values = {
        "spread": relative_spread([row["pps"] for row in rows]),
        "mismatches": sum(row["mismatches"] for row in rows),
        "linear": relative_spread(per_l) < 0.01,
        "wraps": shortest["wraps"],
        "conserved": all(row["conservation"] for row in rows),
    }
    manager = CheckManager()
    manager.add_rule(CheckRule("l-insensitive throughput",
                               at_most("spread", NOISE_BAND),
                               "spread {spread:.1%} across l"))
    manager.add_rule(CheckRule("verdicts across wraps", at_most("mismatches", 0),
                               "{mismatches} mismatch(es), {wraps} wrap(s) at "
                               "the shortest table"))
    manager.add_rule(CheckRule("tables linear in l", is_true("linear"),
                               "table bytes per blind constant"))
    if len(packets) > WRAP_TARGET * shortest["l"]:
        manager.add_rule(CheckRule("counter wrap soak", at_least("wraps", WRAP_TARGET),
                                   "{wraps} wrap(s)"))
    manager.add_rule(CheckRule("conservation", is_true("conserved"),
                               "every row balances"))
    return BenchReport(mode, _columns(mode), rows, manager.evaluate(values))


def run_dummyrate(cfg: BenchConfig) -> BenchReport:
    """Effective throughput per real-packet probability at saturating load."""
    mode = "dummyrate"
    rhos = cfg.rhos or DEFAULT_RHOS
    r = cfg.counts(DEFAULT_FIXED_RULES)[0]
    rules, trace = _workload(cfg, r, cfg.seed + r,
                             min(cfg.trace.count, DEFAULT_BENCH_PACKETS))
    psi = compile_rules(rules)
    packets = trace.packets()
    rows = []
    in_interval = True
    for rho in rhos:
        bundle = _setup(cfg, psi, cfg.seed + r, rho=rho)
        report = _run(cfg, bundle, packets, seed=cfg.seed)
        real = report.stats.get("entry.real", 0)
        dummies = report.stats.get("entry.dummies", 0)
        emitted = real + dummies
        if rho < 1 and emitted:
            lo, hi = binomial_interval(real, emitted, 0.999)
            in_interval = in_interval and lo <= rho <= hi
        elif rho == 1:
            in_interval = in_interval and dummies == 0
        rows.append(
            _row(mode, cfg, bundle, r, report, real=real, dummies=dummies,
                 real_fraction=round(real / emitted, 6) if emitted else 0.0)
        )

    by_rho = {row["rho"]: row["pps"] for row in rows}
    values = {
        "in_interval": in_interval,
        "conserved": all(row["conservation"] for row in rows),
    }
    manager = CheckManager()
    if 1.0 in by_rho and 0.5 in by_rho:
        values["half"] = by_rho[0.5]
        values["expected"] = 0.5 * by_rho[1.0]
        manager.add_rule(CheckRule("throughput scales with rho",
                                   within("half", "expected", DUMMY_TOLERANCE),
                                   "{half:.0f} pps at rho=0.5, "
                                   "expected {expected:.0f}"))
    manager.add_rule(CheckRule("real fraction matches rho", is_true("in_interval"),
                               "real share of emissions within its interval"))
    manager.add_rule(CheckRule("conservation", is_true("conserved"),
                               "every row balances"))
    return BenchReport(mode, _columns(mode), rows, manager.evaluate(values))


RUNNERS: dict[str, Callable[[BenchConfig], BenchReport]] = {
    "equivalence": run_equivalence,
    "throughput": run_throughput,
    "latency": run_latency,
    "lsweep": run_lsweep,
    "dummyrate": run_dummyrate,
}


def run_bench(cfg: BenchConfig) -> BenchReport:
    logger.info("Running %s bench (carrier %s, seed %d)", cfg.mode, cfg.carrier,
                cfg.seed)
    return RUNNERS[cfg.mode](cfg)

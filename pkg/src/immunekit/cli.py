"""Command-line harness.

Every subcommand writes its report to stdout, either human-readable
(``--format text``) or as line-delimited ``key=value`` records
(``--format records``); diagnostics go to stderr. Option values resolve
in this order: command line, environment (``IMMUNEKIT_<COMMAND>_<OPTION>``,
e.g. ``IMMUNEKIT_RECOMMEND_TOP_K``), ``--config`` file, built-in default.
"""

import dataclasses
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import clonal, dca, io, negsel, network
from .encoding import BitString

ENV_PREFIX = "IMMUNEKIT"


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


class Report:
    """Collects typed records and renders them in the chosen format."""

    def __init__(self, fmt):
        self.fmt = fmt
        self.records = []

    def add(self, kind, /, **fields):
        self.records.append((kind, fields))

    def render(self) -> str:
        lines = []
        if self.fmt == "records":
            for kind, fields in self.records:
                parts = [f"type={kind}"] + [f"{k}={_fmt(v)}" for k, v in fields.items()]
                lines.append(" ".join(parts))
        else:
            last = None
            for kind, fields in self.records:
                if kind != last:
                    if lines:
                        lines.append("")
                    lines.append(f"[{kind}]")
                    last = kind
                lines.append("  " + "  ".join(f"{k}: {_fmt(v)}" for k, v in fields.items()))
        return "\n".join(lines) + "\n"

    def emit(self):
        click.echo(self.render(), nl=False)


def _fail(message, code=1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


format_option = click.option(
    "--format", "fmt", type=click.Choice(["text", "records"]), default="text", show_default=True,
    help="Report style; records are line-delimited key=value.")
seed_option = click.option("--seed", type=int, default=0, show_default=True, help="RNG seed.")


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

def _read_config(path):
    cfg = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise click.BadParameter(f"line {n}: expected key=value", param_hint="--config")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _defaults_for(command, cfg):
    params = {p.name: p for p in command.params}
    out = {}
    for key, value in cfg.items():
        if key not in params:
            raise click.BadParameter(f"unknown key {key!r} for {command.name}", param_hint="--config")
        out[key] = value.split(",") if params[key].multiple else value
    return out


@click.group(context_settings={"auto_envvar_prefix": ENV_PREFIX})
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="key=value file supplying option defaults for the subcommand.")
@click.version_option(package_name="artifact")
@click.pass_context
def main(ctx, config_path):
    """Artificial immune system workloads: recommendation, negative
    selection over flow logs, the Dendritic Cell Algorithm and clonal
    selection."""
    if not config_path or ctx.invoked_subcommand is None:
        return
    cfg = _read_config(config_path)
    cmd = main.get_command(ctx, ctx.invoked_subcommand)
    if isinstance(cmd, click.Group):
        ctx.default_map = {cmd.name: {name: _defaults_for(sub, cfg) for name, sub in cmd.commands.items()
                                      if set(cfg) <= {p.name for p in sub.params}}}
        if not ctx.default_map[cmd.name]:
            raise click.BadParameter(f"keys {sorted(cfg)} fit no {cmd.name} command", param_hint="--config")
    else:
        ctx.default_map = {cmd.name: _defaults_for(cmd, cfg)}


# ---------------------------------------------------------------------------
# recommend
# ---------------------------------------------------------------------------

@main.command()
@click.option("--ratings", type=click.Path(exists=True, dir_okay=False), required=True,
              help="CSV with user_id,item_id,score.")
@click.option("--user", required=True, help="Target user (the antigen).")
@click.option("--top-k", type=int, default=10, show_default=True)
@click.option("--idiotypic/--no-idiotypic", default=False, show_default=True,
              help="Enable antibody-antibody suppression.")
@click.option("--k1", type=float, default=network.NetworkParams.k1, show_default=True, help="Stimulation rate.")
@click.option("--k2", type=float, default=network.NetworkParams.k2, show_default=True, help="Suppression rate.")
@click.option("--k3", type=float, default=network.NetworkParams.k3, show_default=True, help="Death rate.")
@click.option("--antigen-concentration", type=float, default=network.NetworkParams.y, show_default=True)
@click.option("--capacity", type=int, default=network.NetworkParams.capacity, show_default=True)
@click.option("--dt", type=float, default=network.NetworkParams.dt, show_default=True)
@click.option("--floor", type=float, default=network.NetworkParams.concentration_floor, show_default=True)
@click.option("--cap", type=float, default=network.NetworkParams.saturation_cap, show_default=True)
@click.option("--initial", type=float, default=network.NetworkParams.initial_concentration, show_default=True)
@click.option("--window", type=int, default=network.NetworkParams.stabilisation_window, show_default=True)
@click.option("--penalty-cutoff", type=int, default=network.NetworkParams.penalty_cutoff, show_default=True)
@click.option("--reflect-negative/--no-reflect-negative", default=False, show_default=True,
              help="Let anti-correlated users vote with reflected scores.")
@click.option("--shuffle/--no-shuffle", default=False, show_default=True, help="Shuffle the pool with --seed.")
@seed_option
@format_option
def recommend(ratings, user, top_k, idiotypic, k1, k2, k3, antigen_concentration, capacity, dt, floor, cap,
              initial, window, penalty_cutoff, reflect_negative, shuffle, seed, fmt):
    """Recommend items for USER from an immune-network neighbourhood."""
    try:
        params = network.NetworkParams(
            k1=k1, k2=k2, k3=k3, y=antigen_concentration, capacity=capacity, dt=dt,
            concentration_floor=floor, saturation_cap=cap, initial_concentration=initial,
            stabilisation_window=window, penalty_cutoff=penalty_cutoff, reflect_negative=reflect_negative)
        if top_k < 1:
            raise ValueError("--top-k must be >= 1")
        table = io.load_ratings(ratings)
    except ValueError as exc:
        _fail(exc)
    if user not in table.profiles:
        _fail(f"user {user!r} not found in {ratings}")
    antigen = table.profiles[user]
    pool = [p for u, p in table.profiles.items() if u != user]
    if not pool:
        _fail("no other users to form a neighbourhood")
    try:
        net = network.run(antigen, pool, params, idiotypic, seed=seed, shuffle=shuffle)
    except network.NetworkExhausted as exc:
        click.echo(f"error: {exc}", err=True)
        click.echo(f"diagnostic: user={user} pool={len(pool)} iterations={exc.network.iterations} "
                   f"idiotypic={_fmt(idiotypic)}", err=True)
        sys.exit(3)

    report = Report(fmt)
    report.add("summary", user=user, idiotypic=idiotypic, iterations=net.iterations,
               stabilised=net.is_stabilised(), antibodies=len(net), diversity=net.mean_pair_affinity())
    for rank, (item, score) in enumerate(net.recommend(top_k), start=1):
        report.add("recommendation", rank=rank, item=item, score=score)
    for ab in net.antibodies:
        report.add("antibody", id=ab.id, concentration=ab.concentration, affinity=net.affinity[ab.id],
                   iterations=ab.iterations_present)
    report.emit()


# ---------------------------------------------------------------------------
# negative selection
# ---------------------------------------------------------------------------

def _write_detectors(path, header, detectors):
    rep = Report("records")
    rep.add("header", **header)
    for d in detectors:
        rep.add("detector", id=d.id, pattern=str(d.pattern), state=d.state.value, age=d.age,
                match_count=d.match_count, activation_threshold=d.activation_threshold,
                lifespan=d.lifespan if math.isfinite(d.lifespan) else "inf")
    Path(path).write_text(rep.render())


def _parse_record(line):
    fields = dict(part.split("=", 1) for part in line.split())
    return fields.pop("type"), fields


def read_detectors(path):
    """Load a detector file written by ``negsel-train``: ``(header, detectors)``."""
    header, detectors = None, []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            kind, f = _parse_record(line)
            if kind == "header":
                header = f
            elif kind == "detector":
                lifespan = math.inf if f["lifespan"] == "inf" else float(f["lifespan"])
                detectors.append(negsel.Detector(
                    id=int(f["id"]), pattern=BitString(f["pattern"]), state=negsel.State(f["state"]),
                    age=int(f["age"]), match_count=int(f["match_count"]),
                    activation_threshold=int(f["activation_threshold"]), lifespan=lifespan))
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (KeyError, ValueError) as exc:
            raise io.DataError(f"malformed detector record: {exc}", row=n) from None
    if header is None:
        raise io.DataError("detector file has no header record")
    length = int(header["length"])
    if any(len(d.pattern) != length for d in detectors):
        raise io.DataError(f"detector length differs from header length {length}")
    return header, detectors


@main.command("negsel-train")
@click.option("--flows", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Flow CSV; rows labelled self (or all rows if unlabelled) form the self set.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Detector file to write.")
@click.option("--rule", type=click.Choice([k.value for k in negsel.RuleKind]), default="r-contiguous",
              show_default=True)
@click.option("--r", "threshold", type=int, default=8, show_default=True, help="Match threshold.")
@click.option("--count", type=int, default=100, show_default=True, help="Detectors to generate.")
@click.option("--max-attempts", type=int, default=100_000, show_default=True)
@click.option("--repair/--no-repair", default=False, show_default=True,
              help="Hypermutate self-matching candidates instead of discarding them.")
@click.option("--encoding", default=io.FULL_ENCODING.describe(), show_default=True,
              help="Fields and bit widths, e.g. dst_port:10,protocol.")
@click.option("--activation-threshold", type=int, default=negsel.DEFAULT_ACTIVATION_THRESHOLD, show_default=True)
@click.option("--lifespan", type=int, default=negsel.DEFAULT_LIFESPAN, show_default=True)
@seed_option
@format_option
def negsel_train(flows, out, rule, threshold, count, max_attempts, repair, encoding, activation_threshold,
                 lifespan, seed, fmt):
    """Generate a detector set censored against self traffic."""
    try:
        enc = io.FlowEncoding.parse(encoding)
        match_rule = negsel.MatchRule(rule, threshold)
        match_rule.check_length(enc.length)
        if activation_threshold < 1 or lifespan < 1:
            raise ValueError("--activation-threshold and --lifespan must be >= 1")
        log = io.load_flows(flows)
    except ValueError as exc:
        _fail(exc)
    selfs = {str(io.serialize_flow(r, enc)) for r in log.self_records()}
    if not selfs:
        _fail("no self-labelled flows to train on")
    self_set = sorted(selfs)
    try:
        detectors = negsel.generate_detectors(
            self_set, count, match_rule, seed=seed, repair=repair, max_attempts=max_attempts,
            activation_threshold=activation_threshold, lifespan=lifespan)
    except negsel.DetectorGenerationError as exc:
        _fail(exc)
    except ValueError as exc:
        _fail(exc)
    header = dict(rule=match_rule.kind.value, r=threshold, length=enc.length, encoding=enc.describe(),
                  seed=seed, repair=repair, count=len(detectors))
    _write_detectors(out, header, detectors)
    report = Report(fmt)
    report.add("summary", detectors=len(detectors), self_size=len(self_set), length=enc.length,
               rule=match_rule.kind.value, r=threshold, seed=seed, out=out)
    report.emit()


@main.command("negsel-monitor")
@click.option("--detectors", "detector_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--flows", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--confirm", type=int, multiple=True, help="Activated detector id the operator confirms.")
@click.option("--reject", type=int, multiple=True, help="Activated detector id the operator rejects.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the updated detector set here.")
@format_option
def negsel_monitor(detector_path, flows, confirm, reject, out, fmt):
    """Replay a flow log against a detector set and report alerts."""
    try:
        header, detectors = read_detectors(detector_path)
        enc = io.FlowEncoding.parse(header["encoding"])
        rule = negsel.MatchRule(header["rule"], int(header["r"]))
        if enc.length != int(header["length"]):
            raise ValueError("detector encoding does not match its recorded length")
        log = io.load_flows(flows)
    except (KeyError, ValueError) as exc:
        _fail(exc)

    report = Report(fmt)
    alerts = 0
    for tick, rec in enumerate(log.records):
        bits = io.serialize_flow(rec, enc)
        care = io.flow_care_mask(rec, enc)
        for det_id, alerted in negsel.monitor(detectors, bits, rule, care=care):
            if alerted:
                alerts += 1
                report.add("alert", tick=tick, detector=det_id)
        detectors = negsel.age_and_expire(detectors, 1)

    by_id = {d.id: d for d in detectors}
    for ids, verdict in ((confirm, True), (reject, False)):
        for det_id in ids:
            if det_id not in by_id:
                _fail(f"detector {det_id} does not exist or has expired")
            try:
                negsel.promote(by_id[det_id], verdict)
            except ValueError as exc:
                _fail(exc)
            report.add("promotion", detector=det_id, result="memory" if verdict else "retired")
    detectors = [d for d in detectors if d.state is not negsel.State.RETIRED]

    activated = [d.id for d in detectors if d.state is negsel.State.ACTIVATED]
    report.add("summary", ticks=len(log), alerts=alerts, live_detectors=len(detectors),
               activated=activated or "none")
    if out:
        _write_detectors(out, header, detectors)
    report.emit()


# ---------------------------------------------------------------------------
# dca
# ---------------------------------------------------------------------------

def _parse_weights(text):
    rows = [r for r in text.split(";") if r.strip()]
    table = [[float(v) for v in r.split(",")] for r in rows]
    return dca._check_weights(table)


@main.command("dca")
@click.option("--signals", type=click.Path(exists=True, dir_okay=False), required=True,
              help="CSV with tick,pamp,danger,safe.")
@click.option("--antigens", type=click.Path(exists=True, dir_okay=False), required=True,
              help="CSV with tick,antigen_type.")
@click.option("--population", type=int, default=10, show_default=True)
@click.option("--threshold-lo", type=float, default=dca.DEFAULT_THRESHOLD_RANGE[0], show_default=True)
@click.option("--threshold-hi", type=float, default=dca.DEFAULT_THRESHOLD_RANGE[1], show_default=True)
@click.option("--cutoff", type=float, default=0.5, show_default=True,
              help="Anomalous iff the mature fraction exceeds this.")
@click.option("--weights", default="2,1,2;0,0,3;2,1,-3", show_default=True,
              help="csm;semi;mat rows over pamp,danger,safe.")
@click.option("--sampling", type=click.Choice(["round-robin", "random"]), default="round-robin",
              show_default=True)
@seed_option
@format_option
def dca_cmd(signals, antigens, population, threshold_lo, threshold_hi, cutoff, weights, sampling, seed, fmt):
    """Classify antigen types with the Dendritic Cell Algorithm."""
    try:
        w = _parse_weights(weights)
        sig = io.load_signals(signals)
        ags = io.load_antigens(antigens)
        results = dca.run_stream(sig, ags, population, (threshold_lo, threshold_hi), w, cutoff, seed=seed,
                                 sampling=sampling)
    except ValueError as exc:
        _fail(exc)
    report = Report(fmt)
    for v in results:
        report.add("verdict", antigen=v.antigen_type, mature=v.presentations_mature,
                   total=v.presentations_total, score=v.anomaly_score, classification=v.classification)
    report.add("summary", frames=len(sig), events=len(ags), antigen_types=len(results),
               anomalous=sum(v.classification == "anomalous" for v in results), cutoff=cutoff)
    report.emit()


# ---------------------------------------------------------------------------
# clonal
# ---------------------------------------------------------------------------

@main.command("clonal")
@click.option("--target", required=True, help="Antigen bit string, e.g. 1011001110.")
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--population", type=int, default=clonal.ClonalConfig.population_size, show_default=True)
@click.option("--clone-factor", type=float, default=clonal.ClonalConfig.clone_factor, show_default=True)
@click.option("--max-clones", type=int, default=clonal.ClonalConfig.max_clones, show_default=True)
@click.option("--mutation-rate", type=float, default=clonal.ClonalConfig.base_mutation_rate, show_default=True)
@click.option("--replacement", type=float, default=clonal.ClonalConfig.replacement_fraction, show_default=True)
@click.option("--affinity", type=click.Choice(["hamming", "contiguous"]), default="hamming", show_default=True)
@seed_option
@format_option
def clonal_cmd(target, steps, population, clone_factor, max_clones, mutation_rate, replacement, affinity,
               seed, fmt):
    """Evolve a random population towards TARGET and report the best affinity per step."""
    try:
        antigen = BitString(target)
        config = clonal.ClonalConfig(clone_factor, max_clones, mutation_rate, population, replacement)
        if steps < 0:
            raise ValueError("--steps must be >= 0")
    except ValueError as exc:
        _fail(exc)
    rng = np.random.default_rng(seed)
    pop = clonal.random_population(population, len(antigen), rng)
    report = Report(fmt)
    report.add("step", step=0, best=clonal.best_affinity(pop, antigen, affinity))
    for step in range(1, steps + 1):
        pop = clonal.clonal_step(pop, antigen, affinity, config, rng)
        report.add("step", step=step, best=clonal.best_affinity(pop, antigen, affinity))
    scores = clonal._score(pop, antigen.bits, affinity)
    for i, row in enumerate(pop):
        report.add("individual", index=i, pattern=str(BitString(row)), affinity=float(scores[i]))
    report.emit()


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

@main.group()
def synth():
    """Write synthetic workloads plus a ground-truth manifest."""


def _synth_report(fmt, files, manifest):
    report = Report(fmt)
    for role, path in files.items():
        report.add("file", role=role, path=path)
    report.add("manifest", **{k: v for k, v in manifest.items() if not k.startswith("votes.")})
    report.emit()


@synth.command("ratings")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--users", type=int, default=io.DIVERSITY_USERS, show_default=True)
@click.option("--items", type=int, default=io.DIVERSITY_ITEMS, show_default=True)
@seed_option
@format_option
def synth_ratings(out_dir, users, items, seed, fmt):
    """Clustered ratings: a tight cluster plus sparse users sharing its taste."""
    try:
        table, manifest = io.synth_ratings(users, items, io.DIVERSITY_CLUSTERS, seed)
    except ValueError as exc:
        _fail(exc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"ratings": str(out / "ratings.csv"), "manifest": str(out / "ratings.manifest")}
    io.write_ratings(table, files["ratings"])
    io.write_manifest(manifest, files["manifest"])
    _synth_report(fmt, files, manifest)


@synth.command("flows")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--self-rows", type=int, default=200, show_default=True)
@click.option("--attack-rows", type=int, default=10, show_default=True)
@seed_option
@format_option
def synth_flows(out_dir, self_rows, attack_rows, seed, fmt):
    """Labelled flow log: self traffic with attack rows spliced in.

    Also writes the self rows alone, for training and clean replays.
    """
    try:
        log, manifest = io.synth_flows(io.TrafficSpec(self_rows),
                                       dataclasses.replace(io.DEFAULT_ATTACK, rows=attack_rows), seed)
    except ValueError as exc:
        _fail(exc)
    clean = io.FlowLog(log.self_records(), ["self"] * (len(log) - attack_rows))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"flows": str(out / "flows.csv"), "self": str(out / "self.csv"),
             "manifest": str(out / "flows.manifest")}
    io.write_flows(log, files["flows"])
    io.write_flows(clean, files["self"])
    io.write_manifest(manifest, files["manifest"])
    _synth_report(fmt, files, manifest)


@synth.command("dca")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--phase-length", type=int, default=200, show_default=True)
@seed_option
@format_option
def synth_dca(out_dir, phase_length, seed, fmt):
    """Two-phase stream: safe ticks carrying antigen A, then danger ticks carrying B."""
    try:
        signals, antigens, manifest = io.two_phase_stream(seed, phase_length)
    except ValueError as exc:
        _fail(exc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"signals": str(out / "signals.csv"), "antigens": str(out / "antigens.csv"),
             "manifest": str(out / "dca.manifest")}
    io.write_signals(signals, files["signals"])
    io.write_antigens(antigens, files["antigens"])
    io.write_manifest(manifest, files["manifest"])
    _synth_report(fmt, files, manifest)


if __name__ == "__main__":  # pragma: no cover
    main()

"""One function per CLI subcommand; each takes a validated config and writes into ``config.out``."""
import logging
from collections import Counter
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

from transferability.bounds import BoundInputs, BoundReport, bound_report, empirical_rademacher
from transferability.constants import SLACK_TOL
from transferability.dgalgo import accuracy_frame, attack_sweep, erm_train, transfer_train, verify_optimization_guarantee
from transferability.domains import (
    PIECEWISE,
    LabeledJoint,
    SampleSet,
    counterexample_pair,
    example1_pair,
    label_marginal_tv,
    rotated_gaussian_suite,
)
from transferability.errors import ValidationError
from transferability.hypotheses import LossKind, ThresholdGrid, enumerate_family
from transferability.measures import (
    hdh_divergence_1d,
    symmetric_threshold_family,
    target_bound,
    transfer_measures,
    tv_half,
    tv_unnormalized,
)
from transferability.nnet import Architecture, MlpModel, param_lipschitz_probe
from transferability.utils import first_argmin, spawn_seeds

from transfer_cli.core.io import load_domain, read_kind, read_result, write_frame, write_json
from transfer_cli.models.schemas import (
    AttackSweep,
    Checkpoint,
    DomainEntry,
    ExperimentConfig,
    Manifest,
    MeasureReport,
    ReportSummary,
    SlackRow,
    TrainSummary,
)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.json"
TRAIN_RESULT = "train_result.json"


def _write_samples(samples: List[SampleSet], out: Path, names: List[str]) -> List[DomainEntry]:
    entries = []
    for s, name in zip(samples, names):
        s.to_csv(out / name)
        entries.append(DomainEntry(domain_id=s.domain_id, seed=s.seed, file=name, n=len(s)))
    return entries


def cmd_gen(config: ExperimentConfig) -> Manifest:
    """Generate domains into ``out``.

    The rotated-Gaussian suite writes one CSV per domain. The analytic pairs
    write ``source.json`` and ``target.json`` and list no sampled domains.
    """
    gen, out = config.gen, config.out
    if gen.kind == "rotated_gaussian":
        if len(gen.angles_deg) != gen.n_domains:
            raise ValidationError(f"{gen.n_domains} domains but {len(gen.angles_deg)} angles")
        suite = rotated_gaussian_suite(gen.n_domains, np.deg2rad(gen.angles_deg), gen.n_per, config.seed,
                                       gen.n_classes, gen.sigma, gen.radius)
        entries = _write_samples(suite, out, [f"domain_{s.domain_id}.csv" for s in suite])
        n_labels = gen.n_classes
    else:
        source, target = example1_pair(gen.intensity) if gen.kind == "example1" else counterexample_pair()
        write_json(out / "source.json", "joint", source)
        write_json(out / "target.json", "joint", target)
        entries = []
        n_labels = source.K
    manifest = Manifest(generator=gen.kind, seed=config.seed, n_labels=n_labels, domains=entries)
    write_json(out / MANIFEST, "manifest", manifest)
    return manifest


def _load_suite(data_dir: Path) -> Tuple[Manifest, List[SampleSet]]:
    manifest = read_kind(data_dir / MANIFEST, "manifest")
    suite = []
    for entry in manifest.domains:
        s = SampleSet.from_csv(data_dir / entry.file, n_labels=manifest.n_labels, seed=entry.seed)
        if s.domain_id != entry.domain_id:
            raise ValidationError(f"{entry.file} holds domain {s.domain_id}, manifest says {entry.domain_id}")
        suite.append(s)
    return manifest, suite


def _split_target(suite: List[SampleSet], target_id: int) -> Tuple[SampleSet, List[SampleSet]]:
    targets = [s for s in suite if s.domain_id == target_id]
    if not targets:
        raise ValidationError(f"no domain with id {target_id}")
    sources = [s for s in suite if s.domain_id != target_id]
    if not sources:
        raise ValidationError("at least one source domain besides the target is required")
    return targets[0], sources


def _pooled(domains: List[SampleSet]) -> SampleSet:
    return SampleSet(np.vstack([d.x for d in domains]), np.concatenate([d.y for d in domains]), domains[0].n_labels)


def cmd_train(config: ExperimentConfig) -> TrainSummary:
    """Train on every domain except the target and write the checkpoint."""
    tr, out = config.train, config.out
    manifest, suite = _load_suite(tr.data_dir or out)
    _, sources = _split_target(suite, tr.target_id)
    arch = Architecture.build(sources[0].dim, config.arch.hidden_dims, config.arch.feature_dim,
                              manifest.n_labels, config.arch.clamp)
    checkpoint_path = out / CHECKPOINT
    logger.info("Training %s on %d source domains (target %d held out)", tr.algo, len(sources), tr.target_id)

    result = None
    if tr.algo == "erm":
        # Same number of descent steps as transfer training.
        spec = tr.descent.model_copy(update={"steps": tr.epochs * tr.descent.steps})
        model = erm_train(sources, arch, spec, config.seed)
        summary = TrainSummary(algo="erm", seed=config.seed, checkpoint=str(checkpoint_path))
    else:
        result = transfer_train(sources, arch, tr.delta, tr.n_inner, tr.lam, tr.ascent, tr.descent,
                                tr.epochs, config.seed)
        model = result.model
        summary = TrainSummary(algo="transfer", seed=config.seed, delta=result.delta, lam=result.lam,
                               eta=result.eta, epochs=result.epochs, theta_adv=result.theta_adv.tolist(),
                               checkpoint=str(checkpoint_path))

    write_json(checkpoint_path, "checkpoint", Checkpoint.model_validate(model.to_checkpoint()))
    write_json(out / TRAIN_RESULT, "train_result", summary)

    if tr.certify:
        if result is None:
            raise ValidationError("certification needs a model trained with --algo transfer")
        probe_seed, mixture_seed = spawn_seeds(config.seed, 2)
        probe = param_lipschitz_probe(model, _pooled(sources), n_pairs=tr.probe_pairs, seed=probe_seed)
        certificate = verify_optimization_guarantee(result, sources, tr.delta, tr.n_mixtures, seed=mixture_seed,
                                                    n_ball_samples=tr.n_ball_samples, l_theta=probe)
        write_json(out / "certificate.json", "certificate", certificate)
        if not certificate.holds:
            logger.warning("Optimization certificate failed: %s", certificate.slacks)
    return summary


def _trained_label(checkpoint_path: Path) -> str:
    summary_path = checkpoint_path.parent / TRAIN_RESULT
    if summary_path.exists():
        return read_kind(summary_path, "train_result").algo
    return "model"


def cmd_attack(config: ExperimentConfig) -> AttackSweep:
    """Attack a trained checkpoint at every configured radius."""
    at, out = config.attack, config.out
    checkpoint_path = at.checkpoint or out / CHECKPOINT
    checkpoint = read_kind(checkpoint_path, "checkpoint")
    model = MlpModel.from_checkpoint(checkpoint.model_dump(mode="json"))
    _, suite = _load_suite(at.data_dir or out)
    target, sources = _split_target(suite, at.target_id)
    label = at.label or _trained_label(checkpoint_path)

    results = attack_sweep(model, [target, *sources], at.deltas, at.optimizer, at.iterations,
                           config.seed, at.steps_per_selection)
    for i, res in enumerate(results):
        write_frame(res.trajectory_frame(), out / f"trajectory_delta_{i}.csv")
        logger.info("delta=%s: gap %s, target accuracy drop %s", res.delta, res.best_gap, res.target_accuracy_drop)
    write_frame(accuracy_frame(results, label), out / "attack_accuracy.csv")
    sweep = AttackSweep(label=label, checkpoint=str(checkpoint_path), results=results)
    write_json(out / "attack_result.json", "attack_sweep", sweep)
    return sweep


def cmd_measure(config: ExperimentConfig) -> MeasureReport:
    """Transfer measures between a source and a target over a threshold family."""
    ms, out = config.measure, config.out
    source_path = ms.source or out / "source.json"
    target_path = ms.target or out / "target.json"
    source = load_domain(source_path, ms.n_labels)
    target = load_domain(target_path, ms.n_labels)
    loss = LossKind.zero_one() if ms.loss == "zero_one" else LossKind.cross_entropy(ms.clamp)
    if ms.gamma_delta is not None:
        gamma = symmetric_threshold_family(ms.gamma_delta, ms.gamma_scale, ms.n_grid)
    else:
        gamma = ThresholdGrid(n_grid=ms.n_grid)

    transfer = transfer_measures(source, target, gamma, loss)
    family = enumerate_family(gamma, source, target)
    best_source = family.member(first_argmin(family.risks(source, loss)))
    fields = {}
    if isinstance(source, LabeledJoint) and isinstance(target, LabeledJoint):
        fields["tv_unnormalized"] = tv_unnormalized(source, target)
        fields["tv_half"] = tv_half(source, target)
        if source.variant == PIECEWISE and target.variant == PIECEWISE:
            fields["hdh"] = hdh_divergence_1d(source, target)
    report = MeasureReport(
        source=str(source_path),
        target=str(target_path),
        transfer=transfer,
        label_shift_tv=label_marginal_tv(source, target),
        target_bound=target_bound(source, target, gamma, best_source, loss),
        **fields,
    )
    write_json(out / "measure_report.json", "measure_report", report)
    table = pd.Series({
        "one_sided": transfer.one_sided,
        "reverse": transfer.reverse,
        "symmetric": transfer.symmetric,
        "realizable": transfer.realizable,
        "eps_star_source": transfer.eps_star_source,
        "eps_star_target": transfer.eps_star_target,
        "label_shift_tv": report.label_shift_tv,
        **fields,
    })
    print(table.to_string())
    return report


def cmd_bound(config: ExperimentConfig) -> BoundReport:
    """Assemble generalization slacks, estimating Rademacher terms from sample CSVs when asked."""
    b, out = config.bound, config.out
    values = {"m": b.m, "k": b.k, "r_m": b.r_m, "r_k": b.r_k}
    errors = {"r_m_std_err": 0.0, "r_k_std_err": 0.0}
    seeds = dict(zip(("m", "k"), spawn_seeds(config.seed, 2)))
    for size, csv in (("m", b.source_csv), ("k", b.target_csv)):
        if values[f"r_{size}"] is None and csv is not None:
            samples = SampleSet.from_csv(csv, n_labels=b.K)
            est = empirical_rademacher(ThresholdGrid(n_grid=b.n_grid, refine=False), samples,
                                       b.n_sign_draws, seed=seeds[size])
            values[size], values[f"r_{size}"] = len(samples), max(0.0, est.estimate)
            errors[f"r_{size}_std_err"] = est.std_err
            logger.info("Rademacher estimate on %s: %s (std err %s)", csv, est.estimate, est.std_err)
    inputs = BoundInputs(delta=b.delta, d_vc=b.d_vc, d_nat=b.d_nat, K=b.K, C=b.C, **values, **errors)
    report = bound_report(inputs)
    write_json(out / "bound_report.json", "bound_report", report)
    for name in ("rademacher", "vc", "natarajan"):
        terms = getattr(report, name)
        if terms is not None:
            print(f"{name}: one_sided={terms.one_sided:.6g} symmetric={terms.symmetric:.6g} "
                  f"realizable={terms.realizable:.6g}")
    for caveat in report.caveats:
        print(f"note: {caveat}")
    return report


def _slack_rows(source: str, slacks: dict) -> List[SlackRow]:
    return [SlackRow(source=source, inequality=name, slack=value, holds=value >= -SLACK_TOL)
            for name, value in slacks.items()]


def cmd_report(config: ExperimentConfig) -> ReportSummary:
    """Accuracy-vs-radius tables per domain and a slack table from earlier results."""
    inputs, out = config.report.inputs, config.out
    if not inputs:
        raise ValidationError("report needs at least one result file")
    kinds: Counter = Counter()
    frames, slacks = [], []
    for path in inputs:
        kind, payload = read_result(path)
        kinds[kind] += 1
        if kind == "attack_sweep":
            frames.append(accuracy_frame(payload.results, payload.label))
        elif kind == "certificate":
            slacks += _slack_rows(str(path), payload.slacks)
        elif kind == "measure_report" and payload.target_bound is not None:
            slacks += _slack_rows(str(path), payload.target_bound.slacks)
        else:
            logger.info("Nothing to tabulate from %s (%s)", path, kind)

    accuracy_files = []
    if frames:
        accuracy = pd.concat(frames, ignore_index=True)
        for domain_id, group in accuracy.groupby("domain_id"):
            table = group.pivot_table(index="delta", columns="label", values="attacked_acc", aggfunc="mean")
            table.columns.name = None
            path = write_frame(table.reset_index(), out / f"report_accuracy_domain_{domain_id}.csv")
            accuracy_files.append(str(path))

    slack_table = None
    if slacks:
        frame = pd.DataFrame([row.model_dump() for row in slacks], columns=list(SlackRow.model_fields))
        slack_table = str(write_frame(frame, out / "report_slacks.csv"))
    summary = ReportSummary(
        n_inputs=len(inputs),
        kinds=dict(kinds),
        accuracy_files=accuracy_files,
        slack_table=slack_table,
        slacks=slacks,
        min_slack=min((row.slack for row in slacks), default=None),
    )
    write_json(out / "report_summary.json", "report_summary", summary)
    return summary


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "attack": cmd_attack,
    "measure": cmd_measure,
    "bound": cmd_bound,
    "report": cmd_report,
}

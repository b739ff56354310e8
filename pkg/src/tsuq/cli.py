"""Config-driven pipeline: generate -> filter -> dynamics -> qoi -> invert -> metrics.

Every stage reads its inputs from files, writes its outputs to files, and
records a manifest with the configuration hash and seed, so any stage can be
rerun or audited in isolation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .clustering import LloydKMeans
from .density import GaussianKde, invert, rejection_sample, tv_distance
from .errors import (
    FormatError,
    MissingArtifactError,
    NumericalError,
    TsuqError,
    ValidationError,
)
from .kpca import DEFAULT_KPCA_PROPOSALS, QoiSamples, learn_qois_and_transform, save_qoi_maps
from .splinefilter import FilterConfig, filter_ensemble
from .svm import DEFAULT_SVM_PROPOSALS, KernelSpec, select_classifier
from .timeseries import (
    ParameterDist,
    ParameterSampleSet,
    load_ensemble,
    load_parameters,
    save_ensemble,
    save_parameters,
    subseed,
)

STAGES = ("generate", "filter", "dynamics", "qoi", "invert", "metrics")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING = 4

# seed stream indices for stage-level randomness
_STREAM_KMEANS = 10
_STREAM_CV = 11
_STREAM_REJECTION = 12


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_proposals(raw, default):
    if raw is None:
        return list(default)
    specs = []
    for entry in raw:
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ValidationError("each kernel proposal needs at least a 'kind'")
        specs.append(
            KernelSpec(
                kind=entry["kind"],
                gamma=entry.get("gamma"),
                degree=int(entry.get("degree", 3)),
                coef0=float(entry.get("coef0", 0.0)),
            )
        )
    return specs


@dataclass
class PipelineConfig:
    """Validated pipeline configuration (see README for the JSON schema)."""

    seed: int
    output_dir: Path
    filter: FilterConfig
    n_clusters: int
    n_init: int
    qoi_mode: str  # "fixed" | "variance_rate"
    qoi_n: int | None
    qoi_rate: float | None
    experiment: str | None = None
    generate_overrides: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    svm_proposals: list = field(default_factory=lambda: list(DEFAULT_SVM_PROPOSALS))
    svm_k_folds: int = 10
    svm_C: float = 1.0
    svm_tol: float = 1e-3
    qoi_proposals: list = field(default_factory=lambda: list(DEFAULT_KPCA_PROPOSALS))
    grid_n: int = 2001
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, path, out_override=None, seed_override=None) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")

        if seed_override is not None:
            raw["seed"] = int(seed_override)
        if out_override is not None:
            raw["output_dir"] = str(out_override)

        missing = [key for key in ("seed", "output_dir", "filter", "clustering", "qoi") if key not in raw]
        if "experiment" not in raw and "inputs" not in raw:
            missing.append("experiment (or inputs)")
        if missing:
            raise ValidationError(f"config is missing required fields: {', '.join(missing)}")

        filt = raw["filter"]
        needed = ("time_start_idx", "time_end_idx", "num_filter_obs")
        missing_f = [k for k in needed if k not in filt]
        if missing_f:
            raise ValidationError(f"filter config is missing: {', '.join(missing_f)}")
        filter_cfg = FilterConfig(
            time_start_idx=int(filt["time_start_idx"]),
            time_end_idx=int(filt["time_end_idx"]),
            num_filter_obs=int(filt["num_filter_obs"]),
            tol=float(filt.get("tol", 5e-2)),
            min_knots=int(filt.get("min_knots", 3)),
            max_knots=int(filt.get("max_knots", 12)),
            opt_tol=float(filt.get("opt_tol", 1e-8)),
        )

        clustering = raw["clustering"]
        if "n_clusters" not in clustering:
            raise ValidationError("clustering config is missing: n_clusters")

        qoi = raw["qoi"]
        mode = qoi.get("mode")
        if mode == "fixed":
            if "n" not in qoi:
                raise ValidationError("qoi config with mode 'fixed' is missing: n")
            qoi_n, qoi_rate = int(qoi["n"]), None
        elif mode == "variance_rate":
            if "rate" not in qoi:
                raise ValidationError("qoi config with mode 'variance_rate' is missing: rate")
            qoi_n, qoi_rate = None, float(qoi["rate"])
        else:
            raise ValidationError("qoi.mode must be 'fixed' or 'variance_rate'")

        svm_cfg = raw.get("svm", {})
        density_cfg = raw.get("density", {})
        return cls(
            seed=int(raw["seed"]),
            output_dir=Path(raw["output_dir"]),
            filter=filter_cfg,
            n_clusters=int(clustering["n_clusters"]),
            n_init=int(clustering.get("n_init", 10)),
            qoi_mode=mode,
            qoi_n=qoi_n,
            qoi_rate=qoi_rate,
            experiment=raw.get("experiment"),
            generate_overrides=raw.get("generate", {}),
            inputs=raw.get("inputs", {}),
            svm_proposals=_parse_proposals(svm_cfg.get("proposals"), DEFAULT_SVM_PROPOSALS),
            svm_k_folds=int(svm_cfg.get("k_folds", 10)),
            svm_C=float(svm_cfg.get("C", 1.0)),
            svm_tol=float(svm_cfg.get("tol", 1e-3)),
            qoi_proposals=_parse_proposals(qoi.get("proposals"), DEFAULT_KPCA_PROPOSALS),
            grid_n=int(density_cfg.get("grid_n", 2001)),
            raw=raw,
        )

    def config_hash(self) -> str:
        """Hash of every semantic field (the output directory is location, not semantics)."""
        semantic = {k: v for k, v in self.raw.items() if k != "output_dir"}
        blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _out(cfg: PipelineConfig, name: str) -> Path:
    return cfg.output_dir / name


def _require(cfg: PipelineConfig, name: str, producer: str) -> Path:
    path = _out(cfg, name)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact {path}; run the '{producer}' stage first")
    return path


def _write_manifest(cfg: PipelineConfig, stage: str, outputs: list[str]) -> None:
    payload = {
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "outputs": sorted(outputs),
    }
    with open(_out(cfg, f"{stage}.manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_labels(path: Path, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["series_id", "label"])
        for i, label in enumerate(labels):
            writer.writerow([str(i), str(int(label))])


def _read_labels(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.array([int(row[1]) for row in reader if row], dtype=int)


def _dist_payload(dist: ParameterDist) -> dict:
    return {
        "name": dist.name,
        "lo": dist.lo,
        "hi": dist.hi,
        "dist": dist.dist,
        "alpha": dist.alpha,
        "beta": dist.beta,
    }


def stage_generate(cfg: PipelineConfig) -> list[str]:
    if cfg.experiment is None:
        raise ValidationError("the generate stage needs an 'experiment' in the config")
    overrides = cfg.generate_overrides
    spec = models.experiment_spec(
        cfg.experiment,
        n_predicted=overrides.get("n_predicted"),
        n_observed=overrides.get("n_observed"),
        sigma=overrides.get("sigma"),
        probe_x=overrides.get("probe_x"),
    )
    data = models.generate_experiment(spec, cfg.seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    save_ensemble(data.predicted, _out(cfg, "predicted.csv"))
    save_ensemble(data.observed, _out(cfg, "observed.csv"))
    save_parameters(data.predicted_params, _out(cfg, "predicted_params.csv"))
    save_parameters(data.observed_params, _out(cfg, "observed_params.csv"))
    meta = {
        "experiment": spec.name,
        "sigma": spec.sigma,
        "n_predicted": spec.n_predicted,
        "n_observed": spec.n_observed,
        "noisy_predictions": spec.noisy_predictions,
        "probe_x": spec.probe_x,
        "init_dists": [_dist_payload(d) for d in spec.init_dists],
        "dg_dists": [_dist_payload(d) for d in spec.dg_dists],
    }
    _write_json(_out(cfg, "experiment.json"), meta)
    return [
        "predicted.csv",
        "observed.csv",
        "predicted_params.csv",
        "observed_params.csv",
        "experiment.json",
    ]


def _input_path(cfg: PipelineConfig, key: str, default_name: str, producer: str) -> Path:
    if key in cfg.inputs:
        path = Path(cfg.inputs[key])
        if not path.exists():
            raise MissingArtifactError(f"configured input file does not exist: {path}")
        return path
    return _require(cfg, default_name, producer)


def stage_filter(cfg: PipelineConfig) -> list[str]:
    predicted = load_ensemble(_input_path(cfg, "predicted", "predicted.csv", "generate"), "predicted")
    observed = load_ensemble(_input_path(cfg, "observed", "observed.csv", "generate"), "observed")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, ens in (("predicted", predicted), ("observed", observed)):
        filtered = filter_ensemble(ens, cfg.filter)
        save_ensemble(filtered.to_ensemble(), _out(cfg, f"filtered_{name}.csv"))
        meta_path = _out(cfg, f"filter_meta_{name}.csv")
        with open(meta_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["series_id", "knots_used", "converged"])
            for i in range(filtered.n_series):
                writer.writerow(
                    [str(i), str(int(filtered.knots_used[i])), str(bool(filtered.converged[i]))]
                )
        outputs += [f"filtered_{name}.csv", f"filter_meta_{name}.csv"]
    return outputs


def stage_dynamics(cfg: PipelineConfig) -> list[str]:
    pred = load_ensemble(_require(cfg, "filtered_predicted.csv", "filter"), "predicted")
    obs = load_ensemble(_require(cfg, "filtered_observed.csv", "filter"), "observed")
    kmeans = LloydKMeans(
        n_clusters=cfg.n_clusters,
        n_init=cfg.n_init,
        random_state=subseed(cfg.seed, _STREAM_KMEANS),
    ).fit(pred.values)
    classifier = select_classifier(
        pred.values,
        kmeans.labels_,
        proposals=cfg.svm_proposals,
        k=cfg.svm_k_folds,
        C=cfg.svm_C,
        tol=cfg.svm_tol,
        seed=subseed(cfg.seed, _STREAM_CV),
    )
    for entry in classifier.proposal_report_:
        rate = entry["misclassification"]
        shown = "skipped" if rate is None else f"{rate:.6g}"
        print(f"misclassification rate {shown} for kernel={entry['kernel']}")
    print(f"selected kernel={classifier.kernel.label()}")
    print(f"cv misclassification rate {classifier.cv_misclassification_:.6g}")
    obs_labels = classifier.predict(obs.values)
    _write_labels(_out(cfg, "labels_predicted.csv"), kmeans.labels_)
    _write_labels(_out(cfg, "labels_observed.csv"), obs_labels)
    classifier.save(_out(cfg, "classifier.json"))
    return ["labels_predicted.csv", "labels_observed.csv", "classifier.json"]


def stage_qoi(cfg: PipelineConfig) -> list[str]:
    pred = load_ensemble(_require(cfg, "filtered_predicted.csv", "filter"), "predicted")
    obs = load_ensemble(_require(cfg, "filtered_observed.csv", "filter"), "observed")
    pred_labels = _read_labels(_require(cfg, "labels_predicted.csv", "dynamics"))
    obs_labels = _read_labels(_require(cfg, "labels_observed.csv", "dynamics"))
    maps, samples, report = learn_qois_and_transform(
        pred.values,
        pred_labels,
        obs.values,
        obs_labels,
        num_qoi=cfg.qoi_n,
        variance_rate=cfg.qoi_rate,
        proposals=cfg.qoi_proposals,
    )
    for cluster_report in report:
        cluster = cluster_report["cluster"]
        for entry in cluster_report["proposals"]:
            if entry["variance"] is None:
                print(f"cluster {cluster}: kernel={entry['kernel']} cannot reach the rate")
            else:
                print(
                    f"cluster {cluster}: {entry['n']} components explain "
                    f"{100 * entry['variance']:.4f}% for kernel={entry['kernel']}"
                )
        chosen = cluster_report["proposals"][cluster_report["selected"]]
        print(
            f"cluster {cluster}: selected kernel={chosen['kernel']} "
            f"({chosen['n']} components, {100 * chosen['variance']:.4f}%)"
        )
        if cluster_report.get("spectral_gap") is not None:
            print(
                f"cluster {cluster}: spectral gap past component {chosen['n']} "
                f"is {100 * cluster_report['spectral_gap']:.4f}%"
            )
    save_qoi_maps(maps, _out(cfg, "qoi_maps.json"))
    outputs = ["qoi_maps.json"]
    for sample_set in samples:
        for side in ("predicted", "observed"):
            name = f"qoi_{side}_{sample_set.cluster}.csv"
            values = getattr(sample_set, side)
            index = getattr(sample_set, f"{side}_index")
            with open(_out(cfg, name), "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["series_id"] + [f"qoi_{j + 1}" for j in range(values.shape[1])])
                for i, row in zip(index, values):
                    writer.writerow([str(int(i))] + [_fmt(v) for v in row])
            outputs.append(name)
    return outputs


def _read_qoi_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        idx, rows = [], []
        for row in reader:
            if not row:
                continue
            idx.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    n_cols = len(header) - 1
    values = np.array(rows) if rows else np.empty((0, n_cols))
    return np.array(idx, dtype=int), values


def _load_experiment_meta(cfg: PipelineConfig) -> dict | None:
    path = _out(cfg, "experiment.json")
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _initial_parameters(cfg: PipelineConfig) -> ParameterSampleSet:
    meta = _load_experiment_meta(cfg)
    bounds = None
    if meta is not None:
        bounds = [(d["lo"], d["hi"]) for d in meta["init_dists"]]
    elif "bounds" in cfg.inputs:
        bounds = [tuple(b) for b in cfg.inputs["bounds"]]
    path = _input_path(cfg, "predicted_params", "predicted_params.csv", "generate")
    return load_parameters(path, bounds=bounds)


def stage_invert(cfg: PipelineConfig) -> list[str]:
    init_params = _initial_parameters(cfg)
    obs_labels = _read_labels(_require(cfg, "labels_observed.csv", "dynamics"))
    n_clusters = cfg.n_clusters
    samples = []
    for k in range(n_clusters):
        pred_idx, pred_vals = _read_qoi_csv(_require(cfg, f"qoi_predicted_{k}.csv", "qoi"))
        obs_idx, obs_vals = _read_qoi_csv(_require(cfg, f"qoi_observed_{k}.csv", "qoi"))
        samples.append(
            QoiSamples(
                cluster=k,
                predicted=pred_vals,
                observed=obs_vals,
                predicted_index=pred_idx,
                observed_index=obs_idx,
            )
        )
    result = invert(samples, obs_labels, init_params)
    accepted = rejection_sample(result, subseed(cfg.seed, _STREAM_REJECTION))

    diagnostics = {
        "clusters": [
            {
                "cluster": c.cluster,
                "diagnostic": c.diagnostic,
                "weight": c.weight,
                "n_pred": c.n_pred,
                "n_obs": c.n_obs,
                "underflow_count": c.underflow_count,
                "updated_probability": result.updated_cluster_probability(c.cluster),
            }
            for c in result.clusters
        ],
        "n_accepted": int(accepted.size),
        "tv_table": None,
    }
    _write_json(_out(cfg, "diagnostics.json"), diagnostics)

    with open(_out(cfg, "update_weights.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["series_id", "label", "ratio", "update_weight"])
        for i in range(init_params.n_samples):
            writer.writerow(
                [
                    str(i),
                    str(int(result.labels[i])),
                    _fmt(result.ratios[i]),
                    _fmt(result.update_weights[i]),
                ]
            )
    with open(_out(cfg, "accepted.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["accepted_index"])
        for i in accepted:
            writer.writerow([str(int(i))])
    return ["diagnostics.json", "update_weights.csv", "accepted.csv"]


def _read_update_weights(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        labels, ratios, weights = [], [], []
        for row in reader:
            if not row:
                continue
            labels.append(int(row[1]))
            ratios.append(float(row[2]))
            weights.append(float(row[3]))
    return np.array(labels, dtype=int), np.array(ratios), np.array(weights)


def stage_metrics(cfg: PipelineConfig) -> list[str]:
    init_params = _initial_parameters(cfg)
    meta = _load_experiment_meta(cfg)
    obs_path = _input_path(cfg, "observed_params", "observed_params.csv", "generate")
    dg_params = load_parameters(obs_path, bounds=[(lo, hi) for lo, hi in init_params.bounds])
    _, _, update_weights = _read_update_weights(_require(cfg, "update_weights.csv", "invert"))

    dg_exact = None
    if meta is not None:
        dg_exact = [ParameterDist(**d) for d in meta["dg_dists"]]

    rows_density = []
    rows_tv = []
    for j, name in enumerate(init_params.names):
        lo, hi = init_params.bounds[j]
        width = hi - lo

        def init_pdf(x, lo=lo, hi=hi, width=width):
            x = np.asarray(x, dtype=float)
            return np.where((x >= lo) & (x <= hi), 1.0 / width, 0.0)

        updated_kde = GaussianKde().fit(init_params.samples[:, j], weights=update_weights)
        dg_kde = GaussianKde().fit(dg_params.samples[:, j])
        pad = 3.0 * max(float(updated_kde.bandwidths_[0]), float(dg_kde.bandwidths_[0]))

        # reported TV convention: full L1 distance (tv_distance returns half)
        tv_init = 2.0 * tv_distance(init_pdf, dg_kde, (lo, hi), cfg.grid_n, extend=pad)
        tv_update = 2.0 * tv_distance(updated_kde, dg_kde, (lo, hi), cfg.grid_n, extend=pad)
        tv_exact = None
        if dg_exact is not None:
            tv_exact = 2.0 * tv_distance(
                dg_kde, dg_exact[j].pdf, (lo, hi), cfg.grid_n, extend=pad
            )
        rows_tv.append((name, tv_init, tv_update, tv_exact))

        grid = np.linspace(lo - pad, hi + pad, cfg.grid_n)
        init_vals = init_pdf(grid)
        up_vals = updated_kde.evaluate(grid)
        dg_vals = dg_kde.evaluate(grid)
        for x, iv, uv, dv in zip(grid, init_vals, up_vals, dg_vals):
            rows_density.append((name, x, iv, uv, dv))

    with open(_out(cfg, "densities.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["parameter", "x", "initial", "updated", "data_generating"])
        for name, x, iv, uv, dv in rows_density:
            writer.writerow([name, _fmt(x), _fmt(iv), _fmt(uv), _fmt(dv)])

    with open(_out(cfg, "tv_table.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["parameter", "tv_initial_vs_dg", "tv_updated_vs_dg", "tv_dg_sample_vs_exact"]
        )
        for name, tv_init, tv_update, tv_exact in rows_tv:
            writer.writerow(
                [
                    name,
                    _fmt(tv_init),
                    _fmt(tv_update),
                    "" if tv_exact is None else _fmt(tv_exact),
                ]
            )

    diag_path = _require(cfg, "diagnostics.json", "invert")
    with open(diag_path, encoding="utf-8") as fh:
        diagnostics = json.load(fh)
    diagnostics["tv_table"] = [
        {
            "parameter": name,
            "tv_initial_vs_dg": tv_init,
            "tv_updated_vs_dg": tv_update,
            "tv_dg_sample_vs_exact": tv_exact,
        }
        for name, tv_init, tv_update, tv_exact in rows_tv
    ]
    _write_json(diag_path, diagnostics)
    return ["densities.csv", "tv_table.csv", "diagnostics.json"]


_STAGE_RUNNERS = {
    "generate": stage_generate,
    "filter": stage_filter,
    "dynamics": stage_dynamics,
    "qoi": stage_qoi,
    "invert": stage_invert,
    "metrics": stage_metrics,
}


def run_stage(stage: str, cfg: PipelineConfig) -> None:
    """Run one pipeline stage; raises a typed error on failure."""
    if stage not in _STAGE_RUNNERS:
        raise ValidationError(f"unknown stage {stage!r}; choose from {STAGES}")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    outputs = _STAGE_RUNNERS[stage](cfg)
    _write_manifest(cfg, stage, outputs)


def run_all(cfg: PipelineConfig) -> None:
    """Run every stage in order, stopping at the first failure."""
    stages = list(STAGES)
    if cfg.experiment is None:
        stages.remove("generate")
    for stage in stages:
        run_stage(stage, cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tsuq",
        description="Learned-QoI observation-consistent inversion pipeline",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES + ("all",):
        stage_parser = sub.add_parser(stage, help=f"run the {stage} stage")
        stage_parser.add_argument("--config", required=True, help="path to the JSON config")
        stage_parser.add_argument("--out", default=None, help="override the output directory")
        stage_parser.add_argument("--seed", type=int, default=None, help="override the seed")
    args = parser.parse_args(argv)

    try:
        cfg = PipelineConfig.from_json(args.config, out_override=args.out, seed_override=args.seed)
        if args.stage == "all":
            run_all(cfg)
        else:
            run_stage(args.stage, cfg)
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TsuqError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

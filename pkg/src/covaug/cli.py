"""``covaug`` command line: run scenarios and write JSON reports.

Usage::

    covaug <landmark-init|relpose|verify> --config CFG.json --out REPORT.json
           [--seed N] [--instances N]

Exit status is 0 when every check passes, 1 on any failed check and 2 on
a configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from covaug import geom_sim, infoaug, landmark_init, relpose
from covaug.errors import ConfigError, CovaugError, InsufficientViews, UnderObserved
from covaug.oracles import dense_joint_covariance, rel_error
from covaug.suites import SUITE_NAMES, SUITES, suite_rng

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

KINDS = ("landmark-init", "relpose", "verify")

# Default tolerances of the scenario checks, keyed by check type.
SCENARIO_TOLERANCES = {
    "closed_form_vs_dense": 1e-9,
    "one_step_vs_dense": 1e-9,
    "two_step_vs_one_step": 1e-9,
    "information_preservation": 1e-10,
    "batch_vs_dense": 1e-9,
    "square_root_reconstruction": 1e-10,
    "whitening_quadratic_form": 1e-10,
    "schur_vs_dense": 1e-9,
    "prior_scale_monotonicity": 1e-10,
}

TOLERANCE_KEYS = frozenset(SCENARIO_TOLERANCES) | frozenset(SUITE_NAMES) | {"all"}


class SceneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    poses: int = Field(5, ge=1)
    landmarks: int = Field(10, ge=0)
    noise_sigma: float = Field(1e-3, gt=0)
    preset: Literal["general", "collinear", "single-view"] = "general"
    baseline: float = Field(1.0, gt=0)
    noise_free: bool = False
    landmark_prior_sigma: float = Field(0.05, gt=0)
    pose_prior_sigma: float = Field(0.01, gt=0)


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["landmark-init", "relpose", "verify"]
    seed: int = Field(0, ge=0)
    instances: int = Field(200, ge=1)
    scene: SceneConfig = SceneConfig()
    tolerances: dict[str, float] = {}
    expect_degenerate: bool = False
    prior_scale: float = Field(100.0, gt=0)
    probes: int = Field(100, ge=1)

    @field_validator("tolerances")
    @classmethod
    def _known_tolerances(cls, value: dict[str, float]) -> dict[str, float]:
        for key, tol in value.items():
            if key not in TOLERANCE_KEYS:
                raise ValueError(f"unknown tolerance key {key!r}")
            if not tol >= 0:
                raise ValueError(f"tolerance {key!r} must be non-negative")
        return value

    def tolerance(self, key: str, default: float) -> float:
        if key in self.tolerances:
            return self.tolerances[key]
        return self.tolerances.get("all", default)


def load_config(text: str, overrides: dict | None = None) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<document>", "top level must be an object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = ".".join(str(p) for p in err["loc"]) or "<document>"
        raise ConfigError(path, err["msg"]) from None


def matrix_record(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"rows": M.shape[0], "cols": M.shape[1], "data": [float(x) for x in M.ravel()]}


def _finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


@dataclass
class Report:
    config: ScenarioConfig
    checks: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def add(self, name, computed, oracle, tolerance, *, error=None, rel=None, passed=None, note=None):
        """Record one check; approximate checks pass iff ``rel < tolerance``."""
        if name in self.checks:
            raise ValueError(f"duplicate check {name}")
        if passed is None:
            passed = rel is not None and np.isfinite(rel) and rel < tolerance
        record = {
            "name": name,
            "computed": computed if not isinstance(computed, float) else _finite_or_none(computed),
            "oracle": oracle if not isinstance(oracle, float) else _finite_or_none(oracle),
            "rel_error": _finite_or_none(rel),
            "tolerance": tolerance,
            "passed": bool(passed),
        }
        if note:
            record["note"] = note
        if error:
            record["error"] = error
        self.checks[name] = record

    def fail(self, name, exc: Exception, tolerance=None):
        self.add(name, None, None, tolerance, passed=False, error=f"{type(exc).__name__}: {exc}")

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self, with_timing: bool = True) -> dict:
        checks = [self.checks[k] for k in sorted(self.checks)]
        out = {
            "scenario": self.config.model_dump(mode="json"),
            "summary": {
                "checks": len(checks),
                "failed": sum(not c["passed"] for c in checks),
                "status": "pass" if self.passed else "fail",
            },
            "checks": checks,
            "values": {k: self.values[k] for k in sorted(self.values)},
            "matrices": {k: self.matrices[k] for k in sorted(self.matrices)},
        }
        if with_timing:
            out["timing"] = {k: self.timing[k] for k in sorted(self.timing)}
        return out

    def dumps(self, with_timing: bool = True) -> str:
        return json.dumps(self.to_dict(with_timing), indent=2, allow_nan=False) + "\n"


class _Timer:
    def __init__(self, report: Report, phase: str):
        self.report, self.phase = report, phase

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.report.timing[self.phase] = time.perf_counter() - self.start
        return False


def _scene(config: ScenarioConfig) -> geom_sim.Scene:
    s = config.scene
    return geom_sim.generate_scene(
        num_poses=s.poses, num_landmarks=s.landmarks, noise_sigma=s.noise_sigma,
        seed=config.seed, preset=s.preset, baseline=s.baseline, noise_free=s.noise_free,
        landmark_prior_sigma=s.landmark_prior_sigma, pose_prior_sigma=s.pose_prior_sigma,
    )


def _approx(report, config, name, key, value, reference):
    tol = config.tolerance(key, SCENARIO_TOLERANCES[key])
    report.add(name, None, None, tol, rel=rel_error(value, reference))


def run_landmark_init(config: ScenarioConfig) -> Report:
    """Closed form, one-step and two-step augmentation against the dense oracle."""
    report = Report(config)
    with _Timer(report, "scene"):
        scene = _scene(config)
        observations = scene.observations()
        P = scene.state_prior_cov()
        prior = infoaug.GaussianPrior.zero_mean(P)
    splits, systems = [], []
    with _Timer(report, "landmarks"):
        for j in range(len(scene.landmarks)):
            tag = f"landmark[{j:03d}]"
            try:
                system = geom_sim.build_landmark_system(scene, j, observations)
                split = landmark_init.nullspace_project(system)
                if split.under_observed:
                    raise UnderObserved(split.rank, j)
            except (InsufficientViews, UnderObserved) as exc:
                expected = config.expect_degenerate
                report.add(
                    f"{tag}.observability", "under-observed", "well-observed", None,
                    passed=expected,
                    note="expected degeneracy" if expected else None,
                    error=None if expected else f"{type(exc).__name__}: {exc}",
                )
                continue
            except CovaugError as exc:
                report.fail(f"{tag}.observability", exc)
                continue
            report.add(f"{tag}.observability", "well-observed", "well-observed", None, passed=True)
            try:
                dense = dense_joint_covariance(P, system.H_x, system.H_f, system.noise_cov)
                closed = landmark_init.landmark_marginal_covariance_closed_form(split, P)
                one = landmark_init.augment_one_step(split, prior).assemble()
                two = landmark_init.augment_two_step(split, prior).assemble()
                raw = infoaug.assemble_information(
                    prior, infoaug.LinearObservation(system.residual, system.H_x, system.H_f, system.noise_cov)
                ).assemble()
                projected = landmark_init.assemble_landmark_blocks(split, P).assemble()
            except CovaugError as exc:
                report.fail(f"{tag}.closed_form_vs_dense", exc)
                continue
            _approx(report, config, f"{tag}.closed_form_vs_dense", "closed_form_vs_dense", closed, dense[-3:, -3:])
            _approx(report, config, f"{tag}.one_step_vs_dense", "one_step_vs_dense", one, dense)
            _approx(report, config, f"{tag}.two_step_vs_one_step", "two_step_vs_one_step", two, one)
            _approx(report, config, f"{tag}.information_preservation", "information_preservation", projected, raw)
            report.matrices[f"{tag}.landmark_cov"] = matrix_record(closed)
            splits.append(split)
            systems.append(system)
    if len(splits) > 1:
        with _Timer(report, "batch"):
            try:
                batch = landmark_init.augment_multiple(splits, prior).assemble()
                H_m = np.vstack([s.H_x for s in systems])
                H_n = np.zeros((H_m.shape[0], 3 * len(systems)))
                row = 0
                for i, s in enumerate(systems):
                    H_n[row : row + s.k, 3 * i : 3 * i + 3] = s.H_f
                    row += s.k
                R = np.diag(np.concatenate([np.diag(s.noise_cov) for s in systems]))
                _approx(report, config, "batch.batch_vs_dense", "batch_vs_dense",
                        batch, dense_joint_covariance(P, H_m, H_n, R))
            except CovaugError as exc:
                report.fail("batch.batch_vs_dense", exc)
    return report


def run_relpose(config: ScenarioConfig) -> Report:
    """Pose information, its square root, whitening and prior-scale probes."""
    report = Report(config)
    rng = np.random.default_rng([config.seed, 7])
    with _Timer(report, "scene"):
        scene = _scene(config)
    try:
        with _Timer(report, "information"):
            system = geom_sim.build_relpose_system(scene)
            lam = relpose.relpose_information(system)
            sri = relpose.square_root_information(lam)
    except CovaugError as exc:
        report.fail("relpose.information", exc)
        return report

    report.values["rank"] = sri.rank
    report.values["landmarks"] = system.num_landmarks
    report.matrices["info"] = matrix_record(lam)
    report.matrices["sqrt_info"] = matrix_record(sri.R) if sri.rank else {"rows": 0, "cols": 6, "data": []}
    report.add("relpose.rank_rows", sri.R.shape[0], sri.rank, None, passed=sri.R.shape[0] == sri.rank)
    if config.scene.preset == "collinear" or config.expect_degenerate:
        report.add("relpose.degeneracy_detected", sri.rank, "<6", None, passed=sri.rank < 6)
    _approx(report, config, "relpose.square_root_reconstruction", "square_root_reconstruction", sri.R.T @ sri.R, lam)

    worst = 0.0
    for e in rng.standard_normal((10, 6)):
        worst = max(worst, relpose.whitening_error(sri, e))
    tol = config.tolerance("whitening_quadratic_form", SCENARIO_TOLERANCES["whitening_quadratic_form"])
    report.add("relpose.whitening_quadratic_form", None, None, tol, rel=worst)

    if sri.rank == 6:
        dense = dense_joint_covariance(system.landmark_prior_cov, system.H_f, system.H_T, system.noise_cov)
        _approx(report, config, "relpose.schur_vs_dense", "schur_vs_dense", np.linalg.inv(lam), dense[-6:, -6:])

    with _Timer(report, "probes"):
        scaled = relpose.RelPoseSystem(
            system.residual, system.H_f, system.H_T, system.noise_cov,
            config.prior_scale * system.landmark_prior_cov,
        )
        lam_scaled = relpose.relpose_information(scaled)
        probes = rng.standard_normal((config.probes, 6))
        probes /= np.linalg.norm(probes, axis=1, keepdims=True)
        q = np.einsum("pi,ij,pj->p", probes, lam, probes)
        q_scaled = np.einsum("pi,ij,pj->p", probes, lam_scaled, probes)
        # scaling the prior up (c > 1) may only lose information, and vice versa
        sign = 1.0 if config.prior_scale >= 1.0 else -1.0
        violation = max(0.0, float(np.max(sign * (q_scaled - q)))) / max(np.abs(lam).max(), np.finfo(float).tiny)
        tol = config.tolerance("prior_scale_monotonicity", SCENARIO_TOLERANCES["prior_scale_monotonicity"])
        report.add("relpose.prior_scale_monotonicity", None, None, tol, rel=violation)
    return report


def run_verify(config: ScenarioConfig) -> Report:
    """Every invariant suite once, with the configured seed and instance count."""
    report = Report(config)
    for suite in SUITES:
        start = time.perf_counter()
        try:
            value = suite.run(suite_rng(config.seed, suite.name), config.instances)
        except Exception as exc:  # a verification run records everything
            report.fail(suite.name, exc, suite.tolerance)
        else:
            if suite.tolerance is None:
                report.add(suite.name, int(value), 0, None, passed=value == 0)
            else:
                tol = config.tolerance(suite.name, suite.tolerance)
                report.add(suite.name, float(value), 0.0, tol, rel=float(value))
        report.timing[suite.name] = time.perf_counter() - start
    return report


RUNNERS = {"landmark-init": run_landmark_init, "relpose": run_relpose, "verify": run_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covaug", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=KINDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--instances", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        config = load_config(text, {"seed": args.seed, "instances": args.instances})
        if config.kind != args.command and args.command != "verify":
            raise ConfigError("kind", f"config is for {config.kind!r}, command is {args.command!r}")
    except ConfigError as exc:
        print(f"covaug: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    report = RUNNERS[args.command](config)
    args.out.write_text(report.dumps(), encoding="utf-8")
    summary = report.to_dict(with_timing=False)["summary"]
    print(f"covaug {args.command}: {summary['status']} ({summary['checks']} checks, {summary['failed']} failed)")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

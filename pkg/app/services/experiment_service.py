import csv
import io
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pydantic
import scipy

from app.config import Settings, load_settings
from app.errors import InvalidArgumentError, LabError
from app.models.mesh import Mesh
from app.models.schemas import (
    CaseResult,
    EnvironmentStamp,
    ExperimentConfig,
    Measurement,
    RunReport,
)
from app.models.systems import SchrodingerSystem
from app.services.field_service import FieldService
from app.services.identity_service import IdentityService, observed_orders
from app.services.mesh_service import MeshService, write_text_atomic
from app.services.operator_service import OperatorService
from app.services.spectral_service import SpectralService
from app.services.theorem_service import TheoremService

logger = logging.getLogger(__name__)

# Small meshes the balance fuzz cycles through when the configured mesh uses another generator.
FUZZ_MESHES: Dict[str, Dict[str, float]] = {
    "circle": {"n": 40, "radius": 1.0},
    "interval": {"n": 30, "length": 2.0},
    "disk": {"rings": 4, "radius": 1.0},
    "annulus": {"r_in": 0.5, "r_out": 1.0, "rings": 4},
    "torus": {"nx": 8, "ny": 8, "lx": 1.0, "ly": 1.0},
    "strip": {"n_long": 12, "n_wide": 4, "length": 3.0, "width": 1.0},
    "two-disks": {"rings": 3, "radius": 1.0, "gap": 0.5},
}

Series = List[Dict[str, object]]


def measure(
    name: str,
    value: float,
    tolerance_class: str,
    threshold: Optional[float] = None,
    passed: Optional[bool] = None,
) -> Measurement:
    """Measurement judged as value <= threshold unless `passed` is given explicitly."""
    value = float(value)
    if passed is None and threshold is not None:
        passed = bool(value <= threshold)
    return Measurement(name=name, value=value, tolerance_class=tolerance_class, threshold=threshold, passed=passed)


def _csv_cell(value: object) -> object:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return value


def _case_passed(measurements: List[Measurement]) -> bool:
    return all(m.passed is not False for m in measurements)


class ExperimentService:
    """
    Runs one configured experiment and writes its report, series and timings.

    Each experiment is a list of cases; a case that raises a LabError is
    recorded as failed with the error and its context.
    """

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or load_settings()
        self.meshes = MeshService()
        self.operators = OperatorService()
        self.fields = FieldService()
        self.identities = IdentityService(self.operators)

    # Entry point

    def run(self, config: ExperimentConfig, output_dir: Optional[str] = None) -> RunReport:
        """
        Execute the configured experiment and write its outputs.

        Args:
            config: Validated configuration
            output_dir: Overrides config.output.dir and LAB_OUTPUT_DIR

        Returns:
            RunReport; `passed` is False if any case failed an assertion or raised
        """
        if "seed" not in config.experiment.model_fields_set:
            config = self.with_seed(config, self.settings.default_seed)
        exp_id = config.experiment.id
        runners: Dict[str, Callable[[ExperimentConfig], Tuple[List[CaseResult], Series]]] = {
            "identity-convergence": self._identity_convergence,
            "theorem1": self._theorem1,
            "theorem2": self._theorem2,
            "counterexample": self._counterexample,
            "cutoff-limit": self._cutoff_limit,
            "balance-fuzz": self._balance_fuzz,
        }
        logger.info(f"Running experiment {exp_id} (seed={config.experiment.seed})")
        start = time.perf_counter()
        try:
            cases, series = runners[exp_id](config)
        except LabError as e:
            logger.error(f"Experiment {exp_id} failed: {e}", exc_info=True)
            cases = [CaseResult(name=exp_id, passed=False, error=f"{exp_id}: {type(e).__name__}: {e}")]
            series = []
            cases[0].wall_clock = time.perf_counter() - start

        report = RunReport(
            experiment=exp_id,
            passed=all(c.passed for c in cases),
            config=config,
            cases=cases,
            environment=EnvironmentStamp(
                python=sys.version.split()[0],
                numpy=np.__version__,
                scipy=scipy.__version__,
                pydantic=pydantic.VERSION,
            ),
        )
        directory = output_dir or config.output.dir or os.path.join(self.settings.output_dir, exp_id)
        self.write_outputs(report, series, directory)
        logger.info(f"Experiment {exp_id}: passed={report.passed}, outputs in {directory}")
        return report

    @staticmethod
    def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
        """Copy of `config` whose experiment seed is `seed` (marked as explicitly set)."""
        experiment = config.experiment.model_validate({"id": config.experiment.id, "seed": seed})
        return config.model_copy(update={"experiment": experiment})

    def write_outputs(self, report: RunReport, series: Series, directory: str) -> None:
        """Write the report, the series CSV and the timings CSV, each atomically."""
        out = report.config.output
        write_text_atomic(os.path.join(directory, out.report), report.model_dump_json(indent=2) + "\n")
        if series:
            write_text_atomic(os.path.join(directory, out.series), self.series_csv(series))
        timings = [{"case": c.name, "seconds": round(c.wall_clock, 6)} for c in report.cases]
        write_text_atomic(os.path.join(directory, out.timings), self.series_csv(timings))

    @staticmethod
    def series_csv(rows: Series) -> str:
        """Header row plus one line per row; None becomes an empty cell, floats keep full precision."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        columns = list(rows[0].keys())
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(row[c]) for c in columns])
        return buffer.getvalue()

    # Building blocks

    def _timed(self, name: str, body: Callable[[], CaseResult]) -> CaseResult:
        start = time.perf_counter()
        try:
            result = body()
        except LabError as e:
            logger.error(f"Case {name} failed: {e}", exc_info=True)
            result = CaseResult(name=name, passed=False, error=f"{name}: {type(e).__name__}: {e}")
        result.wall_clock = time.perf_counter() - start
        return result

    def _mesh_levels(self, config: ExperimentConfig) -> List[Mesh]:
        base = self.meshes.generate(config.mesh.generator, config.mesh.params)
        self.meshes.validate(base)
        return self.meshes.refine_levels(base, config.mesh.levels - 1)

    def _spectral(self, config: ExperimentConfig) -> SpectralService:
        return SpectralService(
            tol=config.spectral.tol,
            max_iter=config.spectral.max_iter,
            seed=config.experiment.seed,
            max_oracle_size=self.settings.max_oracle_size,
        )

    def _theorems(self, config: ExperimentConfig) -> TheoremService:
        return TheoremService(config.tolerances, operators=self.operators, identities=self.identities)

    def build_field(self, mesh: Mesh, config: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
        """Field described by the [field] section (kind 'eigenmode' is handled by the theorem-2 runner)."""
        spec = config.field
        if spec.kind == "smooth":
            return self.fields.smooth(mesh)
        if spec.kind == "winding":
            return self.fields.winding(mesh, spec.winding)
        if spec.kind == "gaussian-chirp":
            return self.fields.gaussian_chirp(mesh, spec.decay, spec.chirp)
        if spec.kind == "random":
            return self.fields.random_nonvanishing(mesh, rng)
        if spec.kind == "component-phase":
            return self.fields.component_phase(mesh, spec.phases)
        if spec.kind == "file":
            if not spec.path:
                raise InvalidArgumentError("field kind 'file' needs a path")
            return self.fields.load(spec.path, mesh.n_vertices)
        raise InvalidArgumentError(f"field kind '{spec.kind}' cannot be built directly")

    def build_system(self, mesh: Mesh, config: ExperimentConfig, f: Optional[np.ndarray]) -> SchrodingerSystem:
        """Assemble A and M and the potential described by the [potential] section."""
        spec = config.potential
        stiffness = self.operators.assemble_stiffness(mesh)
        mass = self.operators.assemble_mass(mesh)
        value = complex(spec.real, spec.imag)
        if spec.kind == "constant":
            potential = self.fields.constant_potential(mesh, value)
        elif spec.kind == "bump":
            potential = self.fields.bump_potential(mesh, value, spec.radius, spec.center)
        elif spec.kind == "file":
            if not spec.path:
                raise InvalidArgumentError("potential kind 'file' needs a path")
            potential = self.fields.load(spec.path, mesh.n_vertices)
        else:
            if f is None:
                raise InvalidArgumentError("inverse-design potential needs a field")
            potential = self.identities.inverse_design_potential(stiffness, mass, f)
        return self.operators.assemble_schrodinger(stiffness, mass, potential)

    # Experiments

    def _identity_convergence(self, config: ExperimentConfig):
        tol = config.tolerances
        start = time.perf_counter()
        rng = np.random.default_rng(config.experiment.seed)
        reports, balances = [], []
        for mesh in self._mesh_levels(config):
            f = self.build_field(mesh, config, rng)
            system = self.build_system(mesh, config, f)
            reports.append(self.identities.pointwise_identity_residual(mesh, system, f))
            balances.append(abs(self.identities.exact_balance(system, f)) / self.identities.balance_scale(system, f))
        orders = observed_orders([r.residual_l2 for r in reports], [r.h for r in reports])
        exact = all(r.residual_l2 <= tol.roundoff * max(r.scale, r.roundoff_scale) for r in reports)

        measurements = []
        series: Series = []
        for level, (r, balance, order) in enumerate(zip(reports, balances, orders)):
            measurements.append(measure(f"residual_l2[{level}]", r.residual_l2, "discretization"))
            measurements.append(measure(f"exact_balance_ratio[{level}]", balance, "balance", threshold=tol.balance))
            series.append({
                "level": level, "n_vertices": r.n_vertices, "h": r.h, "residual_l2": r.residual_l2,
                "residual_max": r.residual_max, "scale": r.scale, "balance_ratio": balance, "order": order,
            })
        low, high = tol.order_window()
        if exact:
            measurements.append(measure("exact_at_every_level", 1.0, "roundoff", passed=True))
        elif len(reports) < 2:
            measurements.append(measure("observed_order", float("nan"), "order", passed=False))
        else:
            for k, o in enumerate(orders):
                if k == 0:
                    continue
                passed = o is not None and low <= o <= high
                measurements.append(measure(f"observed_order[{k}]", float("nan") if o is None else o, "order",
                                            passed=passed))
        case = CaseResult(
            name=f"{config.mesh.generator}-{config.field.kind}",
            passed=_case_passed(measurements),
            measurements=measurements,
            identity=reports[-1],
        )
        case.wall_clock = time.perf_counter() - start
        return [case], series

    def _theorem1(self, config: ExperimentConfig):
        tol = config.tolerances
        theorems = self._theorems(config)
        mesh = self._mesh_levels(config)[-1]
        seed = config.experiment.seed
        series: Series = []

        def fuzz_case() -> CaseResult:
            stiffness = self.operators.assemble_stiffness(mesh)
            mass = self.operators.assemble_mass(mesh)
            signed, worst_balance, worst_gap = 0, 0.0, 0.0
            for case in range(config.fuzz.cases):
                rng = np.random.default_rng([seed, case])
                f = self.fields.random_nonvanishing(mesh, rng)
                v = self.identities.inverse_design_potential(stiffness, mass, f)
                system = self.operators.assemble_schrodinger(stiffness, mass, v)
                verdict = theorems.theorem1_check(mesh, system, f, self.identities.kernel_residual(system, f))
                density = np.imag(v) * np.abs(f) ** 2 * mass
                balance = abs(float(np.sum(density))) / max(float(np.sum(np.abs(density))), np.finfo(float).tiny)
                gap = 0.0
                scale = self.identities.identity_scale(system, f)
                for _ in range(config.cutoff.random):
                    chi = rng.uniform(0.0, 1.0, mesh.n_vertices)
                    gap = max(gap, self.identities.weak_identity(mesh, system, f, chi)[2] / scale)
                signed += int(verdict.hypotheses_satisfied)
                worst_balance = max(worst_balance, balance)
                worst_gap = max(worst_gap, gap)
                series.append({
                    "case": case, "im_v_min": float(np.imag(v).min()), "im_v_max": float(np.imag(v).max()),
                    "balance_ratio": balance, "weak_gap_ratio": gap, "signed": int(verdict.hypotheses_satisfied),
                })
            measurements = [
                measure("signed_nontrivial_cases", signed, "roundoff", threshold=0.0),
                measure("max_balance_ratio", worst_balance, "roundoff", threshold=tol.roundoff),
                measure("max_weak_identity_gap", worst_gap, "roundoff", threshold=tol.roundoff),
            ]
            return CaseResult(name="inverse-design-fuzz", passed=_case_passed(measurements), measurements=measurements)

        def potential_case() -> CaseResult:
            system = self.build_system(mesh, config, None)
            spectral = self._spectral(config)
            result = spectral.kernel_vector(system)
            verdict = theorems.theorem1_check(mesh, system, result.f, result.relative_sigma)
            measurements = [
                measure("relative_sigma", result.relative_sigma, "spectral"),
                measure("converged", float(result.converged), "info"),
                measure("hypotheses_satisfied", float(verdict.hypotheses_satisfied), "info",
                        passed=verdict.hypotheses_satisfied),
                measure("conclusion_verified", float(verdict.conclusion_verified), "info",
                        passed=verdict.conclusion_verified),
            ]
            if system.size <= spectral.max_oracle_size:
                oracle = spectral.dense_oracle(system)
                agreement = abs(oracle.sigma_min - result.sigma) / max(result.scale, oracle.sigma_max)
                measurements.append(measure("oracle_relative_sigma", oracle.relative_sigma, "spectral"))
                measurements.append(measure("oracle_agreement", agreement, "spectral",
                                            threshold=max(tol.oracle_agreement, 10 * config.spectral.tol)))
            return CaseResult(
                name=f"{config.potential.kind}-potential",
                passed=_case_passed(measurements),
                measurements=measurements,
                verdicts=[verdict],
            )

        cases = [self._timed("inverse-design-fuzz", fuzz_case)]
        if config.potential.kind != "inverse-design":
            cases.append(self._timed(f"{config.potential.kind}-potential", potential_case))
        return cases, series

    def _theorem2(self, config: ExperimentConfig):
        tol = config.tolerances
        theorems = self._theorems(config)
        rng = np.random.default_rng(config.experiment.seed)
        series: Series = []
        cases = []
        for level, mesh in enumerate(self._mesh_levels(config)):
            def body(mesh=mesh, level=level) -> CaseResult:
                measurements = []
                if config.field.kind == "eigenmode":
                    system = self.build_system(mesh, config, None)
                    shift = config.spectral.shift
                    if shift is None:
                        shift = float(np.real(system.potential).min()) - 1.0
                    eig = self._spectral(config).eigenpair_nearest(system, shift)
                    system = self.operators.shift_potential(system, complex(eig.eigenvalue).real)
                    f = eig.f
                    measurements.append(measure("eigenvalue", complex(eig.eigenvalue).real, "info"))
                    measurements.append(measure("converged", float(eig.converged), "info", passed=eig.converged))
                else:
                    f = self.build_field(mesh, config, rng)
                    system = self.build_system(mesh, config, f)
                residual = self.identities.kernel_residual(system, f)
                verdict, phase = theorems.theorem2_check(mesh, system, f)
                measurements.append(measure("kernel_residual", residual, "spectral"))
                measurements.append(measure("hypotheses_satisfied", float(verdict.hypotheses_satisfied), "info",
                                            passed=verdict.hypotheses_satisfied))
                measurements.append(measure("conclusion_verified", float(verdict.conclusion_verified), "info",
                                            passed=verdict.conclusion_verified))
                if phase is not None:
                    for k, r in enumerate(phase.component_ranges):
                        measurements.append(measure(f"phase_range[{k}]", r, "phase", threshold=tol.phase_range))
                    measurements.append(measure("phase_energy", phase.phase_energy, "phase",
                                                threshold=tol.phase_energy * phase.energy_scale))
                    if phase.n_components > 1:
                        spread = float(np.ptp(np.angle(np.asarray(f, dtype=complex))))
                        measurements.append(measure("global_phase_spread", spread, "info",
                                                    passed=spread > tol.phase_range))
                    series.append({
                        "level": level, "n_vertices": mesh.n_vertices, "components": phase.n_components,
                        "max_phase_range": max(phase.component_ranges), "phase_energy": phase.phase_energy,
                        "energy_scale": phase.energy_scale, "kernel_residual": residual,
                    })
                return CaseResult(
                    name=f"{mesh.kind}-level{level}",
                    passed=_case_passed(measurements),
                    measurements=measurements,
                    verdicts=[verdict],
                    phase=phase,
                )

            cases.append(self._timed(f"{mesh.kind}-level{level}", body))
        return cases, series

    def _counterexample(self, config: ExperimentConfig):
        tol = config.tolerances
        theorems = self._theorems(config)
        n0 = int(config.mesh.params.get("n", 64))
        radius = float(config.mesh.params.get("radius", 1.0))
        if config.mesh.generator != "circle":
            raise InvalidArgumentError("the counterexample lives on the circle generator")
        series: Series = []
        cases = []
        v_errors, sizes = [], []
        for level in range(config.mesh.levels):
            n = n0 * 2 ** level

            def body(n=n, level=level) -> CaseResult:
                bundle = theorems.counterexample_circle(n, radius)
                verdict, _ = theorems.theorem2_check(bundle.mesh, bundle.system, bundle.f)
                im_v, v_error = bundle.v_error
                winding = bundle.phase.windings[0].winding
                v_errors.append(v_error)
                sizes.append(bundle.mesh.max_edge_length)
                obstruction = verdict.obstruction.winding if verdict.obstruction is not None else 0
                # rounding in the designed V grows like 1/h^2
                im_threshold = tol.roundoff * (n / n0) ** 2
                measurements = [
                    measure("winding", winding, "info", passed=winding == 1),
                    measure("max_abs_im_v", im_v, "roundoff", threshold=im_threshold),
                    measure("max_abs_v_error", v_error, "discretization", threshold=tol.discretization),
                    measure("kernel_residual", bundle.kernel_residual, "roundoff", threshold=tol.roundoff),
                    measure("identity_residual_l2", bundle.identity.residual_l2, "roundoff",
                            threshold=tol.roundoff * max(bundle.identity.scale, bundle.identity.roundoff_scale)),
                    measure("phase_range", bundle.phase.component_ranges[0], "info"),
                    measure("theorem2_obstructed", float(not verdict.hypotheses_satisfied), "info",
                            passed=(not verdict.hypotheses_satisfied) and obstruction == 1),
                ]
                series.append({
                    "n": n, "h": bundle.mesh.max_edge_length, "max_abs_im_v": im_v, "max_abs_v_error": v_error,
                    "winding": winding, "kernel_residual": bundle.kernel_residual,
                    "identity_residual_l2": bundle.identity.residual_l2, "order": None,
                })
                return CaseResult(
                    name=f"circle-n{n}",
                    passed=_case_passed(measurements),
                    measurements=measurements,
                    verdicts=[verdict],
                    phase=bundle.phase,
                    identity=bundle.identity,
                )

            cases.append(self._timed(f"circle-n{n}", body))

        if len(v_errors) > 1:
            low, high = tol.order_window()
            orders = observed_orders(v_errors, sizes)
            for row, order in zip(series, orders):
                row["order"] = order
            order_measurements = [
                measure(f"v_error_order[{k}]", o, "order", passed=bool(low <= o <= high))
                for k, o in enumerate(orders) if o is not None
            ]
            cases.append(CaseResult(
                name="potential-convergence",
                passed=_case_passed(order_measurements),
                measurements=order_measurements,
            ))
        return cases, series

    def _cutoff_limit(self, config: ExperimentConfig):
        tol = config.tolerances
        rng = np.random.default_rng(config.experiment.seed)
        mesh = self._mesh_levels(config)[-1]
        series: Series = []

        def body() -> CaseResult:
            f = self.build_field(mesh, config, rng)
            system = self.build_system(mesh, config, f)
            center = config.cutoff.center
            if center is None:
                middle = mesh.bounding_box().mean(axis=1)
                center = int(np.argmin(np.linalg.norm(mesh.vertices - middle, axis=1)))
            radii = [(p, p + config.cutoff.width) for p in config.cutoff.plateaus]
            family = self.identities.cutoff_family(mesh, center, radii, config.cutoff.metric)
            result = self.identities.cutoff_limit_experiment(mesh, system, f, family, radii, tol.roundoff)
            scale = self.identities.identity_scale(system, f)
            for row in result.rows:
                series.append({
                    "n": row.index, "plateau": row.plateau, "ramp": row.ramp, "grad_sup": row.grad_sup,
                    "integral": row.integral, "lhs_re": row.lhs.re, "lhs_im": row.lhs.im, "gap": row.gap,
                })
            final = abs(result.rows[-1].integral) if result.rows else float("nan")
            measurements = [
                measure("monotone", float(result.monotone), "cutoff", passed=result.monotone),
                measure("final_term", final, "cutoff", threshold=tol.cutoff_final * result.scale),
                measure("limit", abs(result.limit), "roundoff", threshold=tol.roundoff * result.scale),
                measure("max_weak_identity_gap", max((r.gap for r in result.rows), default=0.0), "roundoff",
                        threshold=tol.roundoff * scale),
                measure("l2_mass", result.l2_mass, "info"),
                measure("gradient_energy", result.gradient_energy, "info"),
            ]
            return CaseResult(
                name=f"{mesh.kind}-cutoffs",
                passed=_case_passed(measurements),
                measurements=measurements,
                cutoff=result,
            )

        return [self._timed(f"{mesh.kind}-cutoffs", body)], series

    def _balance_fuzz(self, config: ExperimentConfig):
        tol = config.tolerances
        seed = config.experiment.seed
        generators = config.fuzz.generators
        series: Series = []
        systems = {}
        for name in generators:
            params = config.mesh.params if name == config.mesh.generator else FUZZ_MESHES.get(name)
            if params is None:
                raise InvalidArgumentError(f"no fuzz mesh for generator '{name}'")
            mesh = self.meshes.generate(name, params)
            systems[name] = (mesh, self.operators.build_system(mesh, 0.0))

        def one(case: int) -> Dict[str, object]:
            name = generators[case % len(generators)]
            mesh, system = systems[name]
            f = self.fields.random_complex(mesh, np.random.default_rng([seed, case]))
            value = self.identities.exact_balance(system, f)
            scale = self.identities.balance_scale(system, f)
            return {"case": case, "generator": name, "n_vertices": mesh.n_vertices, "abs_balance": abs(value),
                    "scale": scale, "ratio": abs(value) / scale}

        def body() -> CaseResult:
            workers = config.fuzz.workers or self.settings.workers
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    rows = list(pool.map(one, range(config.fuzz.cases)))
            else:
                rows = [one(case) for case in range(config.fuzz.cases)]
            series.extend(rows)
            worst = max(r["ratio"] for r in rows)
            violations = sum(1 for r in rows if r["ratio"] > tol.balance)
            measurements = [
                measure("max_balance_ratio", worst, "balance", threshold=tol.balance),
                measure("violations", violations, "balance", threshold=0.0),
                measure("cases", len(rows), "info"),
            ]
            return CaseResult(name="balance-fuzz", passed=_case_passed(measurements), measurements=measurements)

        return [self._timed("balance-fuzz", body)], series

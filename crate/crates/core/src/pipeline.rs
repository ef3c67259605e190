//! End-to-end runs: transcribe, solve, decompose, synthesize, integrate, and
//! the artifact files written by the command-line driver.

use crate::decompose::{check_invariants, decompose_trajectory, switch_schedule, ControlDecomposition, DecomposeMode, InvariantReport};
use crate::discretize::{make_grid, transcribe, TimeGrid, TranscribedProgram};
use crate::error::{Error, OracleError, Result};
use crate::exec::Exec;
use crate::oracle::{self, Comparison};
use crate::problem::{make_builtin, ProblemSpec};
use crate::rollout::{
    gaps, growth_check, integrate, mitigate_switching, synthesize_alpha, write_control_csv, write_series_csv, Gaps,
    GrowthCheck, MitigationMode, PiecewiseControl, RolloutResult, DEFAULT_SUBSTEPS,
};
use crate::solver::{auto_algorithm, solve, Algorithm, Formulation, SolveOptions, SolveResult, SolveStatus};
use crate::transform::ConvexityReport;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Solver settings accepted in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub tol_feasibility: f64,
    pub tol_objective: f64,
    pub algorithm: Algorithm,
    pub formulation: Formulation,
    pub random_init: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self {
            max_iterations: d.max_iterations,
            tol_feasibility: d.tol_feasibility,
            tol_objective: d.tol_objective,
            algorithm: d.algorithm,
            formulation: d.formulation,
            random_init: d.random_init,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    #[default]
    Hjb,
    Brute,
}

/// Oracle settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub mode: OracleMode,
    /// Grid points per axis.
    pub resolution: usize,
    /// Box `[lo, hi]` per axis; default `[-2, 2]` on every axis.
    pub box_lo: Option<Vec<f64>>,
    pub box_hi: Option<Vec<f64>>,
    /// Steps of the enumerated problem (and of the relaxed problem it is
    /// compared with) in brute mode.
    pub brute_k: usize,
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mode: OracleMode::Hjb,
            resolution: 201,
            box_lo: None,
            box_hi: None,
            brute_k: 8,
            tolerance: 2e-2,
        }
    }
}

/// One run, as read from JSON. Unknown keys are rejected.
///
/// Defaults: `k = 100`, `decompose = "closed_form"`, `substeps = 10`, no
/// mitigation, `seed = 0`, `convergence_k = [25, 50, 100, 200]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: String,
    /// Built-in tunables, see [`crate::problem::tunables`].
    pub overrides: Map<String, Value>,
    pub k: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub decompose: DecomposeMode,
    pub substeps: usize,
    pub mitigate: Option<MitigationMode>,
    pub out_dir: Option<PathBuf>,
    pub oracle: OracleConfig,
    pub convergence_k: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "vehicle2d".into(),
            overrides: Map::new(),
            k: 100,
            seed: 0,
            solver: SolverConfig::default(),
            decompose: DecomposeMode::ClosedForm,
            substeps: DEFAULT_SUBSTEPS,
            mitigate: None,
            out_dir: None,
            oracle: OracleConfig::default(),
            convergence_k: vec![25, 50, 100, 200],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be positive".into());
        }
        if self.convergence_k.windows(2).any(|w| w[1] <= w[0]) || self.convergence_k.contains(&0) {
            return bad("convergence_k must be positive and increasing".into());
        }
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        Ok(make_builtin(&self.problem, &self.overrides)?)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iterations: self.solver.max_iterations,
            tol_feasibility: self.solver.tol_feasibility,
            tol_objective: self.solver.tol_objective,
            algorithm: self.solver.algorithm,
            formulation: self.solver.formulation,
            random_seed: self.seed,
            random_init: self.solver.random_init,
            ..SolveOptions::default()
        }
    }

    /// Transcription of the configured problem on a uniform K-step grid.
    pub fn program(&self, k: usize) -> Result<TranscribedProgram> {
        let spec = self.spec()?;
        let grid = make_grid(spec.horizon.0, spec.horizon.1, k)?;
        Ok(transcribe(&spec, &grid, false)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub solve_s: f64,
    pub decompose_s: f64,
    pub rollout_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MitigationInfo {
    pub mode: MitigationMode,
    /// Heuristic modes carry no optimality guarantee.
    pub certified: bool,
    /// Realized cost minus the relaxed objective.
    pub excess_cost: f64,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub problem: String,
    pub k: usize,
    pub delta: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub realized_cost: f64,
    pub sup_gap: f64,
    pub cost_gap: f64,
    pub switch_count: usize,
    pub pieces: usize,
    pub max_atoms: usize,
    pub invariants: InvariantReport,
    pub growth: GrowthCheck,
    /// Largest `|x_i|` over the relaxed nodes, per coordinate.
    pub max_abs_state: Vec<f64>,
    /// Largest `c(t_k, x[k])` over relaxed nodes (`null` without a constraint).
    pub max_constraint_lax: Option<f64>,
    /// Largest `c` over the rollout's fine grid.
    pub max_constraint_rollout: Option<f64>,
    pub control_membership_violation: f64,
    pub mitigation: Option<MitigationInfo>,
    pub convexity: ConvexityReport,
    /// Wall-clock seconds; the only fields that vary between identical runs.
    pub timings: Timings,
}

/// Everything a solve run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub spec: ProblemSpec,
    pub grid: TimeGrid,
    pub result: SolveResult,
    pub decomposition: ControlDecomposition,
    pub control: PiecewiseControl,
    pub rollout: RolloutResult,
    pub gaps: Gaps,
    pub summary: Summary,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.result.converged()
    }
}

/// transcribe → solve → decompose → synthesize (or mitigate) → integrate.
pub fn run_solve(cfg: &RunConfig, exec: Exec) -> Result<RunOutcome> {
    cfg.validate()?;
    let program = cfg.program(cfg.k)?;
    let spec = program.spec.clone();
    let grid = program.grid.clone();
    let opts = cfg.solve_options();
    let algorithm = match opts.algorithm {
        Algorithm::Auto => auto_algorithm(&program),
        a => a,
    };

    let clock = Instant::now();
    let result = solve(&program, &opts)?;
    let solve_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let decomposition = decompose_trajectory(&spec, &grid, &result.x_star, &result.beta_star, cfg.decompose, exec)?;
    let invariants = check_invariants(&spec, &grid, &result.x_star, &result.beta_star, &decomposition, exec);
    let decompose_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let control = match cfg.mitigate {
        None => synthesize_alpha(&switch_schedule(&grid, &decomposition)),
        Some(mode) => mitigate_switching(&decomposition, &result.x_star, &spec, &grid, mode)?,
    };
    let rollout = integrate(&spec, &control, &spec.initial_state, cfg.substeps)?;
    let gaps = gaps(&result.x_star, result.objective, &rollout, &grid);
    let growth = growth_check(&spec, &rollout);
    let rollout_s = clock.elapsed().as_secs_f64();

    let n = spec.state_dim;
    let max_abs_state = (0..n)
        .map(|i| result.x_star.iter().map(|x| x[i].abs()).fold(0.0, f64::max))
        .collect();
    let (max_constraint_lax, max_constraint_rollout) = if spec.state_constraint.is_some() {
        let t = grid.nodes();
        let lax = result.x_star.iter().zip(t).map(|(x, &s)| spec.constraint(s, x)).fold(f64::NEG_INFINITY, f64::max);
        let fine = rollout
            .states
            .iter()
            .zip(&rollout.times)
            .map(|(x, &s)| spec.constraint(s, x))
            .fold(f64::NEG_INFINITY, f64::max);
        (Some(lax), Some(fine))
    } else {
        (None, None)
    };
    let summary = Summary {
        problem: cfg.problem.clone(),
        k: cfg.k,
        delta: grid.max_step(),
        seed: cfg.seed,
        algorithm,
        status: result.status,
        iterations: result.iterations,
        objective: result.objective,
        realized_cost: rollout.cost,
        sup_gap: gaps.sup_gap,
        cost_gap: gaps.cost_gap,
        switch_count: rollout.switch_count,
        pieces: control.pieces(),
        max_atoms: decomposition.max_atoms(),
        invariants,
        growth,
        max_abs_state,
        max_constraint_lax,
        max_constraint_rollout,
        control_membership_violation: control.membership_violation(&spec),
        mitigation: cfg.mitigate.map(|mode| MitigationInfo {
            mode,
            certified: false,
            excess_cost: rollout.cost - result.objective,
        }),
        convexity: program.convexity.clone(),
        timings: Timings {
            solve_s,
            decompose_s,
            rollout_s,
        },
    };
    Ok(RunOutcome {
        spec,
        grid,
        result,
        decomposition,
        control,
        rollout,
        gaps,
        summary,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `lax_trajectory.csv`, `control.csv`, `rollout.csv`, `summary.json`
/// and, for multi-agent problems, `agent_<l>_lax.csv` / `agent_<l>_rollout.csv`.
pub fn write_solve_artifacts(out: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_series_csv(&emit("lax_trajectory.csv".into()), "x", out.grid.nodes(), &out.result.x_star)?;
    write_control_csv(&emit("control.csv".into()), &out.control)?;
    write_series_csv(&emit("rollout.csv".into()), "x", &out.rollout.times, &out.rollout.states)?;
    if let Some(layout) = &out.spec.agents {
        let w = layout.states_per_agent;
        let slice = |rows: &[Vec<f64>], l: usize| -> Vec<Vec<f64>> { rows.iter().map(|x| x[l * w..(l + 1) * w].to_vec()).collect() };
        for l in 0..layout.count {
            write_series_csv(&emit(format!("agent_{}_lax.csv", l + 1)), "x", out.grid.nodes(), &slice(&out.result.x_star, l))?;
            write_series_csv(&emit(format!("agent_{}_rollout.csv", l + 1)), "x", &out.rollout.times, &slice(&out.rollout.states, l))?;
        }
    }
    write_json(&emit("summary.json".into()), &out.summary)?;
    Ok(written)
}

/// One row of a convergence sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub delta: f64,
    pub objective: f64,
    pub sup_gap: f64,
    pub cost_gap: f64,
    pub switch_count: usize,
    pub converged: bool,
    /// Worst `c` over relaxed nodes, when constrained.
    pub max_constraint: Option<f64>,
}

/// Solves the config once per `K` in `ks`; rows are solved through `exec`.
pub fn run_convergence(cfg: &RunConfig, ks: &[usize], exec: Exec) -> Result<Vec<ConvergenceRow>> {
    if ks.is_empty() || ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("K list must be non-empty and increasing".into()));
    }
    let rows = exec.map(ks.len(), |i| {
        let c = RunConfig {
            k: ks[i],
            ..cfg.clone()
        };
        // Rows already run in parallel; keep each one sequential inside.
        run_solve(&c, Exec::Sequential).map(|o| ConvergenceRow {
            k: ks[i],
            delta: o.summary.delta,
            objective: o.summary.objective,
            sup_gap: o.summary.sup_gap,
            cost_gap: o.summary.cost_gap,
            switch_count: o.summary.switch_count,
            converged: o.converged(),
            max_constraint: o.summary.max_constraint_lax,
        })
    });
    rows.into_iter().collect()
}

pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let wr = |w: &mut csv::Writer<std::fs::File>, rec: &[String]| w.write_record(rec).map_err(|e| Error::Io(e.into()));
    wr(
        &mut w,
        &["K", "delta", "objective", "sup_gap", "cost_gap", "switch_count"].map(String::from),
    )?;
    for r in rows {
        wr(
            &mut w,
            &[
                r.k.to_string(),
                r.delta.to_string(),
                r.objective.to_string(),
                r.sup_gap.to_string(),
                r.cost_gap.to_string(),
                r.switch_count.to_string(),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of `oracle.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub problem: String,
    pub mode: OracleMode,
    pub k: usize,
    pub lax_objective: f64,
    pub oracle_value: f64,
    pub comparison: Comparison,
    /// Brute mode: `lax ≤ brute + tolerance`.
    pub relaxation_ordering: Option<bool>,
    pub pass: bool,
}

/// Solves the relaxed problem and the selected oracle at the same `K`
/// (`cfg.k` for the grid, `cfg.oracle.brute_k` for enumeration).
pub fn run_oracle(cfg: &RunConfig, exec: Exec) -> Result<OracleReport> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let n = spec.state_dim;
    let k = match cfg.oracle.mode {
        OracleMode::Hjb => {
            if n > oracle::MAX_GRID_DIM {
                return Err(OracleError::Dimension(n).into());
            }
            cfg.k
        }
        OracleMode::Brute => {
            let k = cfg.oracle.brute_k;
            if k == 0 || k > oracle::MAX_BRUTE_STEPS {
                return Err(OracleError::Invalid(format!("brute_k must be in 1..={}", oracle::MAX_BRUTE_STEPS)).into());
            }
            k
        }
    };
    let program = cfg.program(k)?;
    let lax = solve(&program, &cfg.solve_options())?;
    let tol = cfg.oracle.tolerance;
    let (oracle_value, ordering) = match cfg.oracle.mode {
        OracleMode::Hjb => {
            let lo = cfg.oracle.box_lo.clone().unwrap_or_else(|| vec![-2.0; n]);
            let hi = cfg.oracle.box_hi.clone().unwrap_or_else(|| vec![2.0; n]);
            let vf = oracle::hjb_grid_solve(&spec, &lo, &hi, cfg.oracle.resolution, &program.grid, exec)?;
            if let Some(dir) = &cfg.out_dir {
                std::fs::create_dir_all(dir)?;
                oracle::write_value_csv(&dir.join("value_t0.csv"), &vf, 0)?;
            }
            (vf.value_at_start(&spec.initial_state), None)
        }
        OracleMode::Brute => {
            let sample = oracle::brute_force_sample(&spec, k);
            let r = oracle::brute_force(&spec, &program.grid, &sample, exec)?;
            (r.cost, Some(oracle::relaxation_holds(lax.objective, r.cost, tol)))
        }
    };
    let comparison = oracle::compare(lax.objective, oracle_value, tol);
    let pass = ordering.unwrap_or(comparison.pass);
    Ok(OracleReport {
        problem: cfg.problem.clone(),
        mode: cfg.oracle.mode,
        k,
        lax_objective: lax.objective,
        oracle_value,
        comparison,
        relaxation_ordering: ordering,
        pass,
    })
}

pub fn write_oracle_report(report: &OracleReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join("oracle.json");
    write_json(&p, report)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_rejection() {
        let c = RunConfig::from_json(r#"{"problem": "gear4d", "k": 40}"#).unwrap();
        assert_eq!((c.k, c.substeps, c.mitigate), (40, 10, None));
        assert!(matches!(RunConfig::from_json(r#"{"problem": "gear4d", "steps": 4}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"solver": {"tolerance": 1}}"#),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_json(r#"{"problem": "nope"}"#).is_err());
        let c = RunConfig::from_json(r#"{"mitigate": "max_likelihood", "decompose": "lp"}"#).unwrap();
        assert_eq!(c.mitigate, Some(MitigationMode::MaxLikelihood));
        assert_eq!(c.decompose, DecomposeMode::Lp);
    }

    #[test]
    fn vehicle_run_end_to_end() {
        let cfg = RunConfig {
            k: 50,
            ..RunConfig::default()
        };
        let out = run_solve(&cfg, Exec::available()).unwrap();
        assert!(out.converged());
        assert!((out.summary.objective - (1.25f64.sqrt() - 1.0)).abs() < 1e-3);
        assert!(out.summary.invariants.holds(), "{:?}", out.summary.invariants);
        assert!(out.summary.sup_gap < 1e-3);
        let dir = tempfile::tempdir().unwrap();
        let files = write_solve_artifacts(&out, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let lax = std::fs::read_to_string(dir.path().join("lax_trajectory.csv")).unwrap();
        assert_eq!(lax.lines().count(), 52);
    }
}

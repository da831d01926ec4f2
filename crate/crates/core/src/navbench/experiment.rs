use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::methods::{init_tlp, run_fp, run_hp, run_tlp, Method, MethodParams, RunRecord, Scenario, Task};
use super::world::{ConfigRow, GridWorld, InitialBelief};
use super::NavError;
use crate::hierarchy::HierarchyParams;
use crate::par::Execution;
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub successes: usize,
    pub success_ratio: f64,
    /// Actions over shortest path, for successful runs.
    pub path_cost: MeanSd,
    /// Final over initial shortest-path distance to the goal.
    pub relative_error: MeanSd,
    pub planning_seconds: MeanSd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { n: xs.len(), mean, sd: var.sqrt() }
    }
}

/// Success ratio, path relative cost and relative error.
pub fn metrics(records: &[RunRecord]) -> Summary {
    let successes = records.iter().filter(|r| r.success).count();
    let measurable: Vec<&RunRecord> = records.iter().filter(|r| r.sp_initial > 0 && r.sp_initial != usize::MAX).collect();
    let cost: Vec<f64> =
        measurable.iter().filter(|r| r.success).map(|r| r.actions as f64 / r.sp_initial as f64).collect();
    let error: Vec<f64> = measurable.iter().map(|r| r.sp_final as f64 / r.sp_initial as f64).collect();
    let planning: Vec<f64> = records.iter().map(|r| r.planning_seconds).collect();
    Summary {
        runs: records.len(),
        successes,
        success_ratio: if records.is_empty() { 0.0 } else { successes as f64 / records.len() as f64 },
        path_cost: MeanSd::of(&cost),
        relative_error: MeanSd::of(&error),
        planning_seconds: MeanSd::of(&planning),
    }
}

/// Task pairs with the start and goal drawn from two different buildings.
pub fn sample_tasks(world: &GridWorld, runs: usize, seed: u64) -> Vec<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = world.config.num_buildings;
    let by_building: Vec<Vec<usize>> = (0..nb).map(|b| world.cells_of_building(b)).collect();
    let mut tasks = Vec::with_capacity(runs);
    while tasks.len() < runs {
        let (bs, bg) = if nb > 1 {
            let mut ids: Vec<usize> = (0..nb).collect();
            ids.shuffle(&mut rng);
            (ids[0], ids[1])
        } else {
            (0, 0)
        };
        let start = by_building[bs][rng.gen_range(0..by_building[bs].len())];
        let goal = by_building[bg][rng.gen_range(0..by_building[bg].len())];
        if start != goal {
            tasks.push(Task { start, goal });
        }
    }
    tasks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub runs: usize,
    pub master_seed: u64,
    pub methods: Vec<Method>,
    pub hierarchy: HierarchyParams,
    #[serde(skip)]
    pub execution: Execution,
}

impl ExperimentParams {
    pub fn new(runs: usize, master_seed: u64) -> Self {
        Self {
            runs,
            master_seed,
            methods: Method::ALL.to_vec(),
            hierarchy: HierarchyParams::default(),
            execution: Execution::Parallel,
        }
    }
}

/// Methods evaluated for a configuration: FP is skipped in the size sweep and
/// TLP whenever the start is unknown.
pub fn methods_for(row: &ConfigRow, requested: &[Method]) -> Vec<Method> {
    requested
        .iter()
        .copied()
        .filter(|m| !(row.set == 3 && *m == Method::Fp))
        .filter(|m| !(row.config.initial_belief == InitialBelief::Uniform && *m == Method::Tlp))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub index: usize,
    pub row: ConfigRow,
    pub tasks: Vec<Task>,
    /// `records[run]` holds one record per evaluated method, in method order.
    pub records: Vec<Vec<RunRecord>>,
    pub init_seconds: Vec<(Method, f64)>,
}

impl ConfigResult {
    pub fn of_method(&self, m: Method) -> Vec<RunRecord> {
        self.records.iter().flatten().filter(|r| r.method == m).cloned().collect()
    }

    pub fn summary(&self, m: Method) -> Summary {
        metrics(&self.of_method(m))
    }

    pub fn methods(&self) -> Vec<Method> {
        self.records.first().map(|rs| rs.iter().map(|r| r.method).collect()).unwrap_or_default()
    }
}

/// Runs one configuration: generate, initialize each method once, then execute
/// every method on the same task stream.
pub fn run_config(index: usize, row: &ConfigRow, params: &ExperimentParams) -> Result<ConfigResult, NavError> {
    let idx = index.to_string();
    let sc = Scenario::generate(&row.config)?;
    let methods = methods_for(row, &params.methods);
    let tasks = sample_tasks(&sc.world, params.runs, derive_seed(params.master_seed, &[b"tasks", idx.as_bytes()]));

    let mut hp_params = params.hierarchy.clone();
    hp_params.seed = derive_seed(params.master_seed, &[b"hierarchy", idx.as_bytes()]);
    hp_params.execution = params.execution;
    hp_params.solver.execution = Execution::Sequential;
    let mp = MethodParams::from_hierarchy(&hp_params);

    let mut init_seconds = Vec::new();
    let hierarchy = if methods.contains(&Method::Hp) {
        let t0 = Instant::now();
        let h = sc.hierarchy(&hp_params)?;
        init_seconds.push((Method::Hp, t0.elapsed().as_secs_f64()));
        Some(h)
    } else {
        None
    };
    let tlp = if methods.contains(&Method::Tlp) {
        let seed = derive_seed(params.master_seed, &[b"tlp-init", idx.as_bytes()]);
        let init = init_tlp(&sc, &mp, seed, params.execution)?;
        init_seconds.push((Method::Tlp, init.init_seconds));
        Some(init)
    } else {
        None
    };

    let runs: Vec<usize> = (0..tasks.len()).collect();
    let records = params.execution.map(&runs, |&k| {
        let run_seed = derive_seed(params.master_seed, &[b"run", idx.as_bytes(), k.to_string().as_bytes()]);
        let task = tasks[k];
        methods
            .iter()
            .map(|m| match m {
                Method::Fp => run_fp(&sc, task, &mp, run_seed),
                Method::Tlp => run_tlp(&sc, tlp.as_ref().expect("initialized"), task, &mp, run_seed)
                    .expect("TLP runs only with a known start"),
                Method::Hp => run_hp(&sc, hierarchy.as_ref().expect("initialized"), task, &mp, run_seed),
            })
            .collect()
    });
    Ok(ConfigResult { index, row: row.clone(), tasks, records, init_seconds })
}

pub fn run_experiment(rows: &[ConfigRow], params: &ExperimentParams) -> Result<Vec<ConfigResult>, NavError> {
    rows.iter().enumerate().map(|(i, row)| run_config(i, row, params)).collect()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

/// Per-run table without timings; identical inputs give identical bytes.
pub fn write_runs<W: Write>(results: &[ConfigResult], w: W) -> Result<(), NavError> {
    let mut out = csv_writer(w);
    out.write_record([
        "config", "set", "dims", "sigma", "initial_belief", "run", "method", "initial", "goal", "success", "actions",
        "sp_initial", "sp_final", "note",
    ])?;
    for res in results {
        let cfg = &res.row.config;
        let (s, r, b) = cfg.dims();
        for (k, recs) in res.records.iter().enumerate() {
            for rec in recs {
                out.write_record([
                    res.index.to_string(),
                    res.row.set.to_string(),
                    format!("{s}x{r}x{b}"),
                    cfg.kernel_sigma.to_string(),
                    format!("{:?}", cfg.initial_belief),
                    k.to_string(),
                    rec.method.to_string(),
                    rec.initial.to_string(),
                    rec.goal.to_string(),
                    rec.success.to_string(),
                    rec.actions.to_string(),
                    rec.sp_initial.to_string(),
                    rec.sp_final.to_string(),
                    rec.note.clone(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per configuration and method.
pub fn write_summary<W: Write>(results: &[ConfigResult], w: W) -> Result<(), NavError> {
    let mut out = csv_writer(w);
    out.write_record([
        "config", "set", "dims", "sigma", "initial_belief", "method", "runs", "success_ratio", "path_cost_mean",
        "path_cost_sd", "relative_error_mean", "relative_error_sd", "planning_mean", "planning_sd", "init_seconds",
    ])?;
    for res in results {
        let cfg = &res.row.config;
        let (s, r, b) = cfg.dims();
        for m in res.methods() {
            let sm = res.summary(m);
            let init = res.init_seconds.iter().find(|(x, _)| *x == m).map(|(_, t)| t.to_string()).unwrap_or_default();
            out.write_record([
                res.index.to_string(),
                res.row.set.to_string(),
                format!("{s}x{r}x{b}"),
                cfg.kernel_sigma.to_string(),
                format!("{:?}", cfg.initial_belief),
                m.to_string(),
                sm.runs.to_string(),
                format!("{:.4}", sm.success_ratio),
                format!("{:.4}", sm.path_cost.mean),
                format!("{:.4}", sm.path_cost.sd),
                format!("{:.4}", sm.relative_error.mean),
                format!("{:.4}", sm.relative_error.sd),
                format!("{:.6}", sm.planning_seconds.mean),
                format!("{:.6}", sm.planning_seconds.sd),
                init,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Wall-clock planning time per run.
pub fn write_timings<W: Write>(results: &[ConfigResult], w: W) -> Result<(), NavError> {
    let mut out = csv_writer(w);
    out.write_record(["config", "run", "method", "planning_seconds"])?;
    for res in results {
        for (k, recs) in res.records.iter().enumerate() {
            for rec in recs {
                out.write_record([res.index.to_string(), k.to_string(), rec.method.to_string(), rec.planning_seconds.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

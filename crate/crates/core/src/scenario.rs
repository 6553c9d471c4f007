//! Scenario files and the batch pipeline behind the command-line front-end.
//!
//! A scenario is a flat `key = value` file; `#` starts a comment. Example:
//!
//! ```text
//! name = planning
//! kind = delay
//! d = 1.0
//! b_kernel = constant:1.0
//! run = riccati,decoupled,verify
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delay::{build_delay_problem, segment_refinement_study, DelayParams, Kernel};
use crate::error::{MfgError, Result};
use crate::fbs::{
    contraction_constant, solve_decoupled, solve_picard, LqmSolution, PICARD_MAX_ITER, PICARD_TOL,
};
use crate::instances::{random_dissipative_instance, random_psd_instance, ScalarData};
use crate::linops::{growth_bound, HilbertSpace, Operator, State};
use crate::path::{OperatorPath, TimeGrid};
use crate::problem::MfgProblem;
use crate::riccati::{p_bound, residual_tol, riccati_residual, solve_riccati_p};
use crate::verify::{
    check_standing_assumptions, check_uniqueness_conditions, monotonicity_probe, monte_carlo_consistency,
    shooting_solution, yosida_convergence_study, MCConfig, MCResult, Regime, VerificationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Riccati,
    Decoupled,
    Picard,
    Verify,
    MonteCarlo,
    YosidaStudy,
    RefineStudy,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Riccati,
        Stage::Decoupled,
        Stage::Picard,
        Stage::Verify,
        Stage::MonteCarlo,
        Stage::YosidaStudy,
        Stage::RefineStudy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Riccati => "riccati",
            Stage::Decoupled => "decoupled",
            Stage::Picard => "picard",
            Stage::Verify => "verify",
            Stage::MonteCarlo => "montecarlo",
            Stage::YosidaStudy => "yosida_study",
            Stage::RefineStudy => "refine_study",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| MfgError::Config(format!("unknown stage {s:?}")))
    }
}

/// Problem data given entry by entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitData {
    pub weights: Vec<f64>,
    pub a: Operator,
    pub b: Operator,
    pub q: Operator,
    pub qbar: Operator,
    pub qt: Operator,
    pub qbart: Operator,
    pub r: Operator,
    pub s: Operator,
    pub st: Operator,
    pub sigma: Operator,
    pub z0: State,
    pub c: State,
    pub ct: State,
    pub horizon: f64,
}

impl ExplicitData {
    pub fn build(&self) -> Result<MfgProblem> {
        let problem = MfgProblem {
            space: HilbertSpace::new(self.weights.clone())?,
            a: self.a.clone(),
            b: self.b.clone(),
            q: self.q.clone(),
            qbar: self.qbar.clone(),
            qt: self.qt.clone(),
            qbart: self.qbart.clone(),
            r: self.r.clone(),
            s: self.s.clone(),
            st: self.st.clone(),
            sigma: self.sigma.clone(),
            horizon: self.horizon,
            z0: self.z0.clone(),
            affine_c: self.c.clone(),
            affine_ct: self.ct.clone(),
            r_eps: 1e-9,
        };
        problem.check_structure()?;
        Ok(problem)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Scalar(ScalarData),
    RandomPsd { dim: usize, horizon: f64, dissipative: bool },
    Delay(DelayParams),
    Explicit(Box<ExplicitData>),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Scalar(_) => "scalar",
            Model::RandomPsd { .. } => "random_psd",
            Model::Delay(_) => "delay",
            Model::Explicit(_) => "explicit",
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            Model::Scalar(d) => d.horizon,
            Model::RandomPsd { horizon, .. } => *horizon,
            Model::Delay(p) => p.horizon,
            Model::Explicit(e) => e.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: Model,
    pub run: Vec<Stage>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Grid steps; `None` uses [`TimeGrid::default_for`].
    pub n_steps: Option<usize>,
    pub mc_paths: usize,
    pub mc_steps: usize,
    pub yosida_ns: Vec<f64>,
    pub refine_segs: Vec<usize>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Tolerance of the assumption checks.
    pub tol: f64,
}

impl Scenario {
    pub fn new(name: &str, model: Model) -> Self {
        let yosida_ns = match model {
            Model::Delay(_) => vec![50.0, 200.0, 800.0],
            _ => vec![10.0, 100.0, 1000.0],
        };
        Self {
            name: name.to_string(),
            model,
            run: vec![Stage::Riccati, Stage::Decoupled, Stage::Verify],
            output_dir: PathBuf::from("out"),
            seed: 0,
            n_steps: None,
            mc_paths: 2000,
            mc_steps: 0,
            yosida_ns,
            refine_segs: vec![4, 8, 16, 32],
            picard_tol: PICARD_TOL,
            picard_max_iter: PICARD_MAX_ITER,
            tol: 1e-10,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let horizon = self.model.horizon();
        match self.n_steps {
            Some(n) => TimeGrid::new(horizon, n),
            None => TimeGrid::default_for(horizon),
        }
    }

    pub fn problem(&self) -> Result<MfgProblem> {
        match &self.model {
            Model::Scalar(d) => Ok(d.build()),
            Model::RandomPsd { dim, horizon, dissipative } => {
                let mut rng = ChaCha8Rng::seed_from_u64(split_seed(self.seed, "instance", 0));
                Ok(if *dissipative {
                    random_dissipative_instance(&mut rng, *dim, *horizon)
                } else {
                    random_psd_instance(&mut rng, *dim, *horizon)
                })
            }
            Model::Delay(p) => build_delay_problem(p),
            Model::Explicit(e) => e.build(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(n) = self.n_steps {
            if n < 2 {
                return Err(MfgError::Config("n_steps must be ≥ 2".into()));
            }
        }
        let horizon = self.model.horizon();
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(MfgError::Config(format!("T must be positive, got {horizon}")));
        }
        if self.run.contains(&Stage::MonteCarlo) && self.mc_paths < 2 {
            return Err(MfgError::Config("mc_paths must be ≥ 2".into()));
        }
        if self.run.contains(&Stage::RefineStudy) && !matches!(self.model, Model::Delay(_)) {
            return Err(MfgError::Config("refine_study needs kind = delay".into()));
        }
        if let Model::RandomPsd { dim, .. } = self.model {
            if dim == 0 {
                return Err(MfgError::Config("dim must be ≥ 1".into()));
            }
        }
        if let Model::Delay(p) = &self.model {
            p.validate().map_err(|e| MfgError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Sub-seed for a named consumer of randomness.
pub fn split_seed(seed: u64, stage: &str, index: u64) -> u64 {
    // FNV-1a of the stage name selects the stream
    let tag = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag ^ index);
    rng.next_u64()
}

const COMMON_KEYS: &[&str] = &[
    "name",
    "kind",
    "run",
    "out",
    "seed",
    "steps",
    "T",
    "mc_paths",
    "mc_steps",
    "yosida_ns",
    "refine_segs",
    "picard_tol",
    "picard_max_iter",
    "tol",
];
const SCALAR_KEYS: &[&str] = &["a", "b", "r", "q", "qbar", "qt", "qbart", "s", "st", "sigma", "z0", "c", "ct"];
const RANDOM_KEYS: &[&str] = &["dim", "dissipative"];
const DELAY_KEYS: &[&str] = &[
    "d", "b_kernel", "sigma", "r_cost", "beta", "eta", "gamma", "k0", "delta_past", "n_seg",
];
const EXPLICIT_KEYS: &[&str] = &[
    "weights", "a", "b", "q", "qbar", "qt", "qbart", "r", "s", "st", "sigma", "z0", "c", "ct",
];

/// Key/value pairs of a scenario file in order of appearance.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| MfgError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(MfgError::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    /// Replaces or adds a value, as done by parameter sweeps.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, expected: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| MfgError::Config(format!("key `{key}`: expected {expected}, got {v:?}")))
            })
            .transpose()
    }

    fn real(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.typed(key, "a real number")?.unwrap_or(default))
    }

    fn required_real(&self, key: &str) -> Result<f64> {
        self.typed(key, "a real number")?
            .ok_or_else(|| MfgError::Config(format!("missing required key `{key}`")))
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v: Option<i64> = self.typed(key, "an integer")?;
        match v {
            None => Ok(default),
            Some(n) if n < 0 => Err(MfgError::Config(format!("key `{key}`: expected a nonnegative integer, got {n}"))),
            Some(n) => Ok(n as usize),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, expected: &str) -> Result<Option<Vec<T>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse::<T>().map_err(|_| {
                            MfgError::Config(format!("key `{key}`: expected a comma-separated list of {expected}"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| MfgError::Config(format!("key `{key}`: expected space-separated reals")))
            })
            .transpose()
    }

    /// Rows separated by `;`, entries by whitespace.
    fn matrix(&self, key: &str) -> Result<Option<Operator>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let bad = || MfgError::Config(format!("key `{key}`: expected a matrix `a b; c d`"));
        let rows: Vec<Vec<f64>> = v
            .split(';')
            .map(|row| row.split_whitespace().map(|s| s.parse::<f64>().map_err(|_| bad())).collect())
            .collect::<Result<_>>()?;
        let ncols = rows.first().map_or(0, Vec::len);
        if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err(bad());
        }
        Ok(Some(Operator::from_fn(rows.len(), ncols, |i, j| rows[i][j])))
    }
}

pub fn parse_config(text: &str) -> Result<Scenario> {
    scenario_from_raw(&RawConfig::parse(text)?)
}

pub fn scenario_from_raw(raw: &RawConfig) -> Result<Scenario> {
    let kind = raw.get("kind").ok_or_else(|| MfgError::Config("missing required key `kind`".into()))?;
    let kind_keys = match kind {
        "scalar" => SCALAR_KEYS,
        "random_psd" => RANDOM_KEYS,
        "delay" => DELAY_KEYS,
        "explicit" => EXPLICIT_KEYS,
        other => return Err(MfgError::Config(format!("key `kind`: unknown kind {other:?}"))),
    };
    if let Some(key) = raw.entries.keys().find(|k| !COMMON_KEYS.contains(&k.as_str()) && !kind_keys.contains(&k.as_str())) {
        return Err(MfgError::Config(format!("unknown key `{key}` for kind {kind}")));
    }
    let horizon = raw.real("T", 1.0)?;
    let model = match kind {
        "scalar" => {
            let d = ScalarData::default();
            Model::Scalar(ScalarData {
                a: raw.real("a", d.a)?,
                b: raw.real("b", d.b)?,
                r: raw.real("r", d.r)?,
                q: raw.real("q", d.q)?,
                qbar: raw.real("qbar", d.qbar)?,
                qt: raw.real("qt", d.qt)?,
                qbart: raw.real("qbart", d.qbart)?,
                s: raw.real("s", d.s)?,
                st: raw.real("st", d.st)?,
                sigma: raw.real("sigma", d.sigma)?,
                z0: raw.real("z0", d.z0)?,
                c: raw.real("c", d.c)?,
                ct: raw.real("ct", d.ct)?,
                horizon,
            })
        }
        "random_psd" => Model::RandomPsd {
            dim: raw
                .typed::<usize>("dim", "a positive integer")?
                .ok_or_else(|| MfgError::Config("missing required key `dim`".into()))?,
            horizon,
            dissipative: raw.typed("dissipative", "true or false")?.unwrap_or(false),
        },
        "delay" => {
            let d = DelayParams::default();
            let kernel = |key: &str, default: Kernel| -> Result<Kernel> {
                raw.get(key)
                    .map(|v| v.parse::<Kernel>().map_err(|e| MfgError::Config(format!("key `{key}`: {e}"))))
                    .unwrap_or(Ok(default))
            };
            Model::Delay(DelayParams {
                d: raw.required_real("d")?,
                kernel: kernel("b_kernel", d.kernel)?,
                sigma: raw.real("sigma", d.sigma)?,
                r_cost: raw.real("r_cost", d.r_cost)?,
                beta: raw.real("beta", d.beta)?,
                eta_price: raw.real("eta", d.eta_price)?,
                gamma: raw.real("gamma", d.gamma)?,
                horizon,
                k0: raw.real("k0", d.k0)?,
                past: kernel("delta_past", d.past)?,
                n_seg: raw.count("n_seg", d.n_seg)?,
            })
        }
        _ => {
            let required = |key: &str| -> Result<Operator> {
                raw.matrix(key)?.ok_or_else(|| MfgError::Config(format!("missing required key `{key}`")))
            };
            let a = required("a")?;
            let b = required("b")?;
            let r = required("r")?;
            let n = a.nrows();
            let op = |key: &str| -> Result<Operator> { Ok(raw.matrix(key)?.unwrap_or_else(|| Operator::zeros(n, n))) };
            let vec = |key: &str| -> Result<State> {
                Ok(raw.numbers(key)?.map(State::from_vec).unwrap_or_else(|| State::zeros(n)))
            };
            Model::Explicit(Box::new(ExplicitData {
                weights: raw.numbers("weights")?.unwrap_or_else(|| vec![1.0; n]),
                q: op("q")?,
                qbar: op("qbar")?,
                qt: op("qt")?,
                qbart: op("qbart")?,
                s: op("s")?,
                st: op("st")?,
                sigma: raw.matrix("sigma")?.unwrap_or_else(|| Operator::zeros(n, 1)),
                z0: vec("z0")?,
                c: vec("c")?,
                ct: vec("ct")?,
                a,
                b,
                r,
                horizon,
            }))
        }
    };
    let mut sc = Scenario::new(raw.get("name").unwrap_or("scenario"), model);
    if let Some(run) = raw.list::<String>("run", "stage names")? {
        sc.run = run.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(out) = raw.get("out") {
        sc.output_dir = PathBuf::from(out);
    }
    sc.seed = raw.typed("seed", "a 64-bit unsigned integer")?.unwrap_or(0);
    let steps: Option<i64> = raw.typed("steps", "an integer")?;
    if let Some(n) = steps {
        if n < 2 {
            return Err(MfgError::Config("n_steps must be ≥ 2".into()));
        }
        sc.n_steps = Some(n as usize);
    }
    sc.mc_paths = raw.count("mc_paths", sc.mc_paths)?;
    sc.mc_steps = raw.count("mc_steps", sc.mc_steps)?;
    if let Some(ns) = raw.list("yosida_ns", "reals")? {
        sc.yosida_ns = ns;
    }
    if let Some(segs) = raw.list("refine_segs", "integers")? {
        sc.refine_segs = segs;
    }
    sc.picard_tol = raw.real("picard_tol", sc.picard_tol)?;
    sc.picard_max_iter = raw.count("picard_max_iter", sc.picard_max_iter)?;
    sc.tol = raw.real("tol", sc.tol)?;
    sc.validate()?;
    Ok(sc)
}

fn fmt_list<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn fmt_numbers(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn fmt_matrix(m: &Operator) -> String {
    m.row_iter()
        .map(|row| fmt_numbers(&row.iter().copied().collect::<Vec<_>>()))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Text that [`parse_config`] maps back to `sc`.
pub fn render(sc: &Scenario) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("name", sc.name.clone());
    kv("kind", sc.model.kind().into());
    kv("run", sc.run.iter().map(Stage::as_str).collect::<Vec<_>>().join(","));
    kv("out", sc.output_dir.display().to_string());
    kv("seed", sc.seed.to_string());
    if let Some(n) = sc.n_steps {
        kv("steps", n.to_string());
    }
    kv("T", format!("{:?}", sc.model.horizon()));
    kv("mc_paths", sc.mc_paths.to_string());
    kv("mc_steps", sc.mc_steps.to_string());
    kv("yosida_ns", fmt_list(&sc.yosida_ns));
    kv("refine_segs", fmt_list(&sc.refine_segs));
    kv("picard_tol", format!("{:?}", sc.picard_tol));
    kv("picard_max_iter", sc.picard_max_iter.to_string());
    kv("tol", format!("{:?}", sc.tol));
    match &sc.model {
        Model::Scalar(d) => {
            for (k, v) in [
                ("a", d.a),
                ("b", d.b),
                ("r", d.r),
                ("q", d.q),
                ("qbar", d.qbar),
                ("qt", d.qt),
                ("qbart", d.qbart),
                ("s", d.s),
                ("st", d.st),
                ("sigma", d.sigma),
                ("z0", d.z0),
                ("c", d.c),
                ("ct", d.ct),
            ] {
                kv(k, format!("{v:?}"));
            }
        }
        Model::RandomPsd { dim, dissipative, .. } => {
            kv("dim", dim.to_string());
            kv("dissipative", dissipative.to_string());
        }
        Model::Delay(p) => {
            kv("d", format!("{:?}", p.d));
            kv("b_kernel", p.kernel.to_string());
            kv("sigma", format!("{:?}", p.sigma));
            kv("r_cost", format!("{:?}", p.r_cost));
            kv("beta", format!("{:?}", p.beta));
            kv("eta", format!("{:?}", p.eta_price));
            kv("gamma", format!("{:?}", p.gamma));
            kv("k0", format!("{:?}", p.k0));
            kv("delta_past", p.past.to_string());
            kv("n_seg", p.n_seg.to_string());
        }
        Model::Explicit(e) => {
            kv("weights", fmt_numbers(&e.weights));
            for (k, m) in [
                ("a", &e.a),
                ("b", &e.b),
                ("q", &e.q),
                ("qbar", &e.qbar),
                ("qt", &e.qt),
                ("qbart", &e.qbart),
                ("r", &e.r),
                ("s", &e.s),
                ("st", &e.st),
                ("sigma", &e.sigma),
            ] {
                kv(k, fmt_matrix(m));
            }
            for (k, v) in [("z0", &e.z0), ("c", &e.c), ("ct", &e.ct)] {
                kv(k, fmt_numbers(v.as_slice()));
            }
        }
    }
    out
}

/// Outcome of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Every stage contract held and no stage failed.
    pub success: bool,
    pub report: String,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.success {
            0
        } else {
            1
        }
    }
}

struct Pipeline<'a> {
    sc: &'a Scenario,
    problem: MfgProblem,
    grid: TimeGrid,
    p: Option<OperatorPath>,
    solution: Option<LqmSolution>,
    mc: Option<MCResult>,
    log: String,
    kv: Vec<(String, String)>,
    success: bool,
}

impl<'a> Pipeline<'a> {
    fn line(&mut self, text: String) {
        self.log.push_str(&text);
        self.log.push('\n');
    }

    fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.kv.push((key.to_string(), value.to_string()));
    }

    fn contract(&mut self, stage: Stage, name: &str, ok: bool, detail: String) {
        let status = if ok { "PASS" } else { "FAIL" };
        self.line(format!("[{status}] {}: {name} ({detail})", stage.as_str()));
        self.record(&format!("{}.{}", stage.as_str(), name.replace(' ', "_")), ok);
        self.success &= ok;
    }

    fn riccati(&mut self) -> Result<&OperatorPath> {
        if self.p.is_none() {
            self.p = Some(solve_riccati_p(&self.problem, &self.grid)?);
        }
        Ok(self.p.as_ref().expect("just computed"))
    }

    fn regime(&self) -> Result<Regime> {
        let gb = growth_bound(&self.problem.space, &self.problem.a, self.problem.horizon, 1000)?;
        Ok(check_uniqueness_conditions(&self.problem, &gb, self.sc.tol)?.regime.unwrap_or(Regime::None))
    }

    fn ensure_solution(&mut self) -> Result<()> {
        if self.solution.is_none() {
            let p = self.riccati()?.clone();
            let sol = match self.regime()? {
                Regime::Dissipative => solve_decoupled(&self.problem, &p)?,
                _ => solve_picard(&self.problem, &p, self.sc.picard_tol, self.sc.picard_max_iter)?,
            };
            self.line(format!("solution computed by the {} route", sol.method.as_str()));
            self.solution = Some(sol);
        }
        Ok(())
    }

    fn solution_contracts(&mut self, stage: Stage, sol: &LqmSolution) {
        let sp = &self.problem.space;
        let scale = 1.0 + sol.z.sup_norm(sp) + sol.r.sup_norm(sp);
        let tol = 1e-6 * scale;
        let d = &sol.diagnostics;
        self.contract(stage, "z mild residual", d.residual_z <= tol, format!("{:.3e}", d.residual_z));
        self.contract(stage, "r mild residual", d.residual_r <= tol, format!("{:.3e}", d.residual_r));
        self.record(&format!("{}.residual_z", stage.as_str()), format!("{:e}", d.residual_z));
        self.record(&format!("{}.residual_r", stage.as_str()), format!("{:e}", d.residual_r));
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let sc = self.sc;
        match stage {
            Stage::Riccati => {
                let problem = self.problem.clone();
                let p = self.riccati()?.clone();
                let sp = &problem.space;
                let residual = riccati_residual(&p, &problem)?;
                let tol = residual_tol(&problem);
                self.contract(stage, "mild residual", residual <= tol, format!("{residual:.3e} vs {tol:.3e}"));
                let gb = growth_bound(sp, &problem.a, problem.horizon, 1000)?;
                let bound = p_bound(&problem, &gb);
                let sup = p.sup_norm(sp);
                self.contract(stage, "a-priori bound", sup <= bound * (1.0 + 1e-6), format!("sup |P| = {sup:.6e}, bound {bound:.6e}"));
                self.record("riccati.p_sup", format!("{sup:e}"));
                self.record("riccati.p_bound", format!("{bound:e}"));
            }
            Stage::Decoupled => {
                let p = self.riccati()?.clone();
                let sol = solve_decoupled(&self.problem, &p)?;
                if let Some(cert) = &sol.diagnostics.eta_certificate {
                    self.line(format!(
                        "eta: beta_T = {:.6e}, tau = {:.6e}, radius = {:.6e}, segments = {}, max sweep ratio = {:.4}",
                        cert.beta_t,
                        cert.tau,
                        cert.radius_r,
                        cert.segments.len(),
                        cert.max_sweep_ratio
                    ));
                    self.record("eta.beta_t", format!("{:e}", cert.beta_t));
                    self.record("eta.segments", cert.segments.len());
                    let ok = cert.max_sweep_ratio <= 0.55;
                    self.contract(stage, "sweep ratio", ok, format!("{:.4}", cert.max_sweep_ratio));
                }
                self.solution_contracts(stage, &sol);
                self.cross_check(&sol);
                self.solution = Some(sol);
            }
            Stage::Picard => {
                let p = self.riccati()?.clone();
                let sol = solve_picard(&self.problem, &p, sc.picard_tol, sc.picard_max_iter)?;
                let d = &sol.diagnostics;
                if let Some(c) = &d.contraction {
                    self.line(format!("C_T = {:.6e} (contraction: {})", c.c_t, c.is_contraction));
                    self.record("picard.c_t", format!("{:e}", c.c_t));
                }
                let ratios: Vec<String> = d.contraction_ratios.iter().map(|r| format!("{r:.4}")).collect();
                self.line(format!("picard: {} sweeps, contraction ratios [{}]", d.iterations, ratios.join(", ")));
                self.record("picard.iterations", d.iterations);
                if let Some(ok) = d.ratio_check {
                    self.contract(stage, "ratio bound", ok, "ratios <= C_T + 0.05".into());
                }
                self.solution_contracts(stage, &sol);
                self.cross_check(&sol);
                self.solution = Some(sol);
            }
            Stage::Verify => {
                let gb = growth_bound(&self.problem.space, &self.problem.a, self.problem.horizon, 1000)?;
                let rep = check_standing_assumptions(&self.problem, sc.tol);
                let assumptions_ok = rep.all_passed();
                let uniq = check_uniqueness_conditions(&self.problem, &gb, sc.tol)?;
                let ct = contraction_constant(&self.problem, &gb)?;
                let full = rep.merge(uniq);
                self.log.push_str(&full.render_text());
                self.kv.extend(kv_pairs(&full, "verify"));
                self.line(format!("C_T = {:.6e}", ct.c_t));
                self.contract(stage, "standing assumptions", assumptions_ok, "sign and symmetry checks".into());
                if self.solution.is_some() || self.p.is_some() {
                    self.probe(full.regime)?;
                }
            }
            Stage::MonteCarlo => {
                self.ensure_solution()?;
                let sol = self.solution.clone().expect("ensured");
                let cfg = MCConfig { n_steps: sc.mc_steps, ..MCConfig::new(sc.mc_paths, split_seed(sc.seed, "montecarlo", 0)) };
                let mc = monte_carlo_consistency(&self.problem, &sol, &cfg)?;
                self.contract(
                    stage,
                    "mean tracks z",
                    mc.contract_ok,
                    format!("max deviation {:.3e}", mc.max_deviation),
                );
                self.line(format!("cost = {:.8e} +- {:.3e}", mc.cost.mean, mc.cost.stderr));
                self.record("montecarlo.cost", format!("{:e}", mc.cost.mean));
                self.record("montecarlo.cost_stderr", format!("{:e}", mc.cost.stderr));
                if let Some(v) = sol.value(&self.problem.space, 0.0, &self.problem.z0) {
                    let gap = (mc.cost.mean - v).abs();
                    let allowance = 3.0 * mc.cost.stderr + cfg.allowance * mc.step;
                    self.contract(stage, "cost matches value", gap <= allowance, format!("|J - v| = {gap:.3e}"));
                }
                self.mc = Some(mc);
            }
            Stage::YosidaStudy => {
                let p = self.riccati()?.clone();
                let study = yosida_convergence_study(&self.problem, &p, &sc.yosida_ns)?;
                for (n, g) in study.ns.iter().zip(&study.gaps) {
                    self.line(format!("yosida n = {n}: gap {g:.6e}"));
                }
                self.line(format!("yosida: last gap below 1e-4: {}", study.converged));
                self.record("yosida.converged", study.converged);
                self.contract(stage, "gaps non-increasing", study.monotone, format!("ratios {:?}", study.ratios));
            }
            Stage::RefineStudy => {
                let Model::Delay(params) = &sc.model else {
                    return Err(MfgError::Config("refine_study needs kind = delay".into()));
                };
                let study = segment_refinement_study(params, &sc.refine_segs)?;
                for (w, g) in study.segs.windows(2).zip(&study.gaps) {
                    self.line(format!("segments {} -> {}: gap {g:.6e}", w[0], w[1]));
                }
                self.contract(stage, "gaps non-increasing", study.is_monotone(), format!("ratios {:?}", study.ratios));
            }
        }
        Ok(())
    }

    fn cross_check(&mut self, sol: &LqmSolution) {
        let Some(other) = &self.solution else { return };
        if other.method == sol.method {
            return;
        }
        let sp = &self.problem.space;
        let gap = (0..sol.grid().len())
            .map(|k| sp.norm(&(&sol.z.values[k] - &other.z.values[k])) + sp.norm(&(&sol.r.values[k] - &other.r.values[k])))
            .fold(0.0, f64::max);
        let tol = 1e-6 * (1.0 + sp.norm(&self.problem.z0));
        let stage = if sol.method.as_str() == "picard" { Stage::Picard } else { Stage::Decoupled };
        self.contract(stage, "cross-method agreement", gap <= tol, format!("{gap:.3e}"));
    }

    /// Monotonicity identity on two shooting trajectories from `z0`.
    fn probe(&mut self, regime: Option<Regime>) -> Result<()> {
        let p = self.riccati()?.clone();
        let d = self.problem.dim();
        let base = match &self.solution {
            Some(s) => s.r.first().clone(),
            None => State::zeros(d),
        };
        let shift = State::from_element(d, 0.1);
        let a = shooting_solution(&self.problem, &p, &base)?;
        let b = shooting_solution(&self.problem, &p, &(&base + shift))?;
        let probe = monotonicity_probe(&self.problem, &a, &b, 1e-8)?;
        let scale = probe.w.max_abs().max(f64::MIN_POSITIVE);
        self.line(format!(
            "monotonicity identity: max |f' - w| = {:.3e} (relative {:.3e}), K = {:.3e}",
            probe.max_error,
            probe.max_error / scale,
            probe.k_const
        ));
        self.record("verify.monotonicity_k", format!("{:e}", probe.k_const));
        if regime == Some(Regime::Dissipative) {
            if let Some(chain) = probe.sign_chain {
                self.contract(
                    Stage::Verify,
                    "sign chain",
                    chain.holds,
                    format!("f(0) = {:.2e}, max f' = {:.2e}, terminal form = {:.2e}", chain.f0, chain.max_f_prime, chain.terminal_form),
                );
            }
        }
        Ok(())
    }
}

fn kv_pairs(rep: &VerificationReport, prefix: &str) -> Vec<(String, String)> {
    rep.render_key_values()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (format!("{prefix}.{k}"), v.to_string()))
        .collect()
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

fn solution_csv(space: &HilbertSpace, p: &OperatorPath, sol: Option<&LqmSolution>) -> String {
    let mut out = String::from("t");
    let dim = p.values[0].nrows();
    if sol.is_some() {
        for i in 0..dim {
            let _ = write!(out, ",z_{i}");
        }
        for i in 0..dim {
            let _ = write!(out, ",r_{i}");
        }
    }
    out.push_str(",P_norm,s\n");
    for k in 0..p.grid.len() {
        out.push_str(&num(p.grid.node(k)));
        if let Some(sol) = sol {
            for v in sol.z.values[k].iter().chain(sol.r.values[k].iter()) {
                out.push(',');
                out.push_str(&num(*v));
            }
        }
        let s = sol.and_then(|s| s.s.as_ref()).map_or(f64::NAN, |s| s.values[k]);
        let _ = writeln!(out, ",{},{}", num(space.op_norm(&p.values[k])), num(s));
    }
    out
}

fn mc_csv(mc: &MCResult) -> String {
    let dim = mc.mean_path.dim();
    let mut out = String::from("t");
    for i in 0..dim {
        let _ = write!(out, ",mean_{i}");
    }
    out.push_str(",stderr\n");
    let grid = mc.mean_path.grid;
    for k in 0..grid.len() {
        out.push_str(&num(grid.node(k)));
        for v in mc.mean_path.values[k].iter() {
            out.push(',');
            out.push_str(&num(*v));
        }
        let _ = writeln!(out, ",{}", num(mc.stderr_path.values[k]));
    }
    out
}

/// Runs the stages in order and writes `solution.csv`, `report.txt` and,
/// when simulated, `mc.csv` into the output directory.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutcome> {
    fs::create_dir_all(&sc.output_dir)
        .map_err(|e| MfgError::Config(format!("cannot create {}: {e}", sc.output_dir.display())))?;
    let mut header = String::new();
    let _ = writeln!(header, "scenario = {}", sc.name);
    let _ = writeln!(header, "kind = {}", sc.model.kind());
    let _ = writeln!(header, "seed = {}", sc.seed);

    let setup = sc.problem().and_then(|problem| Ok((problem, sc.grid()?)));
    let (problem, grid) = match setup {
        Ok(v) => v,
        Err(e) => {
            let report = format!("{header}error: {e}\nstatus = failed\n");
            let path = write_file(&sc.output_dir, "report.txt", &report)?;
            return Ok(RunOutcome { success: false, report, files: vec![path] });
        }
    };
    let _ = writeln!(header, "dim = {}", problem.dim());
    let _ = writeln!(header, "steps = {}", grid.n_steps);
    let mut pl = Pipeline {
        sc,
        problem,
        grid,
        p: None,
        solution: None,
        mc: None,
        log: header,
        kv: Vec::new(),
        success: true,
    };
    for &stage in &sc.run {
        pl.line(format!("== {}", stage.as_str()));
        if let Err(e) = pl.run_stage(stage) {
            pl.line(format!("error in stage {}: {e}", stage.as_str()));
            pl.record(&format!("{}.error", stage.as_str()), e.to_string().replace('\n', " "));
            pl.success = false;
            break;
        }
    }
    pl.line(format!("status = {}", if pl.success { "ok" } else { "failed" }));
    let mut report = pl.log.clone();
    report.push_str("\n# key=value\n");
    for (k, v) in &pl.kv {
        let _ = writeln!(report, "{k}={v}");
    }
    let mut files = Vec::new();
    if let Some(p) = &pl.p {
        files.push(write_file(&sc.output_dir, "solution.csv", &solution_csv(&pl.problem.space, p, pl.solution.as_ref()))?);
    }
    if let Some(mc) = &pl.mc {
        files.push(write_file(&sc.output_dir, "mc.csv", &mc_csv(mc))?);
    }
    files.push(write_file(&sc.output_dir, "report.txt", &report)?);
    Ok(RunOutcome { success: pl.success, report, files })
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| MfgError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scalar_scenario() {
        let sc = parse_config("kind = scalar\nT = 1\nq = 2\nsteps = 1000\n").unwrap();
        assert_eq!(sc.n_steps, Some(1000));
        let Model::Scalar(d) = sc.model else { panic!() };
        assert_eq!(d.q, 2.0);
        assert_eq!(d.r, 1.0);
    }

    #[test]
    fn config_errors_name_the_key() {
        let err = parse_config("kind = delay\n").unwrap_err().to_string();
        assert!(err.contains("`d`"), "{err}");
        let err = parse_config("kind = scalar\nsteps = -5\n").unwrap_err().to_string();
        assert!(err.contains("n_steps must be ≥ 2"), "{err}");
        let err = parse_config("kind = scalar\nq = two\n").unwrap_err().to_string();
        assert!(err.contains("`q`") && err.contains("real"), "{err}");
        let err = parse_config("kind = scalar\nq = 1\nq = 2\n").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        let err = parse_config("kind = scalar\nqq = 1\n").unwrap_err().to_string();
        assert!(err.contains("unknown key `qq`"), "{err}");
        assert!(parse_config("kind = scalar\nrun = riccati,solve\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut sc = parse_config("kind = delay\nd = 0.5\nb_kernel = exponential:1.0:2.0\nrun = riccati,refine_study\n").unwrap();
        sc.seed = 99;
        assert_eq!(parse_config(&render(&sc)).unwrap(), sc);
        let text = "kind = explicit\nweights = 1 2\na = 0 1; -1 0\nb = 1; 0\nr = 1\nq = 1 0; 0 1\nz0 = 1 -1\n";
        let sc = parse_config(text).unwrap();
        assert_eq!(parse_config(&render(&sc)).unwrap(), sc);
    }

    #[test]
    fn seeds_split_by_stage() {
        assert_ne!(split_seed(1, "montecarlo", 0), split_seed(1, "instance", 0));
        assert_ne!(split_seed(1, "montecarlo", 0), split_seed(1, "montecarlo", 1));
        assert_eq!(split_seed(7, "instance", 0), split_seed(7, "instance", 0));
    }
}

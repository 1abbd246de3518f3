//! Experiment suites: named sweeps over one axis, several agent
//! configurations per axis point, repeated runs and aggregate tables.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{AgentSpec, SelectHeuristic};
use crate::blackboard::SyncMode;
use crate::runner::{run, GenSpec, LevelSource, MetricsReport, RunConfig, RunError};

/// Threshold used by `high` and `low` when none is given.
pub const DEFAULT_THRESHOLD: u32 = 5;
pub const DEFAULT_REPS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("empty agent list")]
    EmptyTeam,
    #[error("unknown agent kind `{0}`")]
    UnknownAgent(String),
    #[error("bad number in `{0}`")]
    BadNumber(String),
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("bad axis value `{value}` for suite {suite}")]
    BadAxis { suite: &'static str, value: String },
    #[error("suite {0} needs a generated level")]
    NeedsGenerator(&'static str),
    #[error("repetitions must be at least 1")]
    NoReps,
    #[error("axis must not be empty")]
    EmptyAxis,
}

/// Parses one agent kind: `random`, `high[:T]`, `low[:T]`, `eager`, `explorer`.
pub fn parse_heuristic(s: &str) -> Result<SelectHeuristic, SpecError> {
    let s = s.trim();
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (s, None),
    };
    let threshold = || -> Result<u32, SpecError> {
        match arg {
            None => Ok(DEFAULT_THRESHOLD),
            Some(a) => a.parse().map_err(|_| SpecError::BadNumber(s.to_string())),
        }
    };
    let plain = |h: SelectHeuristic| {
        if arg.is_some() {
            Err(SpecError::UnknownAgent(s.to_string()))
        } else {
            Ok(h)
        }
    };
    match kind {
        "random" => plain(SelectHeuristic::Random),
        "eager" => plain(SelectHeuristic::Eager),
        "explorer" => plain(SelectHeuristic::Explorer),
        "high" => Ok(SelectHeuristic::HighValue(threshold()?)),
        "low" => Ok(SelectHeuristic::LowValue(threshold()?)),
        _ => Err(SpecError::UnknownAgent(s.to_string())),
    }
}

/// Parses a team such as `high:5,low:5`, `eager*3` or `explorer+low:5`.
/// Both `,` and `+` separate agents; `*N` repeats one.
pub fn parse_team(spec: &str) -> Result<Vec<AgentSpec>, SpecError> {
    let mut team = Vec::new();
    for item in spec
        .split([',', '+'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        let (kind, count) = match item.split_once('*') {
            Some((k, n)) => (
                k,
                n.trim()
                    .parse::<usize>()
                    .map_err(|_| SpecError::BadNumber(item.to_string()))?,
            ),
            None => (item, 1),
        };
        let h = parse_heuristic(kind)?;
        team.extend(std::iter::repeat_n(AgentSpec::new(h), count));
    }
    if team.is_empty() {
        return Err(SpecError::EmptyTeam);
    }
    Ok(team)
}

/// Canonical text for a team, e.g. `high:5+low:5`.
pub fn team_label(team: &[AgentSpec]) -> String {
    team.iter()
        .map(|a| a.select.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    SizeSweep,
    SyncCompare,
    TeamCompose,
    ViewDistance,
    Distant,
    Chained,
    MultiConnection,
    AgentsCount,
    SingleRun,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::SizeSweep,
        Suite::SyncCompare,
        Suite::TeamCompose,
        Suite::ViewDistance,
        Suite::Distant,
        Suite::Chained,
        Suite::MultiConnection,
        Suite::AgentsCount,
        Suite::SingleRun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::SizeSweep => "size-sweep",
            Suite::SyncCompare => "sync-compare",
            Suite::TeamCompose => "team-compose",
            Suite::ViewDistance => "view-distance",
            Suite::Distant => "distant",
            Suite::Chained => "chained",
            Suite::MultiConnection => "multi-connection",
            Suite::AgentsCount => "agents-count",
            Suite::SingleRun => "single-run",
        }
    }

    /// Axis used when none is given on the command line.
    pub fn default_axis(self) -> Vec<String> {
        let v: &[&str] = match self {
            Suite::SizeSweep => &["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"],
            Suite::SyncCompare => &["1", "5", "25", "100"],
            Suite::TeamCompose => &["high:5+low:5", "explorer+low:5+high:5", "eager+eager"],
            Suite::ViewDistance => &["4", "6", "8", "10", "12"],
            Suite::Distant => &["2", "4", "6", "8", "10"],
            Suite::Chained => &["0", "1", "2", "3"],
            Suite::MultiConnection => &["0", "2", "4", "6"],
            Suite::AgentsCount => &["1", "2", "3", "4", "5"],
            Suite::SingleRun => &["base"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Level scale used when the base configuration does not name one.
    pub fn default_scale(self) -> u32 {
        match self {
            Suite::Distant | Suite::Chained | Suite::MultiConnection => 3,
            Suite::SyncCompare => 5,
            _ => 10,
        }
    }

    /// What the axis values mean, for table headers.
    pub fn axis_name(self) -> &'static str {
        match self {
            Suite::SizeSweep => "scale",
            Suite::SyncCompare => "sync_every",
            Suite::TeamCompose => "team",
            Suite::ViewDistance => "view",
            Suite::Distant => "distant",
            Suite::Chained => "hidden",
            Suite::MultiConnection => "multi",
            Suite::AgentsCount => "agents",
            Suite::SingleRun => "run",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| SpecError::UnknownSuite(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub suite: Suite,
    /// View, budgets, sync cadence and tax are taken from here. A generated
    /// level source also fixes the scale for suites whose axis is not the scale.
    pub base: RunConfig,
    /// Replaces the default two-agent team of the MA-Basic and MA-Extended
    /// configurations.
    pub team: Option<Vec<AgentSpec>>,
    pub axis: Vec<String>,
    /// One seed per repetition. The size sweep runs axis index `i` with
    /// `seed + i`; the other suites keep the level fixed along the axis.
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    /// Default axis, `reps` seeds counting up from `base.seed`.
    pub fn new(suite: Suite, base: RunConfig, reps: u32) -> Self {
        let seeds = (0..reps as u64).map(|k| base.seed + k).collect();
        ExperimentSpec {
            suite,
            base,
            team: None,
            axis: suite.default_axis(),
            seeds,
        }
    }

    pub fn reps(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.axis.is_empty() {
            return Err(SpecError::EmptyAxis);
        }
        if self.seeds.is_empty() {
            return Err(SpecError::NoReps);
        }
        self.configs().map(|_| ())
    }

    fn scale(&self) -> u32 {
        match &self.base.level {
            LevelSource::Generated(g) => g.scale,
            LevelSource::Given(_) => self.suite.default_scale(),
        }
    }

    fn needs_generator(&self) -> bool {
        matches!(
            self.suite,
            Suite::SizeSweep | Suite::Distant | Suite::Chained | Suite::MultiConnection
        )
    }

    fn ma_team(&self) -> Vec<AgentSpec> {
        self.team.clone().unwrap_or_else(|| {
            vec![
                AgentSpec::new(SelectHeuristic::HighValue(DEFAULT_THRESHOLD)),
                AgentSpec::new(SelectHeuristic::LowValue(DEFAULT_THRESHOLD)),
            ]
        })
    }

    /// The configurations compared at each axis point, as (label, team, sync).
    fn configs(&self) -> Result<Vec<(String, Vec<AgentSpec>, SyncMode)>, SpecError> {
        if self.needs_generator() && matches!(self.base.level, LevelSource::Given(_)) {
            return Err(SpecError::NeedsGenerator(self.suite.name()));
        }
        let single = || {
            (
                "single".to_string(),
                vec![AgentSpec::new(SelectHeuristic::Random)],
                SyncMode::Basic,
            )
        };
        let basic = || ("ma-basic".to_string(), self.ma_team(), SyncMode::Basic);
        let extended = || {
            (
                "ma-extended".to_string(),
                self.ma_team(),
                SyncMode::Extended,
            )
        };
        let eager = || {
            (
                "ma-eager".to_string(),
                vec![AgentSpec::new(SelectHeuristic::Eager); 2],
                SyncMode::Extended,
            )
        };
        Ok(match self.suite {
            Suite::SizeSweep | Suite::Distant | Suite::MultiConnection => {
                vec![single(), basic(), extended()]
            }
            Suite::Chained => vec![single(), eager(), extended()],
            Suite::ViewDistance => vec![basic(), extended(), eager()],
            Suite::SyncCompare => vec![basic(), extended()],
            Suite::TeamCompose => vec![("team".to_string(), Vec::new(), self.base.sync_mode)],
            Suite::AgentsCount => vec![("eager".to_string(), Vec::new(), SyncMode::Extended)],
            Suite::SingleRun => vec![(
                team_label(&self.base.agents),
                self.base.agents.clone(),
                self.base.sync_mode,
            )],
        })
    }

    /// Every run of the suite in output order.
    pub fn plan(&self) -> Result<Vec<PlannedRun>, SpecError> {
        self.validate()?;
        let configs = self.configs()?;
        let suite = self.suite.name();
        let bad = |v: &str| SpecError::BadAxis {
            suite,
            value: v.to_string(),
        };
        let num = |v: &str| v.trim().parse::<u64>().map_err(|_| bad(v));
        let mut out = Vec::new();
        for (i, value) in self.axis.iter().enumerate() {
            for (label, team, sync) in &configs {
                for (rep, base_seed) in self.seeds.iter().enumerate() {
                    let seed = if self.suite == Suite::SizeSweep {
                        base_seed + i as u64
                    } else {
                        *base_seed
                    };
                    let mut c = self.base.clone();
                    c.agents = team.clone();
                    c.sync_mode = *sync;
                    c.seed = seed;
                    let mut gen = GenSpec::basic(self.scale(), seed);
                    match self.suite {
                        Suite::SizeSweep => {
                            gen.scale = num(value)?.try_into().map_err(|_| bad(value))?;
                            if gen.scale == 0 {
                                return Err(bad(value));
                            }
                        }
                        Suite::SyncCompare => c.sync_every = num(value)?.max(1),
                        Suite::TeamCompose => c.agents = parse_team(value)?,
                        Suite::ViewDistance => {
                            c.view_distance = num(value)?.try_into().map_err(|_| bad(value))?;
                            if c.view_distance == 0 {
                                return Err(bad(value));
                            }
                        }
                        Suite::Distant => gen.distant = num(value)? as usize,
                        Suite::Chained => gen.chained = num(value)? as usize,
                        Suite::MultiConnection => gen.multi = num(value)? as usize,
                        Suite::AgentsCount => {
                            let n = num(value)? as usize;
                            if n == 0 {
                                return Err(bad(value));
                            }
                            c.agents = vec![AgentSpec::new(SelectHeuristic::Eager); n];
                        }
                        Suite::SingleRun => {
                            c.seed = *base_seed;
                            if let LevelSource::Generated(g) = &self.base.level {
                                gen = GenSpec {
                                    seed: *base_seed,
                                    ..*g
                                };
                            }
                        }
                    }
                    // A given level is kept by the suites that do not vary it.
                    if let LevelSource::Generated(_) = &self.base.level {
                        c.level = LevelSource::Generated(gen);
                    }
                    out.push(PlannedRun {
                        axis: value.clone(),
                        config: label.clone(),
                        rep,
                        config_run: c,
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedRun {
    pub axis: String,
    pub config: String,
    pub rep: usize,
    pub config_run: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub axis: String,
    pub config: String,
    pub rep: usize,
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("run {config} at {axis} (rep {rep}) failed: {source}")]
    Run {
        axis: String,
        config: String,
        rep: usize,
        source: RunError,
        partial: Box<SuiteResult>,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub axis: String,
    pub config: String,
    pub runs: usize,
    pub completed: usize,
    /// Over completed runs only.
    pub mean_makespan: f64,
    pub mean_points: f64,
    pub mean_accidental: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub axis: Vec<String>,
    pub configs: Vec<String>,
    pub runs: Vec<RunRecord>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (n, sum) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl SuiteResult {
    pub fn records<'a>(
        &'a self,
        axis: &'a str,
        config: &'a str,
    ) -> impl Iterator<Item = &'a RunRecord> {
        self.runs
            .iter()
            .filter(move |r| r.axis == axis && r.config == config)
    }

    /// Mean makespan over the runs that finished every task; NaN when none did.
    pub fn mean_makespan(&self, axis: &str, config: &str) -> f64 {
        mean(
            self.records(axis, config)
                .filter_map(|r| r.report.total_ticks_to_all_done)
                .map(|t| t as f64),
        )
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut rows = Vec::new();
        for axis in &self.axis {
            for config in &self.configs {
                let recs: Vec<&RunRecord> = self.records(axis, config).collect();
                if recs.is_empty() {
                    continue;
                }
                rows.push(AggregateRow {
                    axis: axis.clone(),
                    config: config.clone(),
                    runs: recs.len(),
                    completed: recs
                        .iter()
                        .filter(|r| r.report.total_ticks_to_all_done.is_some())
                        .count(),
                    mean_makespan: self.mean_makespan(axis, config),
                    mean_points: mean(recs.iter().map(|r| r.report.final_points() as f64)),
                    mean_accidental: mean(recs.iter().map(|r| r.report.accidental_count as f64)),
                });
            }
        }
        rows
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s =
            String::from("axis,config,runs,completed,mean_makespan,mean_points,mean_accidental\n");
        for r in self.aggregate() {
            let makespan = if r.mean_makespan.is_nan() {
                "dnf".to_string()
            } else {
                format!("{:.3}", r.mean_makespan)
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.3},{:.3}",
                r.axis, r.config, r.runs, r.completed, makespan, r.mean_points, r.mean_accidental
            );
        }
        s
    }

    /// Mean makespan per axis point (rows) and configuration (columns).
    pub fn table(&self) -> String {
        let agg: BTreeMap<(String, String), f64> = self
            .aggregate()
            .into_iter()
            .map(|r| ((r.axis, r.config), r.mean_makespan))
            .collect();
        let first = self
            .axis
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(self.suite.axis_name().len());
        let mut s = format!("{:<first$}", self.suite.axis_name());
        for c in &self.configs {
            let _ = write!(s, "  {:>12}", c);
        }
        s.push('\n');
        for a in &self.axis {
            let _ = write!(s, "{:<first$}", a);
            for c in &self.configs {
                match agg.get(&(a.clone(), c.clone())).filter(|v| !v.is_nan()) {
                    Some(v) => {
                        let _ = write!(s, "  {:>12.1}", v);
                    }
                    None => {
                        let _ = write!(s, "  {:>12}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<out>/<suite>/<axis>/<config>/run<k>.csv` for every run and
    /// `<out>/<suite>/aggregate.csv`.
    pub fn write(&self, out: &Path) -> Result<(), SuiteError> {
        let root = out.join(self.suite.name());
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SuiteError::Io { path, source }
        };
        for r in &self.runs {
            let dir = root.join(path_label(&r.axis)).join(path_label(&r.config));
            fs::create_dir_all(&dir).map_err(io(&dir))?;
            let file = dir.join(format!("run{}.csv", r.rep));
            fs::write(&file, r.report.to_csv()).map_err(io(&file))?;
        }
        fs::create_dir_all(&root).map_err(io(&root))?;
        let file = root.join("aggregate.csv");
        fs::write(&file, self.aggregate_csv()).map_err(io(&file))
    }
}

/// Axis and config labels as directory names.
pub fn path_label(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "+-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs every planned run (in parallel) and collects the results in plan
/// order. A failing run aborts the suite; the runs that did finish are kept in
/// the error.
pub fn run_suite(spec: &ExperimentSpec) -> Result<SuiteResult, SuiteError> {
    let plan = spec.plan()?;
    let outcomes: Vec<Result<MetricsReport, RunError>> =
        plan.par_iter().map(|p| run(&p.config_run)).collect();
    let mut result = SuiteResult {
        suite: spec.suite,
        axis: spec.axis.clone(),
        configs: spec.configs()?.into_iter().map(|(l, _, _)| l).collect(),
        runs: Vec::with_capacity(plan.len()),
    };
    let mut failure = None;
    for (p, outcome) in plan.into_iter().zip(outcomes) {
        match outcome {
            Ok(report) => result.runs.push(RunRecord {
                axis: p.axis,
                config: p.config,
                rep: p.rep,
                seed: p.config_run.seed,
                report,
            }),
            Err(e) if failure.is_none() => failure = Some((p.axis, p.config, p.rep, e)),
            Err(_) => {}
        }
    }
    match failure {
        None => Ok(result),
        Some((axis, config, rep, source)) => Err(SuiteError::Run {
            axis,
            config,
            rep,
            source,
            partial: Box::new(result),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn team_grammar() {
        let t = parse_team("high:5,low:5").unwrap();
        assert_eq!(team_label(&t), "high:5+low:5");
        assert_eq!(parse_team("eager*3").unwrap().len(), 3);
        assert_eq!(
            team_label(&parse_team("explorer+low+high:7").unwrap()),
            "explorer+low:5+high:7"
        );
        assert_eq!(parse_team(""), Err(SpecError::EmptyTeam));
        assert!(matches!(
            parse_team("sneaky"),
            Err(SpecError::UnknownAgent(_))
        ));
        assert!(matches!(parse_team("high:x"), Err(SpecError::BadNumber(_))));
        assert!(matches!(
            parse_team("eager:3"),
            Err(SpecError::UnknownAgent(_))
        ));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn plan_seeds_per_axis() {
        let mut base = RunConfig::new(LevelSource::Generated(GenSpec::basic(3, 0)), vec![]);
        base.seed = 100;
        let mut spec = ExperimentSpec::new(Suite::Distant, base, 2);
        spec.axis = vec!["2".into(), "4".into()];
        let plan = spec.plan().unwrap();
        assert_eq!(plan.len(), 2 * 3 * 2);
        let seeds: Vec<u64> = plan
            .iter()
            .filter(|p| p.config == "single")
            .map(|p| p.config_run.seed)
            .collect();
        assert_eq!(seeds, vec![100, 101, 100, 101]);
        let p = &plan[plan.len() - 1];
        assert_eq!(
            p.config_run.level,
            LevelSource::Generated(GenSpec {
                distant: 4,
                ..GenSpec::basic(3, 101)
            })
        );

        let base = RunConfig::new(LevelSource::Generated(GenSpec::basic(3, 0)), vec![]);
        let mut spec = ExperimentSpec::new(Suite::SizeSweep, base, 1);
        spec.axis = vec!["2".into(), "4".into()];
        let seeds: Vec<u64> = spec
            .plan()
            .unwrap()
            .iter()
            .map(|p| p.config_run.seed)
            .collect();
        assert_eq!(seeds, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn bad_axis_rejected() {
        let base = RunConfig::new(LevelSource::Generated(GenSpec::basic(3, 0)), vec![]);
        let mut spec = ExperimentSpec::new(Suite::ViewDistance, base, 1);
        spec.axis = vec!["far".into()];
        assert!(matches!(spec.plan(), Err(SpecError::BadAxis { .. })));
        spec.axis.clear();
        assert_eq!(spec.plan(), Err(SpecError::EmptyAxis));
    }
}

//! Staged DEM construction driven by a declarative, line-oriented config:
//! successive grid states are persisted as `b0.asc`, `b1.asc`, ... in the
//! working directory, and a simulate/verify pair at the end of the stage list
//! closes the correct-relax-resimulate loop until the stop criteria or the
//! round limit is reached.
//!
//! Config grammar (one directive per line, `#` comments):
//!
//! ```text
//! base <path>
//! loop max-rounds=3 csi-target=0.8 spread-tol=0.2
//! stage resample dx=<m> [dirs=16] [radius=<m>] [power=1]
//! stage assimilate features=<file> [alpha=] [tol=] [max-iter=] [halo=8] [water-surface=]
//! stage burn-channels features=<file> [alpha=] [tol=] [max-iter=] [halo=8]
//! stage relax [alpha=] [tol=] [max-iter=] [halo=3]      # correction-loop solver
//! stage morpho-check [spike-threshold=5] [channel=<file>] [stage=<m>]
//! stage simulate hydrograph=<csv> t-end=<s> snap=<s> [inflow=<file>] [cfl=]
//!                [manning=] [h-dry=] [open=east,west,...]
//! stage verify observed=<asc> [coastlines=<file>] [wet=0.01]
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::assimilate::{
    burn_channel, check_constraint_consistency, constraints_from_depth_curve,
    constraints_from_isoline, constraints_from_points, relax, with_exterior_anchors,
    ConstraintSet, SolverParams,
};
use crate::error::{DemError, Result};
use crate::features::{read_features, FeatureKind, VectorFeature};
use crate::grid::{read_grid, write_grid, BoolGrid, ElevationGrid};
use crate::hydrosim::{
    run as run_sim, wet_mask, Boundaries, BoundaryKind, FlowState, Hydrograph, SimParams,
};
use crate::morpho::{check_connectivity, detect_spikes, morpho_fields};
use crate::resample::{refine, ResampleParams};
use crate::verify::{compare_masks, coastline_spread, propose_corrections, SpreadEntry};

#[derive(Debug, Clone)]
pub struct SimulateSpec {
    pub hydrograph: PathBuf,
    pub t_end: f64,
    pub snapshot_every: f64,
    pub inflow: Option<PathBuf>,
    pub cfl: f64,
    pub manning_n: f64,
    pub h_dry: f64,
    pub boundaries: Boundaries,
}

#[derive(Debug, Clone)]
pub enum Stage {
    Resample {
        params: ResampleParams,
    },
    Assimilate {
        features: PathBuf,
        solver: SolverParams,
        halo: usize,
        water_surface: Option<f64>,
    },
    BurnChannels {
        features: PathBuf,
        solver: SolverParams,
        halo: usize,
    },
    Relax {
        solver: SolverParams,
        halo: usize,
    },
    MorphoCheck {
        spike_threshold: f64,
        channel: Option<PathBuf>,
        stage: Option<f64>,
    },
    Simulate(SimulateSpec),
    Verify {
        observed: PathBuf,
        coastlines: Option<PathBuf>,
        wet_threshold: f64,
    },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Resample { .. } => "resample",
            Stage::Assimilate { .. } => "assimilate",
            Stage::BurnChannels { .. } => "burn-channels",
            Stage::Relax { .. } => "relax",
            Stage::MorphoCheck { .. } => "morpho-check",
            Stage::Simulate(_) => "simulate",
            Stage::Verify { .. } => "verify",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageEntry {
    pub line: usize,
    pub stage: Stage,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub base: PathBuf,
    pub stages: Vec<StageEntry>,
    pub max_rounds: usize,
    pub csi_target: f64,
    pub spread_tol: f64,
}

pub const DEFAULT_ASSIMILATE_HALO: usize = 8;
/// Loop corrections are applied exactly by default (everything else anchored):
/// blending would raise cells next to a lowered sill, and correction rule (i)
/// only ever lowers terrain.
pub const DEFAULT_LOOP_HALO: usize = 0;
pub const DEFAULT_WET_THRESHOLD: f64 = 0.01;

struct KvArgs<'a> {
    path: &'a Path,
    line: usize,
    map: BTreeMap<String, String>,
}

impl<'a> KvArgs<'a> {
    fn new(path: &'a Path, line: usize, tokens: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                DemError::parse(path, line, format!("expected key=value, found '{tok}'"))
            })?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(DemError::parse(path, line, format!("duplicate key '{k}'")));
            }
        }
        Ok(KvArgs { path, line, map })
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|_| {
                DemError::parse(self.path, self.line, format!("bad value '{v}' for '{key}'"))
            }),
        }
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|_| {
                DemError::parse(self.path, self.line, format!("bad value '{v}' for '{key}'"))
            }),
        }
    }

    fn take_path(&mut self, key: &str, dir: &Path) -> Option<PathBuf> {
        self.map.remove(key).map(|v| resolve(dir, &v))
    }

    fn require_path(&mut self, key: &str, dir: &Path) -> Result<PathBuf> {
        self.take_path(key, dir).ok_or_else(|| {
            DemError::parse(self.path, self.line, format!("missing required key '{key}'"))
        })
    }

    fn require_f64(&mut self, key: &str) -> Result<f64> {
        self.take_f64(key)?.ok_or_else(|| {
            DemError::parse(self.path, self.line, format!("missing required key '{key}'"))
        })
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.map.keys().next() {
            return Err(DemError::parse(
                self.path,
                self.line,
                format!("unknown key '{k}' for this stage"),
            ));
        }
        Ok(())
    }
}

fn resolve(dir: &Path, raw: &str) -> PathBuf {
    let p = Path::new(raw);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn solver_from(args: &mut KvArgs) -> Result<SolverParams> {
    let mut s = SolverParams::default();
    if let Some(a) = args.take_f64("alpha")? {
        s.alpha = a;
    }
    if let Some(t) = args.take_f64("tol")? {
        s.tol = t;
    }
    if let Some(m) = args.take_usize("max-iter")? {
        s.max_iter = m;
    }
    Ok(s)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DemError::io(path, e))?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut base: Option<PathBuf> = None;
    let mut stages: Vec<StageEntry> = Vec::new();
    let mut max_rounds = 3usize;
    let mut csi_target = 0.8f64;
    let mut spread_tol = 0.2f64;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "base" => {
                if tokens.len() != 2 {
                    return Err(DemError::parse(path, lineno, "usage: base <path>"));
                }
                base = Some(resolve(&dir, tokens[1]));
            }
            "loop" => {
                let mut args = KvArgs::new(path, lineno, &tokens[1..])?;
                if let Some(m) = args.take_usize("max-rounds")? {
                    if m == 0 {
                        return Err(DemError::parse(path, lineno, "max-rounds must be >= 1"));
                    }
                    max_rounds = m;
                }
                if let Some(c) = args.take_f64("csi-target")? {
                    csi_target = c;
                }
                if let Some(s) = args.take_f64("spread-tol")? {
                    spread_tol = s;
                }
                args.finish()?;
            }
            "stage" => {
                if tokens.len() < 2 {
                    return Err(DemError::parse(path, lineno, "usage: stage <name> key=value ..."));
                }
                let name = tokens[1];
                let mut args = KvArgs::new(path, lineno, &tokens[2..])?;
                let stage = match name {
                    "resample" => {
                        let mut params = ResampleParams::new(args.require_f64("dx")?);
                        if let Some(d) = args.take_usize("dirs")? {
                            params.n_directions = d;
                        }
                        if let Some(r) = args.take_f64("radius")? {
                            params.search_radius = Some(r);
                        }
                        if let Some(p) = args.take_f64("power")? {
                            params.idw_power = p;
                        }
                        Stage::Resample { params }
                    }
                    "assimilate" => {
                        let features = args.require_path("features", &dir)?;
                        let solver = solver_from(&mut args)?;
                        let halo =
                            args.take_usize("halo")?.unwrap_or(DEFAULT_ASSIMILATE_HALO);
                        let water_surface = args.take_f64("water-surface")?;
                        Stage::Assimilate { features, solver, halo, water_surface }
                    }
                    "burn-channels" => {
                        let features = args.require_path("features", &dir)?;
                        let solver = solver_from(&mut args)?;
                        let halo =
                            args.take_usize("halo")?.unwrap_or(DEFAULT_ASSIMILATE_HALO);
                        Stage::BurnChannels { features, solver, halo }
                    }
                    "relax" => {
                        let solver = solver_from(&mut args)?;
                        let halo = args.take_usize("halo")?.unwrap_or(DEFAULT_LOOP_HALO);
                        Stage::Relax { solver, halo }
                    }
                    "morpho-check" => Stage::MorphoCheck {
                        spike_threshold: args.take_f64("spike-threshold")?.unwrap_or(5.0),
                        channel: args.take_path("channel", &dir),
                        stage: args.take_f64("stage")?,
                    },
                    "simulate" => {
                        let hydrograph = args.require_path("hydrograph", &dir)?;
                        let t_end = args.require_f64("t-end")?;
                        let snapshot_every = args.require_f64("snap")?;
                        let inflow = args.take_path("inflow", &dir);
                        let cfl = args.take_f64("cfl")?.unwrap_or(0.4);
                        let manning_n = args.take_f64("manning")?.unwrap_or(0.03);
                        let h_dry = args.take_f64("h-dry")?.unwrap_or(1e-3);
                        let mut boundaries = Boundaries::default();
                        if let Some(open) = args.map.remove("open") {
                            for side in open.split(',') {
                                match side.trim() {
                                    "north" => boundaries.north = BoundaryKind::Open,
                                    "south" => boundaries.south = BoundaryKind::Open,
                                    "east" => boundaries.east = BoundaryKind::Open,
                                    "west" => boundaries.west = BoundaryKind::Open,
                                    other => {
                                        return Err(DemError::parse(
                                            path,
                                            lineno,
                                            format!("unknown boundary side '{other}'"),
                                        ))
                                    }
                                }
                            }
                        }
                        Stage::Simulate(SimulateSpec {
                            hydrograph,
                            t_end,
                            snapshot_every,
                            inflow,
                            cfl,
                            manning_n,
                            h_dry,
                            boundaries,
                        })
                    }
                    "verify" => Stage::Verify {
                        observed: args.require_path("observed", &dir)?,
                        coastlines: args.take_path("coastlines", &dir),
                        wet_threshold: args.take_f64("wet")?.unwrap_or(DEFAULT_WET_THRESHOLD),
                    },
                    other => {
                        return Err(DemError::parse(
                            path,
                            lineno,
                            format!("unknown stage name '{other}'"),
                        ))
                    }
                };
                args.finish()?;
                stages.push(StageEntry { line: lineno, stage });
            }
            other => {
                return Err(DemError::parse(
                    path,
                    lineno,
                    format!("unknown directive '{other}' (expected base, loop or stage)"),
                ));
            }
        }
    }

    let base = base.ok_or_else(|| DemError::parse(path, 0, "config is missing 'base <path>'"))?;
    let config = PipelineConfig { base, stages, max_rounds, csi_target, spread_tol };
    structural_check(&config, path)?;
    Ok(config)
}

fn structural_check(config: &PipelineConfig, path: &Path) -> Result<()> {
    let mut sim_line = None;
    let mut verify_line = None;
    for entry in &config.stages {
        match &entry.stage {
            Stage::Simulate(_) => {
                if sim_line.is_some() {
                    return Err(DemError::parse(path, entry.line, "only one simulate stage is allowed"));
                }
                sim_line = Some(entry.line);
            }
            Stage::Verify { .. } => {
                if verify_line.is_some() {
                    return Err(DemError::parse(path, entry.line, "only one verify stage is allowed"));
                }
                verify_line = Some(entry.line);
            }
            _ => {}
        }
    }
    if let Some(v) = verify_line {
        match sim_line {
            Some(s) if s < v => {}
            _ => {
                return Err(DemError::parse(
                    path,
                    v,
                    "verify needs a simulate stage earlier in the config",
                ))
            }
        }
    }
    Ok(())
}

/// Check that every referenced input file exists.
pub fn validate_files(config: &PipelineConfig) -> Result<()> {
    let mut missing: Vec<PathBuf> = Vec::new();
    let mut check = |p: &Path| {
        if !p.exists() {
            missing.push(p.to_path_buf());
        }
    };
    check(&config.base);
    for entry in &config.stages {
        match &entry.stage {
            Stage::Assimilate { features, .. } | Stage::BurnChannels { features, .. } => {
                check(features)
            }
            Stage::MorphoCheck { channel: Some(c), .. } => check(c),
            Stage::Simulate(spec) => {
                check(&spec.hydrograph);
                if let Some(i) = &spec.inflow {
                    check(i);
                }
            }
            Stage::Verify { observed, coastlines, .. } => {
                check(observed);
                if let Some(c) = coastlines {
                    check(c);
                }
            }
            _ => {}
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        Err(DemError::Params(format!("missing input files: {}", list.join(", "))))
    }
}

/// Human-readable execution plan; validates file bindings without executing.
pub fn describe(config: &PipelineConfig) -> Result<String> {
    validate_files(config)?;
    let mut out = String::new();
    out.push_str(&format!("base {}\n", config.base.display()));
    for (k, entry) in config.stages.iter().enumerate() {
        let detail = match &entry.stage {
            Stage::Resample { params } => format!(
                "dx={} dirs={} power={}",
                params.target_dx, params.n_directions, params.idw_power
            ),
            Stage::Assimilate { features, solver, halo, .. } => format!(
                "features={} alpha={} tol={} halo={halo}",
                features.display(),
                solver.alpha,
                solver.tol
            ),
            Stage::BurnChannels { features, solver, halo } => format!(
                "features={} alpha={} tol={} halo={halo}",
                features.display(),
                solver.alpha,
                solver.tol
            ),
            Stage::Relax { solver, halo } => {
                format!("alpha={} tol={} halo={halo} (correction loop)", solver.alpha, solver.tol)
            }
            Stage::MorphoCheck { spike_threshold, channel, stage } => {
                let mut s = format!("spike-threshold={spike_threshold}");
                if let Some(c) = channel {
                    s.push_str(&format!(" channel={}", c.display()));
                }
                if let Some(st) = stage {
                    s.push_str(&format!(" stage={st}"));
                }
                s
            }
            Stage::Simulate(spec) => format!(
                "hydrograph={} t-end={} snap={}",
                spec.hydrograph.display(),
                spec.t_end,
                spec.snapshot_every
            ),
            Stage::Verify { observed, coastlines, wet_threshold } => {
                let mut s = format!("observed={} wet={wet_threshold}", observed.display());
                if let Some(c) = coastlines {
                    s.push_str(&format!(" coastlines={}", c.display()));
                }
                s
            }
        };
        out.push_str(&format!("stage {} {}: {}\n", k + 1, entry.stage.name(), detail));
    }
    out.push_str(&format!(
        "loop max-rounds={} csi-target={} spread-tol={}\n",
        config.max_rounds, config.csi_target, config.spread_tol
    ));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    /// Corrections applied before this round's simulation (0 for round 1).
    pub corrections_applied: usize,
    pub sim_steps: usize,
    pub mass_balance_error: f64,
    pub csi: f64,
    pub hits: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub max_spread: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub stage_lines: Vec<String>,
    pub rounds: Vec<RoundRecord>,
    pub criteria_met: bool,
    pub stop_reason: String,
    /// Persisted grid files in stage order.
    pub grids: Vec<PathBuf>,
}

impl PipelineReport {
    pub fn render(&self) -> String {
        let mut out = String::from("dem-forge pipeline report\n");
        for line in &self.stage_lines {
            out.push_str(line);
            out.push('\n');
        }
        for r in &self.rounds {
            if r.corrections_applied > 0 {
                out.push_str(&format!(
                    "round {} correct: constraints={}\n",
                    r.round, r.corrections_applied
                ));
            }
            out.push_str(&format!(
                "round {} simulate: steps={} mass_error={:.9}\n",
                r.round, r.sim_steps, r.mass_balance_error
            ));
            out.push_str(&format!(
                "round {} verify: csi={:.6} hits={} misses={} false_alarms={} max_spread={:.6}\n",
                r.round, r.csi, r.hits, r.misses, r.false_alarms, r.max_spread
            ));
        }
        out.push_str(&format!("stop: {}\n", self.stop_reason));
        out.push_str(&format!(
            "result: {}\n",
            if self.criteria_met { "criteria met" } else { "criteria not met" }
        ));
        out
    }
}

struct LoopContext {
    spec: SimulateSpec,
    hydrograph: Hydrograph,
    sim_params: SimParams,
    observed: BoolGrid,
    coastlines: Vec<VectorFeature>,
    wet_threshold: f64,
    solver: SolverParams,
    halo: usize,
}

fn stage_err(name: &str, e: DemError) -> DemError {
    DemError::Stage { stage: name.to_string(), source: Box::new(e) }
}

/// Inflow-cell file: one `col row` pair per line, `#` comments allowed.
pub fn read_inflow_cells(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DemError::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.ok_or_else(|| DemError::parse(path, i + 1, "expected 'col row'"))?
                .parse::<usize>()
                .map_err(|_| DemError::parse(path, i + 1, format!("bad cell index in '{line}'")))
        };
        let col = parse(it.next())?;
        let row = parse(it.next())?;
        if it.next().is_some() {
            return Err(DemError::parse(path, i + 1, format!("trailing tokens in '{line}'")));
        }
        out.push((col, row));
    }
    Ok(out)
}

fn ingest_features(
    grid: &ElevationGrid,
    features: &[VectorFeature],
    water_surface: Option<f64>,
) -> Result<(ConstraintSet, usize)> {
    let mut set = ConstraintSet::new();
    let mut rejected = 0usize;
    for f in features {
        match f.kind {
            FeatureKind::Isoline => set.append(constraints_from_isoline(f, grid)?),
            FeatureKind::DepthCurve => {
                let surface = f.level.or(water_surface).ok_or_else(|| {
                    DemError::Feature(
                        "depth curve needs LEVEL= (or a stage water-surface=) for the water surface"
                            .into(),
                    )
                })?;
                set.append(constraints_from_depth_curve(f, surface, grid)?);
            }
            FeatureKind::Points => {
                let pts: Vec<(f64, f64, f64)> =
                    f.vertices.iter().map(|v| (v.x, v.y, v.z.unwrap_or(0.0))).collect();
                let ingest = constraints_from_points(&pts, grid);
                rejected += ingest.rejected.len();
                set.append(ingest.set);
            }
            FeatureKind::Channel => {
                return Err(DemError::Feature(
                    "channel features belong in a burn-channels stage".into(),
                ))
            }
        }
    }
    Ok((set, rejected))
}

fn apply_constraints(
    grid: &ElevationGrid,
    set: &ConstraintSet,
    solver: &SolverParams,
    halo: usize,
) -> Result<(ElevationGrid, usize, f64)> {
    let pinned = with_exterior_anchors(grid, set, halo)?;
    let out = relax(grid, &pinned, solver)?;
    Ok((out.grid, out.iterations, out.final_residual))
}

/// Execute the config, persisting intermediate grids and the report under
/// `workdir`. Any stage error aborts with the stage name; grids persisted so
/// far stay on disk.
pub fn run_pipeline(config: &PipelineConfig, workdir: impl AsRef<Path>) -> Result<PipelineReport> {
    let workdir = workdir.as_ref();
    fs::create_dir_all(workdir).map_err(|e| DemError::io(workdir, e))?;
    validate_files(config)?;

    let mut grid = read_grid(&config.base)?;
    let mut grid_index = 0usize;
    let mut grids = Vec::new();
    let mut stage_lines = Vec::new();

    // b0 is the basic DEM: the base, refined first when the config starts
    // with a resample stage.
    let mut stages = config.stages.iter();
    let mut pending: Option<&StageEntry> = stages.next();
    if let Some(entry) = pending {
        if let Stage::Resample { params } = &entry.stage {
            let out = refine(&grid, params).map_err(|e| stage_err("resample", e))?;
            stage_lines.push(format!(
                "stage resample: dx={} cols={} rows={} unfilled={}",
                params.target_dx, out.grid.n_cols, out.grid.n_rows, out.unfilled
            ));
            grid = out.grid;
            pending = stages.next();
        }
    }
    let persist = |grid: &ElevationGrid, idx: usize, grids: &mut Vec<PathBuf>| -> Result<PathBuf> {
        let path = workdir.join(format!("b{idx}.asc"));
        write_grid(grid, &path)?;
        grids.push(path.clone());
        Ok(path)
    };
    persist(&grid, grid_index, &mut grids)?;

    let mut loop_solver = SolverParams::default();
    let mut loop_halo = DEFAULT_LOOP_HALO;
    let mut sim_ctx: Option<(SimulateSpec, Hydrograph, SimParams)> = None;
    let mut last_sim: Option<(crate::hydrosim::SimRun, FlowState)> = None;
    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut loop_ctx: Option<LoopContext> = None;

    while let Some(entry) = pending {
        let name = entry.stage.name();
        match &entry.stage {
            Stage::Resample { params } => {
                let out = refine(&grid, params).map_err(|e| stage_err(name, e))?;
                stage_lines.push(format!(
                    "stage resample: dx={} cols={} rows={} unfilled={}",
                    params.target_dx, out.grid.n_cols, out.grid.n_rows, out.unfilled
                ));
                grid = out.grid;
                grid_index += 1;
                persist(&grid, grid_index, &mut grids)?;
            }
            Stage::Assimilate { features, solver, halo, water_surface } => {
                let feats = read_features(features).map_err(|e| stage_err(name, e))?;
                let (set, rejected) = ingest_features(&grid, &feats, *water_surface)
                    .map_err(|e| stage_err(name, e))?;
                let conflicts = check_constraint_consistency(&set).entries.len();
                let (g, iters, residual) =
                    apply_constraints(&grid, &set, solver, *halo).map_err(|e| stage_err(name, e))?;
                grid = g;
                grid_index += 1;
                persist(&grid, grid_index, &mut grids)?;
                stage_lines.push(format!(
                    "stage assimilate: features={} constraints={} rejected={} conflicts={} iterations={} residual={:.9} out=b{}.asc",
                    features.display(), set.len(), rejected, conflicts, iters, residual, grid_index
                ));
            }
            Stage::BurnChannels { features, solver, halo } => {
                let feats = read_features(features).map_err(|e| stage_err(name, e))?;
                let mut set = ConstraintSet::new();
                for f in &feats {
                    if f.kind != FeatureKind::Channel {
                        return Err(stage_err(
                            name,
                            DemError::Feature(format!(
                                "burn-channels expects channel features, found {}",
                                f.kind.name()
                            )),
                        ));
                    }
                    let section = f.section.expect("validated at parse time");
                    set.append(burn_channel(&grid, f, &section).map_err(|e| stage_err(name, e))?);
                }
                let (g, iters, residual) =
                    apply_constraints(&grid, &set, solver, *halo).map_err(|e| stage_err(name, e))?;
                grid = g;
                grid_index += 1;
                persist(&grid, grid_index, &mut grids)?;
                stage_lines.push(format!(
                    "stage burn-channels: features={} constraints={} iterations={} residual={:.9} out=b{}.asc",
                    features.display(), set.len(), iters, residual, grid_index
                ));
            }
            Stage::Relax { solver, halo } => {
                loop_solver = *solver;
                loop_halo = *halo;
                stage_lines.push(format!(
                    "stage relax: alpha={} tol={} halo={} (correction loop)",
                    solver.alpha, solver.tol, halo
                ));
            }
            Stage::MorphoCheck { spike_threshold, channel, stage } => {
                morpho_fields(&grid).map_err(|e| stage_err(name, e))?;
                let spikes =
                    detect_spikes(&grid, *spike_threshold).map_err(|e| stage_err(name, e))?;
                let mut line = format!("stage morpho-check: spikes={}", spikes.len());
                if let (Some(chan), Some(st)) = (channel, stage) {
                    let feats = read_features(chan).map_err(|e| stage_err(name, e))?;
                    let mut breaks = 0usize;
                    for f in &feats {
                        breaks += check_connectivity(&grid, f, *st)
                            .map_err(|e| stage_err(name, e))?
                            .len();
                    }
                    line.push_str(&format!(" breaks={breaks}"));
                }
                stage_lines.push(line);
            }
            Stage::Simulate(spec) => {
                let hydrograph =
                    Hydrograph::from_csv_path(&spec.hydrograph).map_err(|e| stage_err(name, e))?;
                let inflow_cells = match &spec.inflow {
                    Some(p) => read_inflow_cells(p).map_err(|e| stage_err(name, e))?,
                    None => Vec::new(),
                };
                let params = SimParams {
                    cfl: spec.cfl,
                    h_dry: spec.h_dry,
                    manning_n: spec.manning_n,
                    gravity: 9.81,
                    inflow_cells,
                    boundaries: spec.boundaries,
                };
                let sim = run_sim(&grid, &params, &hydrograph, spec.t_end, spec.snapshot_every, None)
                    .map_err(|e| stage_err(name, e))?;
                let final_state = sim.final_state().clone();
                let depth_path = workdir.join("depth_round1.asc");
                write_depth(&final_state, &grid, &depth_path)?;
                stage_lines.push(format!(
                    "stage simulate: steps={} inflow={:.6} outflow={:.6} mass_error={:.9}",
                    sim.steps, sim.inflow_volume, sim.outflow_volume, sim.mass_balance_error
                ));
                sim_ctx = Some((spec.clone(), hydrograph, params));
                last_sim = Some((sim, final_state));
            }
            Stage::Verify { observed, coastlines, wet_threshold } => {
                let (sim_run, final_state) = last_sim
                    .as_ref()
                    .ok_or_else(|| stage_err(name, DemError::Params("verify ran before simulate".into())))?;
                let observed_grid = read_grid(observed).map_err(|e| stage_err(name, e))?;
                if observed_grid.n_cols != grid.n_cols || observed_grid.n_rows != grid.n_rows {
                    return Err(stage_err(
                        name,
                        DemError::Params("observed mask does not match the working grid".into()),
                    ));
                }
                let observed_mask = BoolGrid::from_grid(&observed_grid, 0.5);
                let coast_feats = match coastlines {
                    Some(p) => read_features(p).map_err(|e| stage_err(name, e))?,
                    None => Vec::new(),
                };
                let (record, _spreads) = verify_round(
                    1,
                    0,
                    &grid,
                    sim_run,
                    final_state,
                    *wet_threshold,
                    &observed_mask,
                    &coast_feats,
                )
                .map_err(|e| stage_err(name, e))?;
                stage_lines.push(format!(
                    "stage verify: csi={:.6} hits={} misses={} false_alarms={} max_spread={:.6}",
                    record.csi, record.hits, record.misses, record.false_alarms, record.max_spread
                ));
                rounds.push(record);
                let (spec, hydrograph, params) = sim_ctx.clone().expect("simulate precedes verify");
                loop_ctx = Some(LoopContext {
                    spec,
                    hydrograph,
                    sim_params: params,
                    observed: observed_mask,
                    coastlines: coast_feats,
                    wet_threshold: *wet_threshold,
                    solver: loop_solver,
                    halo: loop_halo,
                });
            }
        }
        pending = stages.next();
    }

    // verify -> correct -> relax -> simulate rounds
    let criteria_met;
    let stop_reason;
    match &loop_ctx {
        None => {
            criteria_met = true;
            stop_reason = "no verify stage; nothing to iterate".to_string();
        }
        Some(ctx) => {
            let met = |r: &RoundRecord| r.csi >= config.csi_target && r.max_spread <= config.spread_tol;
            let mut round = 1usize;
            loop {
                let last = rounds.last().expect("verify recorded round 1");
                if met(last) {
                    criteria_met = true;
                    stop_reason = format!(
                        "csi {:.6} >= {:.6} and max spread {:.6} <= {:.6}",
                        last.csi, config.csi_target, last.max_spread, config.spread_tol
                    );
                    break;
                }
                if round >= config.max_rounds {
                    criteria_met = false;
                    stop_reason = format!("round limit {} reached", config.max_rounds);
                    break;
                }
                let (_, final_state) = last_sim.as_ref().expect("loop requires a simulation");
                let spreads = spread_entries(&grid, &ctx.coastlines)?;
                let corrections = propose_corrections(
                    &grid,
                    final_state,
                    ctx.sim_params.h_dry,
                    ctx.wet_threshold,
                    &ctx.observed,
                    &spreads,
                    config.spread_tol,
                )?;
                if corrections.is_empty() {
                    criteria_met = false;
                    stop_reason = "no further corrections derivable from observations".to_string();
                    break;
                }
                round += 1;
                let corr_path = workdir.join(format!("corrections_round{round}.txt"));
                write_corrections(&corrections, &grid, &corr_path)?;
                let (g, _iters, _residual) =
                    apply_constraints(&grid, &corrections, &ctx.solver, ctx.halo)
                        .map_err(|e| stage_err("relax", e))?;
                grid = g;
                grid_index += 1;
                persist(&grid, grid_index, &mut grids)?;

                let sim = run_sim(
                    &grid,
                    &ctx.sim_params,
                    &ctx.hydrograph,
                    ctx.spec.t_end,
                    ctx.spec.snapshot_every,
                    None,
                )
                .map_err(|e| stage_err("simulate", e))?;
                let final_state = sim.final_state().clone();
                write_depth(&final_state, &grid, &workdir.join(format!("depth_round{round}.asc")))?;
                let (record, _) = verify_round(
                    round,
                    corrections.len(),
                    &grid,
                    &sim,
                    &final_state,
                    ctx.wet_threshold,
                    &ctx.observed,
                    &ctx.coastlines,
                )
                .map_err(|e| stage_err("verify", e))?;
                rounds.push(record);
                last_sim = Some((sim, final_state));
            }
        }
    }

    let report = PipelineReport {
        stage_lines,
        rounds,
        criteria_met,
        stop_reason,
        grids,
    };
    fs::write(workdir.join("report.txt"), report.render())
        .map_err(|e| DemError::io(workdir.join("report.txt"), e))?;
    Ok(report)
}

fn spread_entries(grid: &ElevationGrid, coastlines: &[VectorFeature]) -> Result<Vec<SpreadEntry>> {
    coastlines
        .iter()
        .enumerate()
        .map(|(k, f)| coastline_spread(grid, f, k))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn verify_round(
    round: usize,
    corrections_applied: usize,
    grid: &ElevationGrid,
    sim: &crate::hydrosim::SimRun,
    final_state: &FlowState,
    wet_threshold: f64,
    observed: &BoolGrid,
    coastlines: &[VectorFeature],
) -> Result<(RoundRecord, Vec<SpreadEntry>)> {
    let sim_mask = wet_mask(final_state, wet_threshold);
    let cmp = compare_masks(&sim_mask, observed)?;
    let spreads = spread_entries(grid, coastlines)?;
    let max_spread = spreads.iter().map(|s| s.spread).fold(0.0f64, f64::max);
    Ok((
        RoundRecord {
            round,
            corrections_applied,
            sim_steps: sim.steps,
            mass_balance_error: sim.mass_balance_error,
            csi: cmp.csi,
            hits: cmp.hits,
            misses: cmp.misses,
            false_alarms: cmp.false_alarms,
            max_spread,
        },
        spreads,
    ))
}

fn write_depth(state: &FlowState, grid: &ElevationGrid, path: &Path) -> Result<()> {
    let mut depth = grid.clone();
    depth.values = state.h.clone();
    write_grid(&depth, path)
}

fn write_corrections(set: &ConstraintSet, grid: &ElevationGrid, path: &Path) -> Result<()> {
    let mut text = String::new();
    for c in &set.constraints {
        let (x, y) = grid.node_xy(c.col, c.row);
        text.push_str(&format!("{} {:.6} {:.6} {:.6}\n", c.source, x, y, c.value));
    }
    fs::write(path, text).map_err(|e| DemError::io(path, e))
}

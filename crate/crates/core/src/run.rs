//! Run configuration, the result store, exports and the subcommand drivers.
//!
//! Every file written here starts with a `# fingerprint=<sha256>` line naming
//! the configuration that produced it. Floats are written with 17
//! significant digits.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::baseflow::{continue_branch, solve_base, BaseProblem, Branch, NewtonOptions, StepPolicy};
use crate::basis::{build_basis, CutoffSpec, DiscreteField, Parity, Rotlet, StokesTranslation, VectorField};
use crate::bifurcation::{
    analyze, apply_refinement, block_degeneracy, find_critical, real_eigenvector, BifurcationReport,
    BifurcationStatus, CriticalOutcome, CriticalPoint, ManufacturedFamily, OperatorFamily, PhysicalFamily,
    ScanOptions, SymmetryBreaking,
};
use crate::error::{Error, Result};
use crate::forms::{
    analytic_grid, assemble_D1, assemble_S, field_norms, recover_force_torque, strain_pairing, surface_couplings,
};
use crate::quadrature::{QuadratureSpec, SurfaceGrid};
use crate::spectrum::{leading_eigs, EigenOptions, ModeOperators};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    /// Maximal meridional degree `L`.
    pub max_degree: u32,
    /// Radial order `N`.
    pub radial: u32,
    /// Per-mode overrides `"m" = [L, N]`.
    #[serde(default)]
    pub per_mode: BTreeMap<String, [u32; 2]>,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            max_degree: 6,
            radial: 10,
            per_mode: BTreeMap::new(),
        }
    }
}

impl ResolutionConfig {
    pub fn for_mode(&self, m: u32) -> (u32, u32) {
        match self.per_mode.get(&m.to_string()) {
            Some([l, n]) => (*l, *n),
            None => (self.max_degree.max(m), self.radial),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    pub min: f64,
    pub max: f64,
    /// Initial continuation step.
    pub step: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig {
            min: 0.0,
            max: 10.0,
            step: 1.0,
            min_step: 1e-3,
            max_step: 5.0,
        }
    }
}

impl LambdaConfig {
    pub fn policy(&self) -> StepPolicy {
        StepPolicy {
            initial: self.step,
            min: self.min_step,
            max: self.max_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub newton: f64,
    pub newton_max_iter: usize,
    pub eigen: f64,
    pub root: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            newton: 1e-10,
            newton_max_iter: 30,
            eigen: 1e-8,
            root: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalConfig {
    /// Scan points used to bracket the crossing.
    pub samples: usize,
    /// Eigenvalues computed per scan point.
    pub eigen_count: usize,
    /// Repeat the search at `refine_factor × (L, N)` and compare.
    pub refine: bool,
    pub refine_factor: u32,
    /// Real sub-block of each mode.
    pub parity: Parity,
    /// Closed-form family: `μ(λ) = λ²/λ*`.
    pub lambda_star: f64,
    /// Eigenvalue spread of the closed-form family; zero makes it fully degenerate.
    pub spread: f64,
    /// Outer radius and `[radial, polar]` point counts of the exported meridional slice.
    pub slice_radius: f64,
    pub slice_points: [usize; 2],
}

impl Default for CriticalConfig {
    fn default() -> Self {
        CriticalConfig {
            samples: 6,
            eigen_count: 6,
            refine: true,
            refine_factor: 2,
            parity: Parity::Even,
            lambda_star: 4.0,
            spread: 0.25,
            slice_radius: 5.0,
            slice_points: [41, 37],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub resolution: ResolutionConfig,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default = "default_modes")]
    pub modes: Vec<u32>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub cutoff: CutoffSpec,
    #[serde(default)]
    pub critical: CriticalConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_modes() -> Vec<u32> {
    vec![0, 1]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    7
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: ResolutionConfig::default(),
            lambda: LambdaConfig::default(),
            modes: default_modes(),
            tolerances: ToleranceConfig::default(),
            quadrature: QuadratureSpec::default(),
            cutoff: CutoffSpec::default(),
            critical: CriticalConfig::default(),
            output: default_output(),
            seed: default_seed(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.modes.is_empty() {
            return bad("modes must list at least one azimuthal wavenumber".into());
        }
        if let Some(m) = self.modes.iter().find(|&&m| m > 3) {
            return bad(format!("mode {m} outside the supported set 0..=3"));
        }
        let t = &self.tolerances;
        for (name, v) in [("newton", t.newton), ("eigen", t.eigen), ("root", t.root)] {
            if !(v > 0.0) {
                return bad(format!("tolerance {name} must be positive, got {v}"));
            }
        }
        if t.newton_max_iter == 0 {
            return bad("newton_max_iter must be positive".into());
        }
        let l = &self.lambda;
        if !(l.min >= 0.0 && l.max >= l.min) {
            return bad(format!("lambda range must satisfy 0 <= min <= max, got [{}, {}]", l.min, l.max));
        }
        if !(l.step > 0.0 && l.min_step > 0.0 && l.max_step >= l.min_step) {
            return bad("lambda steps must satisfy 0 < min_step <= max_step and step > 0".into());
        }
        if !(self.cutoff.inner >= 1.0 && self.cutoff.outer > self.cutoff.inner) {
            return bad(format!(
                "cutoff needs 1 <= inner < outer, got inner={} outer={}",
                self.cutoff.inner, self.cutoff.outer
            ));
        }
        for key in self.resolution.per_mode.keys() {
            if key.parse::<u32>().map_or(true, |m| m > 3) {
                return bad(format!("per_mode key {key:?} is not a mode in 0..=3"));
            }
        }
        for m in 0..=3 {
            let (lm, n) = self.resolution.for_mode(m);
            if lm < m.max(1) || n < 2 {
                return bad(format!("mode {m} resolution (L={lm}, N={n}) needs L >= max(m,1) and N >= 2"));
            }
        }
        let c = &self.critical;
        if c.samples < 2 || c.eigen_count == 0 || c.refine_factor < 1 {
            return bad("critical needs samples >= 2, eigen_count >= 1, refine_factor >= 1".into());
        }
        if !(c.lambda_star > 0.0 && (0.0..1.0).contains(&c.spread)) {
            return bad("critical needs lambda_star > 0 and 0 <= spread < 1".into());
        }
        if !(c.slice_radius > 1.0 && c.slice_points.iter().all(|&p| p >= 2)) {
            return bad("slice needs radius > 1 and at least 2 points per direction".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tolerances.newton,
            max_iter: self.tolerances.newton_max_iter,
        }
    }

    pub fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            count: self.critical.eigen_count,
            root_tol: self.tolerances.root,
            eig: EigenOptions {
                tol: self.tolerances.eigen,
                seed: self.seed,
                ..EigenOptions::default()
            },
            ..ScanOptions::default()
        }
    }

    pub fn base_problem(&self) -> Result<BaseProblem> {
        let (l, n) = self.resolution.for_mode(0);
        BaseProblem::new(l, n, self.quadrature)
    }

    /// Copy with every `L` and `N` multiplied by `factor`.
    pub fn refined(&self, factor: u32) -> RunConfig {
        let mut c = self.clone();
        c.resolution.max_degree *= factor;
        c.resolution.radial *= factor;
        for v in c.resolution.per_mode.values_mut() {
            v[0] *= factor;
            v[1] *= factor;
        }
        c
    }
}

/// A stored result together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub kind: String,
    pub config_fingerprint: String,
    pub payload: T,
}

/// Write-once, content-addressed JSON records under `<dir>/store`.
///
/// Records are named by the SHA-256 of their bytes; a `<name>.ref` file
/// points to the current record for a name.
#[derive(Clone, Debug)]
pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let root = dir.join("store");
        fs::create_dir_all(&root)?;
        Ok(ResultStore { root })
    }

    pub fn put<T: Serialize>(&self, name: &str, kind: &str, config_fingerprint: &str, payload: &T) -> Result<String> {
        let record = Record {
            kind: kind.to_string(),
            config_fingerprint: config_fingerprint.to_string(),
            payload,
        };
        let bytes = serde_json::to_vec_pretty(&record).map_err(|e| Error::Serialization(e.to_string()))?;
        let hash = hex::encode(Sha256::digest(&bytes));
        let path = self.root.join(format!("{kind}-{hash}.json"));
        if path.exists() {
            if fs::read(&path)? != bytes {
                return Err(Error::Serialization(format!("{} exists with different content", path.display())));
            }
        } else {
            write_atomic(&path, &bytes)?;
        }
        write_atomic(&self.root.join(format!("{name}.ref")), format!("{kind}-{hash}").as_bytes())?;
        Ok(hash)
    }

    pub fn get<T: DeserializeOwned>(&self, name: &str) -> Result<Option<Record<T>>> {
        let r = self.root.join(format!("{name}.ref"));
        if !r.exists() {
            return Ok(None);
        }
        let id = fs::read_to_string(r)?;
        let bytes = fs::read(self.root.join(format!("{}.json", id.trim())))?;
        let hash = hex::encode(Sha256::digest(&bytes));
        let expected = id.trim().rsplit('-').next().unwrap_or_default();
        if hash != expected {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: hash,
            });
        }
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Fixed 17-significant-digit rendering.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, fingerprint: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = format!("# fingerprint={fingerprint}\n{}\n", columns.join(","));
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_report<T: Serialize>(path: &Path, fingerprint: &str, report: &T) -> Result<()> {
    let body = toml::to_string(report).map_err(|e| Error::Serialization(e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format!("# fingerprint={fingerprint}\n{body}"))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub identity: String,
    pub residual: f64,
    pub tolerance: f64,
    /// Rows that are reported but do not affect the outcome.
    pub judged: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    /// Quadrature resolution checks that failed; identities are not judged if nonempty.
    pub underresolved: Vec<String>,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.underresolved.is_empty() && self.rows.iter().all(|r| r.passed || !r.judged)
    }

    /// Judged rows that failed; empty while the quadrature is underresolved.
    pub fn failures(&self) -> Vec<&VerifyRow> {
        if !self.underresolved.is_empty() {
            return vec![];
        }
        self.rows.iter().filter(|r| r.judged && !r.passed).collect()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for u in &self.underresolved {
            let _ = writeln!(s, "UNDERRESOLVED  {u}");
        }
        let _ = writeln!(s, "{:<46} {:>12} {:>10}  result", "identity", "residual", "tolerance");
        for r in &self.rows {
            let verdict = match (r.judged && self.underresolved.is_empty(), r.passed) {
                (false, _) => "info",
                (true, true) => "pass",
                (true, false) => "FAIL",
            };
            let _ = writeln!(s, "{:<46} {:>12.3e} {:>10.1e}  {verdict}", r.identity, r.residual, r.tolerance);
        }
        s
    }
}

fn row(identity: impl Into<String>, residual: f64, tolerance: f64) -> VerifyRow {
    VerifyRow {
        identity: identity.into(),
        residual,
        tolerance,
        judged: true,
        passed: residual <= tolerance,
    }
}

/// Run the identity suite at the configured resolution.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let start = Instant::now();
    let quad = cfg.quadrature;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut underresolved = Vec::new();

    let grid = analytic_grid(&quad)?;
    let h = Rotlet::E3;
    let ft = recover_force_torque(&h, 0.0, 0.0, &grid);
    let torque_err = ft.force.iter().map(|f| f.abs()).fold(0.0, f64::max).max(
        (0..3)
            .map(|k| (ft.torque[k] - if k == 2 { -8.0 * PI } else { 0.0 }).abs())
            .fold(0.0, f64::max),
    );
    rows.push(row("rotlet force and torque = (0, -8pi e3)", torque_err, 1e-8));
    rows.push(row(
        "rotlet strain energy = 4pi",
        (strain_pairing(&h, &h, &grid) - 4.0 * PI).abs() / (4.0 * PI),
        1e-8,
    ));
    let st = recover_force_torque(&StokesTranslation::along_e1(1.0), 1.0, 0.0, &grid);
    rows.push(row("Stokes drag = -6pi e1", (st.force[0] + 6.0 * PI).abs() / (6.0 * PI), 1e-8));

    let surf = SurfaceGrid::new(16, 16);
    for &m in &cfg.modes {
        let (l, n) = cfg.resolution.for_mode(m);
        let assembled = build_basis(m, l, n, &quad)
            .and_then(|b| Ok((assemble_S(&b, &quad)?, assemble_D1(&b, &quad)?, Arc::new(b))));
        let (s, d1, basis) = match assembled {
            Ok(v) => v,
            Err(Error::SingularSystem(msg)) => {
                underresolved.push(format!("m={m}: quadrature too coarse to normalize the basis ({msg})"));
                continue;
            }
            Err(e) => return Err(e),
        };
        for f in [&s, &d1] {
            if let Some(r) = f.resolution.as_ref().filter(|r| r.underresolved()) {
                underresolved.push(format!(
                    "{:?} m={m}: doubled-quadrature discrepancy {:.3e} > {:.1e}",
                    f.kind, r.discrepancy, r.tolerance
                ));
            }
        }
        let scale = s.matrix.amax();
        rows.push(row(format!("S symmetric, m={m}"), s.asymmetry() / scale, 1e-10));
        rows.push(row(
            format!("S positive definite, m={m}"),
            if s.matrix.clone().cholesky().is_some() { 0.0 } else { 1.0 },
            0.0,
        ));
        rows.push(row(format!("D1 skew, m={m}"), d1.skewness(), 1e-12));
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let u = DVector::from_fn(basis.len(), |_, _| rng.gen_range(-1.0..1.0));
            worst = worst.max(d1.quadratic(&u).abs() / u.norm_squared());
        }
        rows.push(row(format!("<d1 u, u> = 0 (100 random u), m={m}"), worst, 1e-12));

        let grid = quad.volume_grid(l, n, &[m, m])?;
        let mut korn = 0.0f64;
        let homogeneous = Arc::new(basis.filter(|mem| matches!(mem, crate::basis::Member::Modal(_))));
        for _ in 0..2 {
            let c = DVector::from_fn(homogeneous.len(), |_, _| rng.gen_range(-1.0..1.0));
            korn = korn.max(field_norms(&DiscreteField::new(homogeneous.clone(), c)?, &grid).korn_defect());
        }
        rows.push(row(format!("Korn |grad u|^2 = 2|D(u)|^2, m={m}"), korn, 1e-10));

        let mut coupling = 0.0f64;
        for _ in 0..5 {
            let c = DVector::from_fn(basis.len(), |_, _| rng.gen_range(-1.0..1.0));
            let u = DiscreteField::new(basis.clone(), c)?;
            coupling = coupling.max(surface_couplings(&u, &surf).amax());
        }
        rows.push(row(format!("surface integral of (u.n)(u.phi) = 0, m={m}"), coupling, 1e-12));
    }

    if !underresolved.is_empty() {
        return Ok(VerifyReport {
            rows,
            underresolved,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let problem = cfg.base_problem()?;
    let newton = cfg.newton();
    let lam = 1.0;
    let base = solve_base(&problem, lam, None, &newton)?;
    let scale = (lam * base.xi0).max(1.0);
    rows.push(row(
        format!("energy 2|D(v0)|^2 = lambda xi0 at lambda={lam}"),
        base.energy_defect().abs() / scale,
        1e-8,
    ));
    let mut unit = row(
        format!("energy |D(v0)|^2 = lambda xi0 at lambda={lam} (unit factor)"),
        base.unit_energy_defect().abs() / scale,
        1e-8,
    );
    unit.judged = false;
    rows.push(unit);
    let small = 1e-3;
    let stokes = solve_base(&problem, small, None, &newton)?;
    rows.push(row(
        format!("Stokes limit xi0 = lambda/(6pi) at lambda={small}"),
        (stokes.xi0 * 6.0 * PI / small - 1.0).abs(),
        0.02,
    ));

    Ok(VerifyReport {
        rows,
        underresolved,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct BaseOutcome {
    pub branch: Branch,
    pub reused: usize,
    pub computed: usize,
    pub csv: PathBuf,
}

const BRANCH: &str = "branch";

fn load_branch(cfg: &RunConfig, problem: &BaseProblem) -> Result<Option<Branch>> {
    let store = ResultStore::open(&cfg.output)?;
    let Some(rec) = store.get::<Branch>(BRANCH)? else {
        return Ok(None);
    };
    if rec.payload.fingerprint != problem.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: format!("basis {} (L, N) = {:?}", problem.fingerprint(), cfg.resolution.for_mode(0)),
            found: format!("basis {} in {}", rec.payload.fingerprint, cfg.output.display()),
        });
    }
    Ok(Some(rec.payload))
}

fn require_branch(cfg: &RunConfig, problem: &BaseProblem, lo: f64, hi: f64) -> Result<Branch> {
    let hint = |what: &str| {
        Error::MissingBranch(format!(
            "{what} in {}; run `fallsphere base` with the same config and a lambda range covering [{lo}, {hi}] first",
            cfg.output.display()
        ))
    };
    let branch = load_branch(cfg, problem)?.ok_or_else(|| hint("no branch"))?;
    let lams = branch.lambdas();
    let (bmin, bmax) = (lams.iter().cloned().fold(f64::INFINITY, f64::min), lams.iter().cloned().fold(0.0, f64::max));
    if bmin > lo || bmax < hi {
        return Err(hint(&format!("stored branch covers only [{bmin}, {bmax}]")));
    }
    Ok(branch)
}

/// Compute (or resume) the base branch on the configured λ range.
pub fn cmd_base(cfg: &RunConfig) -> Result<BaseOutcome> {
    cfg.validate()?;
    let problem = cfg.base_problem()?;
    let fp = cfg.fingerprint();
    let (branch, reused, computed) = match load_branch(cfg, &problem)? {
        Some(mut b) => {
            let reused = b.points.len();
            b.extend(&problem, cfg.lambda.max, &cfg.lambda.policy(), &cfg.newton())?;
            let computed = b.points.len() - reused;
            (b, reused, computed)
        }
        None => {
            let b = continue_branch(&problem, cfg.lambda.min, cfg.lambda.max, &cfg.lambda.policy(), &cfg.newton())?;
            let n = b.points.len();
            (b, 0, n)
        }
    };
    ResultStore::open(&cfg.output)?.put(BRANCH, "branch", &fp, &branch)?;
    let rows: Vec<Vec<String>> = branch
        .points
        .iter()
        .map(|p| vec![fmt_f64(p.lambda), fmt_f64(p.xi0), fmt_f64(p.dissipation), fmt_f64(p.residual_norm)])
        .collect();
    let csv = cfg.output.join("base.csv");
    write_csv(&csv, &fp, &["lambda", "xi0", "dissipation", "residual"], &rows)?;
    Ok(BaseOutcome {
        branch,
        reused,
        computed,
        csv,
    })
}

fn physical_family(cfg: &RunConfig, m: u32, branch: Option<&Branch>) -> Result<PhysicalFamily> {
    let problem = cfg.base_problem()?;
    let (l, n) = cfg.resolution.for_mode(m);
    let ops = ModeOperators::new(m, cfg.critical.parity, l, n, &cfg.quadrature)?;
    let fam = PhysicalFamily::new(problem, ops, cfg.newton());
    match branch {
        Some(b) => fam.with_branch(b),
        None => Ok(fam),
    }
}

/// Leading eigenvalues along the stored branch for every configured mode.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let problem = cfg.base_problem()?;
    let branch = require_branch(cfg, &problem, cfg.lambda.min, cfg.lambda.max)?;
    let fp = cfg.fingerprint();
    let opts = cfg.scan_options();
    let mut paths = Vec::new();
    for &m in &cfg.modes {
        let fam = physical_family(cfg, m, Some(&branch))?;
        let mut rows = Vec::new();
        for lam in branch
            .lambdas()
            .into_iter()
            .filter(|&l| l > 0.0 && l >= cfg.lambda.min && l <= cfg.lambda.max)
        {
            let bundle = fam.bundle(lam)?;
            let k = opts.count.min(bundle.dim());
            for p in leading_eigs(&bundle, num_complex::Complex64::new(opts.shift, 0.0), k, &opts.eig)? {
                rows.push(vec![
                    fmt_f64(lam),
                    m.to_string(),
                    fmt_f64(p.mu.re),
                    fmt_f64(p.mu.im),
                    fmt_f64(p.gap),
                    fmt_f64(p.residual),
                ]);
            }
        }
        let path = cfg.output.join(format!("spectrum-m{m}.csv"));
        write_csv(&path, &fp, &["lambda", "m", "re_mu", "im_mu", "gap", "residual"], &rows)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Debug)]
pub struct CriticalRun {
    pub report: BifurcationReport,
    pub files: Vec<PathBuf>,
}

/// Exit status for a finished critical-point run.
pub fn exit_code(status: BifurcationStatus) -> i32 {
    match status {
        BifurcationStatus::Bifurcation | BifurcationStatus::NoCriticalPoint => 0,
        BifurcationStatus::SimplicityNotCertified => 3,
        BifurcationStatus::NotTransversal => 4,
        BifurcationStatus::ComplexCrossing => 5,
        BifurcationStatus::NotResolved => 6,
    }
}

fn bracket(cfg: &RunConfig) -> (f64, f64) {
    let hi = cfg.lambda.max;
    (cfg.lambda.min.max(1e-3 * hi), hi)
}

/// Closed-form family on the Gram matrix of mode `m`.
pub fn manufactured_family(cfg: &RunConfig, m: u32) -> Result<ManufacturedFamily> {
    let (l, n) = cfg.resolution.for_mode(m);
    let basis = build_basis(m, l, n, &cfg.quadrature)?.block(cfg.critical.parity);
    let a = assemble_S(&basis, &cfg.quadrature)?.matrix * crate::forms::STRESS_FACTOR;
    Ok(ManufacturedFamily::crossing(a, cfg.critical.lambda_star).with_spread(cfg.critical.spread))
}

fn slice_rows(cfg: &RunConfig, fam: &PhysicalFamily, point: &CriticalPoint) -> Result<Vec<Vec<String>>> {
    let w = DiscreteField::new(fam.ops.basis.clone(), real_eigenvector(&point.pair))?;
    let [nr, nt] = cfg.critical.slice_points;
    let mut rows = Vec::with_capacity(nr * nt);
    for i in 0..nr {
        let r = 1.0 + (cfg.critical.slice_radius - 1.0) * i as f64 / (nr - 1) as f64;
        for j in 0..nt {
            let th = PI * j as f64 / (nt - 1) as f64;
            let x = [r * th.cos(), r * th.sin(), 0.0];
            let u = w.sample(&x).value;
            rows.push([x[0], x[1], x[2], u[0], u[1], u[2]].iter().map(|v| fmt_f64(*v)).collect());
        }
    }
    Ok(rows)
}

/// Critical-point search for mode `m`.
pub fn cmd_critical(cfg: &RunConfig, m: u32, manufactured: bool) -> Result<CriticalRun> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let opts = cfg.scan_options();
    let br = bracket(cfg);
    let mut files = Vec::new();
    let (report, slice) = if manufactured {
        let fam = manufactured_family(cfg, m)?;
        let (mut report, _) = analyze(&fam, br, cfg.critical.samples, &opts)?;
        report.notes.push(format!("closed-form family with lambda* = {}", cfg.critical.lambda_star));
        (report, None)
    } else {
        let problem = cfg.base_problem()?;
        let branch = require_branch(cfg, &problem, br.0.min(cfg.lambda.min), br.1)?;
        let fam = physical_family(cfg, m, Some(&branch))?;
        let (mut report, point) = analyze(&fam, br, cfg.critical.samples, &opts)?;
        let mut slice = None;
        if let Some(point) = point {
            if m > 0 {
                let mut partner = cfg.clone();
                partner.critical.parity = match cfg.critical.parity {
                    Parity::Even => Parity::Odd,
                    Parity::Odd => Parity::Even,
                };
                block_degeneracy(&mut report, &physical_family(&partner, m, Some(&branch))?, &point, &opts)?;
            }
            if cfg.critical.refine && cfg.critical.refine_factor > 1 {
                let fine_cfg = cfg.refined(cfg.critical.refine_factor);
                let fine = physical_family(&fine_cfg, m, None)?;
                let l0 = point.lambda0;
                let narrow = ((l0 * 0.8).max(br.0), (l0 * 1.2).min(br.1.max(l0 * 1.2)));
                let refined = match find_critical(&fine, narrow, cfg.critical.samples, &opts)? {
                    (_, CriticalOutcome::Crossing(p)) => Some(p.lambda0),
                    (_, CriticalOutcome::NoCrossing { .. }) => None,
                };
                apply_refinement(&mut report, refined);
            }
            slice = Some(slice_rows(cfg, &fam, &point)?);
        }
        (report, slice)
    };
    let tag = if manufactured { format!("m{m}-manufactured") } else { format!("m{m}") };
    let curve: Vec<Vec<String>> = report
        .mu_curve
        .iter()
        .map(|p| vec![fmt_f64(p.lambda), fmt_f64(p.mu.re), fmt_f64(p.mu.im), fmt_f64(p.gap)])
        .collect();
    let path = cfg.output.join(format!("mu-curve-{tag}.csv"));
    write_csv(&path, &fp, &["lambda", "re_mu", "im_mu", "gap"], &curve)?;
    files.push(path);
    if let Some(rows) = slice {
        let path = cfg.output.join(format!("eigenfunction-{tag}.csv"));
        write_csv(&path, &fp, &["x1", "x2", "x3", "u1", "u2", "u3"], &rows)?;
        files.push(path);
    }
    let path = cfg.output.join(format!("critical-{tag}.toml"));
    write_report(&path, &fp, &report)?;
    files.push(path);
    ResultStore::open(&cfg.output)?.put(&format!("critical-{tag}"), "report", &fp, &report)?;
    Ok(CriticalRun { report, files })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetryRun {
    pub mode: u32,
    pub lambda0: Option<f64>,
    pub status: BifurcationStatus,
    pub symmetry: Option<SymmetryBreaking>,
}

/// Symmetry-breaking functional at the critical point of mode `m` (physical family).
pub fn cmd_symmetry(cfg: &RunConfig, m: u32) -> Result<(SymmetryRun, PathBuf)> {
    cfg.validate()?;
    let problem = cfg.base_problem()?;
    let br = bracket(cfg);
    let branch = require_branch(cfg, &problem, br.0.min(cfg.lambda.min), br.1)?;
    let fam = physical_family(cfg, m, Some(&branch))?;
    let (report, _) = analyze(&fam, br, cfg.critical.samples, &cfg.scan_options())?;
    let run = SymmetryRun {
        mode: m,
        lambda0: report.lambda0,
        status: report.status,
        symmetry: report.symmetry,
    };
    let path = cfg.output.join(format!("symmetry-m{m}.toml"));
    write_report(&path, &cfg.fingerprint(), &run)?;
    Ok((run, path))
}

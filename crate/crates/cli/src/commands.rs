//! `run`, `verify`, `fit` and `report`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ksflow::analysis::{
    constant_suite, dynamics_oracle_suite, exact_inequality_suite, fit_decay, identity_suite, scattering_extract,
    verify_gamma_domination, verify_pointwise_rho_bound, verify_xyrc, xyrc_report, CheckKind, DecayFit,
    InequalityReport, Sample, ScatteringReport, SuiteConfig, MIXED_EXPONENTS, RHO_J_CONSTANT, RHO_J_CONSTANT_PROVED,
};
use ksflow::dynamics::{apriori_monitor, evolve, EvolutionState, Event, NormSeries, Snapshot};
use ksflow::nonlinearity::AdmissibilityReport;
use ksflow::random::{gaussian_mixture, rng_from_seed};

use crate::config::ExperimentConfig;
use crate::error::{CliError, EXIT_OK, EXIT_VIOLATION};
use crate::series::{format_f64, write_manifest, write_records, SeriesWriter, Table};
use crate::snapshot::SnapshotFile;

pub const SERIES_FILE: &str = "series.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const RUN_MANIFEST: &str = "run.manifest";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Clone, Debug, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub exploratory: bool,
}

impl Common {
    fn load_config(&self) -> Result<Option<ExperimentConfig>, CliError> {
        self.config.as_deref().map(ExperimentConfig::load).transpose()
    }

    fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.map(|c| c.output.dir.clone()))
            .unwrap_or_else(|| PathBuf::from("ksflow-out"))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("cannot create {}", dir.display()), e))
}

fn admissibility_text(r: &AdmissibilityReport) -> String {
    let opt = |v: Option<bool>| v.map_or("n/a".to_string(), |b| b.to_string());
    let mut s = format!(
        "admissible = {} (d = {}; si2 potential {}, si2 power {}, g_condbeta {}, pqcond1 {}, pqcond {}, convolution omitted {})",
        r.admissible,
        r.dim,
        opt(r.si2_potential),
        opt(r.si2_power),
        opt(r.g_condbeta),
        opt(r.pqcond1),
        opt(r.pqcond),
        r.convolution_omitted
    );
    if let Some(w) = r.witness {
        s.push_str(&format!("; witness p = {}, q = {}, q' = {}", w.p, w.q, w.q_prime));
    }
    for w in &r.warnings {
        s.push_str(&format!("; {w}"));
    }
    s
}

pub fn cmd_run(common: &Common) -> Result<i32, CliError> {
    let mut cfg = common
        .load_config()?
        .ok_or_else(|| CliError::config("run needs --config"))?;
    if let Some(seed) = common.seed {
        cfg.initial.seed = seed;
    }
    if let Some(samples) = common.samples {
        cfg.suites.samples = samples;
    }
    cfg.interaction.exploratory |= common.exploratory;
    cfg.validate()?;
    let interaction = cfg.interaction()?;
    let admissibility = cfg.admissibility()?;
    let range = interaction.classify_range(cfg.grid.dim);
    if !admissibility.admissible && !cfg.interaction.exploratory {
        return Err(CliError::config(format!(
            "inadmissible interaction without the exploratory tag: {}",
            admissibility_text(&admissibility)
        )));
    }
    let out = common.out_dir(Some(&cfg));
    create_dir(&out.join(SNAPSHOT_DIR))?;
    fs::write(out.join(CONFIG_COPY), cfg.to_toml()).map_err(|e| CliError::io("cannot write config copy", e))?;
    let hash = cfg.hash();
    let grid = cfg.grid()?;
    let initial = match &cfg.initial.snapshot {
        Some(path) => {
            let snap = SnapshotFile::read(path)?;
            if !snap.kappa.grid().same_as(&grid) {
                return Err(CliError::config(format!("snapshot {} was taken on a different grid", path.display())));
            }
            EvolutionState::new(snap.kappa, snap.manifest.time)
        }
        None => {
            let mut rng = rng_from_seed(cfg.initial.seed);
            EvolutionState::new(gaussian_mixture(&grid, &cfg.mixture(), &mut rng)?, 0.0)
        }
    };
    let schedule = cfg.schedule()?;
    let monitors = cfg.monitors();
    eprintln!(
        "ksflow run: d = {}, n = {}, L = {}, rank {}, {range}, {}",
        cfg.grid.dim,
        cfg.grid.n,
        cfg.grid.half_length,
        initial.kappa.rank(),
        admissibility_text(&admissibility)
    );

    let start = Instant::now();
    let mut writer = SeriesWriter::create(&out.join(SERIES_FILE))?;
    let seed = cfg.initial.seed;
    let snap_dir = out.join(SNAPSHOT_DIR);
    let mut sink_error: Option<CliError> = None;
    let result = evolve(initial, &interaction, &schedule, &monitors, &mut |event| {
        let r = match event {
            Event::Row(row) => writer.push(row),
            Event::Snapshot(s) => SnapshotFile::new(s.kappa.clone(), s.t, seed, &hash).write(&snap_dir.join(SnapshotFile::file_name(s.t))),
        };
        r.map_err(|e| {
            let msg = e.message.clone();
            sink_error = Some(e);
            ksflow::Error::InvalidParameter(msg)
        })
    });
    let elapsed = start.elapsed().as_secs_f64();
    let mut manifest = vec![
        ("format_version", crate::snapshot::FORMAT_VERSION.to_string()),
        ("config_hash", hash.clone()),
        ("seed", seed.to_string()),
        ("exploratory", cfg.interaction.exploratory.to_string()),
        ("admissible", admissibility.admissible.to_string()),
        ("range_class", range.to_string()),
        ("dt", cfg.schedule.dt.to_string()),
        ("runtime_seconds", format!("{elapsed:.3}")),
        ("threads", threads().to_string()),
    ];
    let traj = match result {
        Ok(t) => t,
        Err(e) => {
            let err = sink_error.unwrap_or_else(|| CliError::from(e));
            manifest.push(("status", format!("failed (exit {}): {}", err.code, err.message)));
            write_manifest(&out.join(RUN_MANIFEST), &manifest)?;
            return Err(err);
        }
    };
    manifest.push(("rows", traj.series.len().to_string()));
    manifest.push(("snapshots", traj.snapshots.len().to_string()));

    let s = &cfg.suites;
    if s.decay {
        let fits: Vec<(String, DecayFit)> = ["gamma_inf", "L2r_Linf_c"]
            .iter()
            .map(|c| series_fit(&traj.series, c, s.fit_t0, s.fit_t1).map(|f| (c.to_string(), f)))
            .collect::<Result<_, _>>()?;
        write_fits(&out.join("fits.csv"), &fits)?;
        for (c, f) in &fits {
            eprintln!("fit {c}: nu = {:.6} [{:.6}, {:.6}], R2 = {:.6}", f.nu, f.band.0, f.band.1, f.r_squared);
        }
    }
    if s.apriori {
        let r = apriori_monitor(&traj.series, 1, s.apriori_ref, &interaction)?;
        write_records(
            &out.join("apriori.csv"),
            &["b", "s_ref", "w_ref", "sup_ratio", "within_bound", "smallness", "samples"],
            &[vec![
                "1".into(),
                format_f64(r.s_ref),
                format_f64(r.w_ref),
                format_f64(r.sup_ratio),
                r.within_bound.to_string(),
                format_f64(r.smallness),
                r.samples.to_string(),
            ]],
        )?;
        eprintln!("a priori: sup W1(t)/W1({}) = {:.6}, within bound {}", r.s_ref, r.sup_ratio, r.within_bound);
    }
    if s.scattering {
        let r = scattering_extract(&traj.snapshots)?;
        write_scattering(&out.join("scattering.csv"), &r)?;
        if r.non_decreasing_tail {
            eprintln!("scattering: Cauchy differences do not decrease in the tail (flagged)");
        }
    }
    if s.inequalities {
        let suite = SuiteConfig { seed, samples: s.samples, ..Default::default() };
        let mut reports = exact_inequality_suite(&suite)?;
        reports.extend(constant_suite(&suite)?);
        write_reports(&out.join("inequalities.csv"), &reports)?;
        for r in &reports {
            eprintln!("{r}");
        }
    }
    manifest.push(("status", "ok".into()));
    write_manifest(&out.join(RUN_MANIFEST), &manifest)?;
    println!("{}", out.join(SERIES_FILE).display());
    Ok(EXIT_OK)
}

fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn series_fit(series: &NormSeries, column: &str, t0: f64, t1: f64) -> Result<DecayFit, CliError> {
    let values = series
        .column(column)
        .ok_or_else(|| CliError::config(format!("missing column {column}")))?;
    Ok(fit_decay(&series.times(), &values, t0, t1)?)
}

const FIT_HEADER: [&str; 10] = ["column", "t0", "t1", "nu", "band_lo", "band_hi", "std_error", "r_squared", "prefactor", "samples"];

fn fit_row(column: &str, f: &DecayFit) -> Vec<String> {
    vec![
        column.to_string(),
        format_f64(f.t0),
        format_f64(f.t1),
        format_f64(f.nu),
        format_f64(f.band.0),
        format_f64(f.band.1),
        format_f64(f.std_error),
        format_f64(f.r_squared),
        format_f64(f.prefactor),
        f.samples.to_string(),
    ]
}

fn write_fits(path: &Path, fits: &[(String, DecayFit)]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = fits.iter().map(|(c, f)| fit_row(c, f)).collect();
    write_records(path, &FIT_HEADER, &rows)
}

fn write_scattering(path: &Path, r: &ScatteringReport) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (t, d) in &r.cauchy {
        rows.push(vec!["cauchy".into(), format_f64(*t), format_f64(*d)]);
    }
    for (t, d) in &r.residuals {
        rows.push(vec!["residual".into(), format_f64(*t), format_f64(*d)]);
    }
    rows.push(vec!["kappa_inf_norm".into(), format_f64(r.t_max), format_f64(r.kappa_inf.hs_norm())]);
    rows.push(vec!["non_decreasing_tail".into(), format_f64(r.t_max), (r.non_decreasing_tail as u8).to_string()]);
    write_records(path, &["kind", "t", "value"], &rows)
}

fn write_reports(path: &Path, reports: &[InequalityReport]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.kind.as_str().to_string(),
                r.samples.len().to_string(),
                r.skipped.to_string(),
                format_f64(r.max_ratio),
                r.refinement_factor.map(format_f64).unwrap_or_default(),
                r.violations.len().to_string(),
                r.passed().to_string(),
            ]
        })
        .collect();
    write_records(
        path,
        &["name", "kind", "samples", "skipped", "max_ratio", "refinement_factor", "violations", "passed"],
        &rows,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Identities,
    Inequalities,
    DynamicsOracles,
}

impl Suite {
    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Inequalities => "inequalities",
            Suite::DynamicsOracles => "dynamics-oracles",
        }
    }
}

/// Checks on a stored operator, at the time recorded in its manifest.
fn snapshot_reports(snap: &SnapshotFile) -> Result<Vec<InequalityReport>, CliError> {
    let k = &snap.kappa;
    let t = snap.manifest.time;
    let one = |name: &str, s: Option<Sample>| InequalityReport::from_samples(format!("snapshot_{name}"), CheckKind::Exact, ksflow::analysis::EXACT_SLACK, vec![s]);
    let mut out = Vec::new();
    for &s in &MIXED_EXPONENTS {
        out.push(one(&format!("xyrc_s{s}"), verify_xyrc(k, s)?));
        out.push(one(&format!("gamma_domination_s{s}"), verify_gamma_domination(k, s)?));
    }
    for c in [RHO_J_CONSTANT, RHO_J_CONSTANT_PROVED] {
        out.push(one(&format!("rho_j_pointwise(C={c})"), verify_pointwise_rho_bound(k, t, c)?));
    }
    Ok(out)
}

pub fn cmd_verify(common: &Common, suite: Suite, snapshot: Option<&Path>) -> Result<i32, CliError> {
    let cfg = common.load_config()?;
    let seed = common.seed.or(cfg.as_ref().map(|c| c.initial.seed)).unwrap_or(0);
    let samples = common.samples.or(cfg.as_ref().map(|c| c.suites.samples)).unwrap_or(100);
    if samples == 0 {
        return Err(CliError::config("--samples must be positive"));
    }
    // read before the suites so a corrupted file fails fast
    let snap = snapshot.map(SnapshotFile::read).transpose()?;
    let sc = SuiteConfig { seed, samples, ..Default::default() };
    let mut reports = match suite {
        Suite::Identities => {
            let mut r = identity_suite(&sc)?;
            r.push(xyrc_report(&sc)?);
            r
        }
        Suite::Inequalities => {
            let mut r = exact_inequality_suite(&sc)?;
            r.extend(constant_suite(&sc)?);
            r
        }
        Suite::DynamicsOracles => dynamics_oracle_suite(seed)?,
    };
    if let Some(s) = &snap {
        reports.extend(snapshot_reports(s)?);
    }
    let out = common.out_dir(cfg.as_ref());
    create_dir(&out)?;
    write_reports(&out.join(format!("verify_{}.csv", suite.as_str())), &reports)?;
    let mut violated = false;
    for r in &reports {
        println!("{r}");
        violated |= r.kind != CheckKind::UpToConstant && !r.violations.is_empty();
    }
    Ok(if violated { EXIT_VIOLATION } else { EXIT_OK })
}

pub fn cmd_fit(common: &Common, series: &Path, column: &str, t0: f64, t1: f64) -> Result<i32, CliError> {
    let table = Table::read(series)?;
    let times = table.column("t")?;
    let values = table.column(column)?;
    let fit = fit_decay(times, values, t0, t1)?;
    let row = fit_row(column, &fit);
    println!("{}", FIT_HEADER.join(","));
    println!("{}", row.join(","));
    if let Some(dir) = &common.out {
        create_dir(dir)?;
        write_fits(&dir.join(format!("fit_{column}.csv")), &[(column.to_string(), fit)])?;
    }
    Ok(EXIT_OK)
}

fn read_manifest(path: &Path) -> Vec<(String, String)> {
    fs::read_to_string(path)
        .map(|text| {
            text.lines()
                .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
                .collect()
        })
        .unwrap_or_default()
}

/// Summary of a finished run directory, printed and written to `report.txt`.
pub fn cmd_report(common: &Common) -> Result<i32, CliError> {
    let cfg = common.load_config()?;
    let dir = common.out_dir(cfg.as_ref());
    let cfg = match cfg {
        Some(c) => Some(c),
        None => {
            let copy = dir.join(CONFIG_COPY);
            copy.exists().then(|| ExperimentConfig::load(&copy)).transpose()?
        }
    };
    let table = Table::read(&dir.join(SERIES_FILE))?;
    let t = table.column("t")?;
    if t.is_empty() {
        return Err(CliError::config("series has no rows"));
    }
    let mut lines = Vec::new();
    for (k, v) in read_manifest(&dir.join(RUN_MANIFEST)) {
        lines.push(format!("{k}: {v}"));
    }
    lines.push(format!("rows: {} over t in [{}, {}]", t.len(), t[0], t[t.len() - 1]));
    let drift = |name: &str| -> Result<f64, CliError> {
        let c = table.column(name)?;
        let scale = c[0].abs().max(f64::MIN_POSITIVE);
        Ok(c.iter().map(|v| (v - c[0]).abs()).fold(0.0, f64::max) / scale)
    };
    lines.push(format!("max relative drift: trace {:.3e}, energy {:.3e}", drift("trace")?, drift("energy")?));
    for name in ["boundary_mass", "commut_residual", "scat_residual"] {
        let c = table.column(name)?;
        lines.push(format!("max {name}: {:.3e}", c.iter().copied().fold(0.0, f64::max)));
    }
    let (t0, t1) = cfg.as_ref().map_or((5.0, 40.0), |c| (c.suites.fit_t0, c.suites.fit_t1));
    for name in ["gamma_inf", "L2r_Linf_c"] {
        match fit_decay(t, table.column(name)?, t0, t1) {
            Ok(f) => lines.push(format!(
                "fit {name} on [{t0}, {t1}]: nu = {:.6} [{:.6}, {:.6}], R2 = {:.6}",
                f.nu, f.band.0, f.band.1, f.r_squared
            )),
            Err(e) => lines.push(format!("fit {name} on [{t0}, {t1}]: skipped ({e})")),
        }
    }
    let snaps = read_snapshots(&dir.join(SNAPSHOT_DIR))?;
    lines.push(format!("snapshots: {}", snaps.len()));
    if snaps.len() >= 2 {
        match scattering_extract(&snaps) {
            Ok(r) => {
                let cauchy: Vec<String> = r.cauchy.iter().map(|(t, d)| format!("{t}: {d:.3e}")).collect();
                lines.push(format!(
                    "scattering: cauchy [{}], |k_inf| = {:.6}, non-decreasing tail {}",
                    cauchy.join(", "),
                    r.kappa_inf.hs_norm(),
                    r.non_decreasing_tail
                ));
            }
            Err(e) => lines.push(format!("scattering: skipped ({e})")),
        }
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    fs::write(dir.join("report.txt"), &text).map_err(|e| CliError::io("cannot write report", e))?;
    Ok(EXIT_OK)
}

fn read_snapshots(dir: &Path) -> Result<Vec<Snapshot>, CliError> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(Vec::new());
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ksnap"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let s = SnapshotFile::read(p)?;
            Ok(Snapshot { t: s.manifest.time, kappa: s.kappa })
        })
        .collect()
}
